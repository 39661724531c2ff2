#pragma once

// Executable network built from a NetworkSpec.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rdl/archspec.hpp"
#include "rdl/checkpoint.hpp"
#include "rdl/ops.hpp"

namespace rdl::tg {

template <typename T>
class Network {
 public:
  /// Throws InvalidSpec when validate(spec) reports violations.
  /// Conv weights ~ N(0, 2 / (n k^2)), norm scale 1 and shift 0, classifier
  /// weight and bias ~ U(-1/sqrt(in), 1/sqrt(in)).
  Network(arch::NetworkSpec spec, std::uint64_t seed);

  Network(const Network &) = delete;
  Network &operator=(const Network &) = delete;
  Network(Network &&) noexcept = default;
  Network &operator=(Network &&) noexcept = default;

  const arch::NetworkSpec &spec() const { return spec_; }

  /// x is [N, C, H, W]; returns logits [N, classes]. `features`, when given,
  /// receives the pooled classifier input. `rng` drives dropout and may be
  /// null in eval mode.
  Var<T> forward(const Tensor<T> &x, Mode mode, Rng *rng, Var<T> *features = nullptr);

  std::vector<Parameter<T>> &parameters() { return params_; }
  const std::vector<Parameter<T>> &parameters() const { return params_; }
  std::int64_t parameter_count() const;

  void zero_grad();

  /// Parameters then running statistics, in spec order.
  Checkpoint state() const;
  /// Throws CheckpointMismatch on a missing, extra or misshaped entry.
  void load_state(const Checkpoint &ckpt);

 private:
  struct Slot {
    int weight = -1;
    int gamma = -1;
    int beta = -1;
    int stats = -1;
  };

  void build_ops(const std::vector<arch::LayerOp> &ops, const std::string &prefix, std::vector<Slot> &slots,
                 Rng &rng);
  int add_conv(const arch::ConvLayerSpec &c, const std::string &name, Rng &rng);
  Var<T> run_ops(const std::vector<arch::LayerOp> &ops, const std::vector<Slot> &slots, std::size_t begin,
                 Var<T> h, Mode mode, Rng *rng);

  arch::NetworkSpec spec_;
  std::vector<Parameter<T>> params_;
  std::vector<std::string> stats_names_;
  std::vector<RunningStats<T>> stats_;

  std::vector<Slot> stem_;
  std::vector<std::vector<Slot>> blocks_;
  std::vector<int> projections_;
  std::vector<Slot> head_;
  int fc_weight_ = -1;
  int fc_bias_ = -1;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace rdl::tg
