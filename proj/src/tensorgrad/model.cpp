#include "rdl/model.hpp"

#include <cmath>
#include <unordered_map>

#include "rdl/errors.hpp"

namespace rdl::tg {

using arch::ActMarker;
using arch::ConvLayerSpec;
using arch::DropoutMarker;
using arch::NormMarker;

template <typename T>
Network<T>::Network(arch::NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  const auto violations = arch::validate(spec_);
  if (!violations.empty()) {
    const auto &v = violations.front();
    throw InvalidSpec(v.rule + ": " + v.message + " (" + std::to_string(violations.size()) + " violations)");
  }
  Rng rng(seed);
  build_ops(spec_.stem, "stem", stem_, rng);
  blocks_.resize(spec_.blocks.size());
  projections_.assign(spec_.blocks.size(), -1);
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto &b = spec_.blocks[i];
    const std::string prefix = "blocks." + std::to_string(i);
    build_ops(b.layers, prefix + ".layers", blocks_[i], rng);
    if (b.projection) projections_[i] = add_conv(*b.projection, prefix + ".shortcut.weight", rng);
  }
  build_ops(spec_.head, "head", head_, rng);

  const int in = spec_.classifier_in;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  fc_weight_ = static_cast<int>(params_.size());
  params_.push_back({"classifier.weight", Var<T>::leaf(randu<T>({spec_.num_classes, in}, rng, -bound, bound)), true});
  fc_bias_ = static_cast<int>(params_.size());
  params_.push_back({"classifier.bias", Var<T>::leaf(randu<T>({spec_.num_classes}, rng, -bound, bound)), false});
}

template <typename T>
int Network<T>::add_conv(const ConvLayerSpec &c, const std::string &name, Rng &rng) {
  const double stddev = std::sqrt(2.0 / (static_cast<double>(c.out_channels) * c.kernel * c.kernel));
  const Shape shape{c.out_channels, c.in_channels / c.groups, c.kernel, c.kernel};
  params_.push_back({name, Var<T>::leaf(randn<T>(shape, rng, stddev)), true});
  return static_cast<int>(params_.size()) - 1;
}

template <typename T>
void Network<T>::build_ops(const std::vector<arch::LayerOp> &ops, const std::string &prefix,
                           std::vector<Slot> &slots, Rng &rng) {
  slots.assign(ops.size(), Slot{});
  for (std::size_t j = 0; j < ops.size(); ++j) {
    const std::string base = prefix + "." + std::to_string(j);
    if (const auto *c = std::get_if<ConvLayerSpec>(&ops[j])) {
      slots[j].weight = add_conv(*c, base + ".weight", rng);
    } else if (const auto *n = std::get_if<NormMarker>(&ops[j])) {
      slots[j].gamma = static_cast<int>(params_.size());
      params_.push_back({base + ".gamma", Var<T>::leaf(Tensor<T>({n->channels}, T(1))), false});
      slots[j].beta = static_cast<int>(params_.size());
      params_.push_back({base + ".beta", Var<T>::leaf(Tensor<T>({n->channels}, T(0))), false});
      slots[j].stats = static_cast<int>(stats_.size());
      stats_.emplace_back(n->channels);
      stats_names_.push_back(base);
    }
  }
}

template <typename T>
Var<T> Network<T>::run_ops(const std::vector<arch::LayerOp> &ops, const std::vector<Slot> &slots,
                           std::size_t begin, Var<T> h, Mode mode, Rng *rng) {
  for (std::size_t j = begin; j < ops.size(); ++j) {
    const Slot &s = slots[j];
    if (const auto *c = std::get_if<ConvLayerSpec>(&ops[j])) {
      h = conv2d(h, params_[s.weight].var, ConvParams{c->stride, c->padding, c->groups});
    } else if (std::holds_alternative<NormMarker>(ops[j])) {
      h = batch_norm(h, params_[s.gamma].var, params_[s.beta].var, stats_[s.stats], mode);
    } else if (std::holds_alternative<ActMarker>(ops[j])) {
      h = relu(h);
    } else if (const auto *d = std::get_if<DropoutMarker>(&ops[j])) {
      if (mode == Mode::Train && d->p > 0.0) {
        if (!rng) throw ConfigError("dropout in train mode needs a random source");
        h = dropout(h, d->p, *rng, mode);
      }
    }
  }
  return h;
}

template <typename T>
Var<T> Network<T>::forward(const Tensor<T> &x, Mode mode, Rng *rng, Var<T> *features) {
  if (x.rank() != 4 || x.dim(1) != spec_.in_channels) {
    throw ShapeMismatch("network input must be [N, " + std::to_string(spec_.in_channels) + ", H, W], got " +
                        shape_str(x.shape()));
  }
  Var<T> h = run_ops(spec_.stem, stem_, 0, Var<T>::constant(x), mode, rng);
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto &b = spec_.blocks[i];
    if (b.family == arch::BlockFamily::Mv2Inverted) {
      Var<T> main = run_ops(b.layers, blocks_[i], 0, h, mode, rng);
      h = b.shortcut == arch::Shortcut::Identity ? add(main, h) : main;
      continue;
    }
    // Pre-activation pair feeds both the body and a projection shortcut.
    Var<T> pre = run_ops({b.layers.begin(), b.layers.begin() + 2}, blocks_[i], 0, h, mode, rng);
    Var<T> main = run_ops(b.layers, blocks_[i], 2, pre, mode, rng);
    if (b.shortcut == arch::Shortcut::Projection1x1) {
      const auto &p = *b.projection;
      main = add(main, conv2d(pre, params_[projections_[i]].var, ConvParams{p.stride, p.padding, p.groups}));
    } else if (b.shortcut == arch::Shortcut::Identity) {
      main = add(main, h);
    }
    h = main;
  }
  h = run_ops(spec_.head, head_, 0, h, mode, rng);
  Var<T> pooled = global_avg_pool(h);
  if (features) *features = pooled;
  return linear(pooled, params_[fc_weight_].var, params_[fc_bias_].var);
}

template <typename T>
std::int64_t Network<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto &p : params_) n += static_cast<std::int64_t>(p.var.value().numel());
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto &p : params_) p.var.zero_grad();
}

template <typename T>
Checkpoint Network<T>::state() const {
  Checkpoint ckpt;
  for (const auto &p : params_) ckpt.entries.push_back({p.name, p.var.value()});
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    ckpt.entries.push_back({stats_names_[i] + ".running_mean", stats_[i].mean});
    ckpt.entries.push_back({stats_names_[i] + ".running_var", stats_[i].var});
  }
  return ckpt;
}

template <typename T>
void Network<T>::load_state(const Checkpoint &ckpt) {
  std::unordered_map<std::string, const CheckpointEntry *> by_name;
  for (const auto &e : ckpt.entries) by_name[e.name] = &e;
  std::size_t used = 0;
  auto fetch = [&](const std::string &name, const Shape &shape) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointMismatch("checkpoint lacks '" + name + "'");
    Tensor<T> t = entry_as<T>(*it->second);
    if (t.shape() != shape) {
      throw CheckpointMismatch("'" + name + "' has shape " + shape_str(t.shape()) + ", spec needs " +
                               shape_str(shape));
    }
    ++used;
    return t;
  };
  // Validate everything before mutating anything.
  std::vector<Tensor<T>> values;
  for (const auto &p : params_) values.push_back(fetch(p.name, p.var.shape()));
  std::vector<Tensor<T>> means, vars;
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    means.push_back(fetch(stats_names_[i] + ".running_mean", stats_[i].mean.shape()));
    vars.push_back(fetch(stats_names_[i] + ".running_var", stats_[i].var.shape()));
  }
  if (used != ckpt.entries.size()) {
    throw CheckpointMismatch("checkpoint has " + std::to_string(ckpt.entries.size() - used) +
                             " entries the spec does not define");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].var.mutable_value() = std::move(values[i]);
  for (std::size_t i = 0; i < stats_.size(); ++i) {
    stats_[i].mean = std::move(means[i]);
    stats_[i].var = std::move(vars[i]);
  }
}

template class Network<float>;
template class Network<double>;

}  // namespace rdl::tg
