#pragma once

// Closed-form parameter and FLOP (multiply-accumulate) counting.

#include <cstdint>
#include <string>
#include <vector>

#include "rdl/archspec.hpp"

namespace rdl::cost {

/// What network_cost counts besides conv weights and conv MACs.
struct Conventions {
  bool norm_params = true;       // 2 affine parameters per normalized channel
  bool classifier = true;        // classifier weights + bias, and its MACs
  bool norm_flops = false;       // 2 ops per normalized element
  bool activation_flops = false; // 1 op per activated element

  bool operator==(const Conventions &) const = default;
};

struct LayerCost {
  std::int64_t params = 0;
  std::int64_t flops = 0;
  bool operator==(const LayerCost &) const = default;
};

/// Standard: n*m*k^2 params and n*m*k^2*f^2 MACs; grouped layers divide both
/// by the group count; f is the side of the output map.
LayerCost layer_cost(const arch::ConvLayerSpec &layer, int f);

enum class EntryKind { Conv, Norm, Activation, Classifier };

struct LayerEntry {
  std::string id;  // e.g. "blocks.3.layers.2", "blocks.3.shortcut", "classifier"
  EntryKind kind = EntryKind::Conv;
  bool shortcut = false;
  std::int64_t params = 0;
  std::int64_t flops = 0;
  int fmap = 0;

  bool operator==(const LayerEntry &) const = default;
};

struct CostReport {
  std::vector<LayerEntry> per_layer;
  LayerCost totals;
  LayerCost residual_overhead;
  Conventions conventions;

  bool operator==(const CostReport &) const = default;
};

struct InputShape {
  int channels = 3;
  int height = 32;
  int width = 32;

  /// Parses "CxHxW".
  static InputShape parse(const std::string &text);
  std::string to_string() const;
};

CostReport network_cost(const arch::NetworkSpec &spec, const InputShape &input,
                        const Conventions &conventions = {});

/// Which network a cost table (or an experiment) is about, minus the policy
/// and residual switches.
struct ArchDescriptor {
  arch::Family family = arch::Family::WRN;
  int depth = 22;
  int widen = 2;
  int num_classes = 100;
  double dropout_p = 0.3;

  std::string label() const;  // "WRN-22x2", "ResNet-18", "MobileNet-V2"
};

arch::NetworkSpec build_network(const ArchDescriptor &arch, const arch::GroupingPolicy &policy,
                                bool residual);

struct CostTable {
  ArchDescriptor arch;
  InputShape input;
  std::vector<arch::GroupingPolicy> policies;
  std::vector<bool> residual_modes;
  std::vector<std::vector<LayerCost>> cells;  // [residual mode][policy]

  // Monotonicity over the constant-g columns (strictly decreasing as g grows)
  // and the constant-G columns (strictly increasing as G grows).
  bool flops_decrease_with_g = true;
  bool params_decrease_with_g = true;
  bool flops_increase_with_G = true;
  bool params_increase_with_G = true;
};

CostTable cost_table(const ArchDescriptor &arch, const std::vector<arch::GroupingPolicy> &policies,
                     const std::vector<bool> &residual_modes, const InputShape &input,
                     const Conventions &conventions = {});

/// Count in millions rounded half-even to `significant` digits, trailing zeros
/// removed ("93.65", "2281", "0.656", "16").
std::string format_millions(std::int64_t count, int significant);

enum class Format { Json, Csv, Table };
Format parse_format(const std::string &name);

std::string render_report(const CostReport &report, Format format);
std::string render_table(const CostTable &table, Format format);

}  // namespace rdl::cost
