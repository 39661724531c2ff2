#pragma once

// Declarative network descriptions: WRN, ResNet-18 and MobileNetV2 variants
// under a grouping policy, with or without residual connections.

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rdl::arch {

enum class PolicyKind { Standard, ConstantGroups, ConstantGroupSize, Depthwise };

/// How the spatial 3x3 layers of a network are grouped. `value` holds g for
/// ConstantGroups and G (channels per group) for ConstantGroupSize; it is 0
/// for the other kinds.
struct GroupingPolicy {
  PolicyKind kind = PolicyKind::Standard;
  int value = 0;

  static GroupingPolicy standard() { return {PolicyKind::Standard, 0}; }
  static GroupingPolicy groups(int g) { return {PolicyKind::ConstantGroups, g}; }
  static GroupingPolicy group_size(int G) { return {PolicyKind::ConstantGroupSize, G}; }
  static GroupingPolicy depthwise() { return {PolicyKind::Depthwise, 0}; }

  /// Parses "std", "dw", "g=N" or "G=N".
  static GroupingPolicy parse(const std::string &text);
  /// Inverse of parse().
  std::string to_string() const;

  bool operator==(const GroupingPolicy &) const = default;
};

/// Number of groups t the policy assigns to a layer with m input channels.
/// Throws NonDivisible when the policy does not divide m.
int resolve_groups(const GroupingPolicy &policy, int m);

enum class LayerRole { Spatial3x3, Pointwise1x1, Shortcut1x1, Stem, ClassifierAdjacent };

struct ConvLayerSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  LayerRole role = LayerRole::Pointwise1x1;

  bool operator==(const ConvLayerSpec &) const = default;
};

struct NormMarker {
  int channels = 0;
  bool operator==(const NormMarker &) const = default;
};

struct ActMarker {
  bool operator==(const ActMarker &) const = default;
};

struct DropoutMarker {
  double p = 0.0;
  bool operator==(const DropoutMarker &) const = default;
};

using LayerOp = std::variant<ConvLayerSpec, NormMarker, ActMarker, DropoutMarker>;

enum class BlockFamily { WrnBasic, ResNet18Basic, Mv2Inverted };
enum class Shortcut { Projection1x1, Identity, None };

/// One residual-capable block. For WrnBasic/ResNet18Basic the layer list
/// starts with a norm+activation pre-activation pair; a projection shortcut
/// reads the pre-activated input, an identity shortcut the raw input.
struct BlockSpec {
  BlockFamily family = BlockFamily::WrnBasic;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  std::vector<LayerOp> layers;
  Shortcut shortcut = Shortcut::None;
  std::optional<ConvLayerSpec> projection;

  bool operator==(const BlockSpec &) const = default;
};

enum class Family { WRN, ResNet18, MobileNetV2 };

struct StageSpec {
  int blocks = 0;
  int out_channels = 0;
  int stride = 1;
  int expansion = 1;  // MobileNetV2 only

  bool operator==(const StageSpec &) const = default;
};

struct NetworkSpec {
  Family family = Family::WRN;
  int depth = 0;
  int widen_factor = 1;
  GroupingPolicy policy;
  bool residual = true;
  std::vector<StageSpec> stages;
  int num_classes = 0;
  double dropout_p = 0.0;
  int in_channels = 3;

  std::vector<LayerOp> stem;
  std::vector<BlockSpec> blocks;
  std::vector<LayerOp> head;  // layers between the last block and pooling
  int classifier_in = 0;

  bool operator==(const NetworkSpec &) const = default;
};

/// WRN-d-widen. Blocks per stage r = (d - 4) / 6; throws InvalidDepth when
/// that is not a positive integer.
NetworkSpec build_wrn(int depth, int widen, const GroupingPolicy &policy,
                      bool residual, int num_classes, double dropout_p = 0.3);

/// Small-input ResNet-18 (3x3 stem, four stages of two basic blocks).
NetworkSpec build_resnet18(const GroupingPolicy &policy, bool residual,
                           int num_classes);

/// MobileNetV2 adapted to 32x32 inputs: stem stride 1 and the 24-channel
/// stage without downsampling, leaving a 4x4 final map.
NetworkSpec build_mobilenetv2(const GroupingPolicy &policy, bool residual,
                              int num_classes);

struct Violation {
  std::string rule;
  int block = -1;  // -1 for stem/head/network-level
  int layer = -1;
  std::string message;
};

std::vector<Violation> validate(const NetworkSpec &spec);

/// Compact tag used in tables and CSV files ("wrn", "resnet18", "mobilenetv2").
std::string family_name(Family family);
Family parse_family(const std::string &name);
std::string role_name(LayerRole role);

/// All conv layers of the main path (stem, block bodies, head) in forward
/// order; shortcut projections are excluded.
std::vector<ConvLayerSpec> main_path_convs(const NetworkSpec &spec);

/// "archspec/1" JSON document.
std::string serialize(const NetworkSpec &spec, int indent = 2);
NetworkSpec parse_spec(const std::string &json_text);

}  // namespace rdl::arch
