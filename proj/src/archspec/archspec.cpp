#include "rdl/archspec.hpp"

#include <charconv>

#include "rdl/errors.hpp"

namespace rdl::arch {

namespace {

int parse_positive(const std::string &text, const std::string &context) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || value <= 0) {
    throw ConfigError("invalid policy '" + context + "': expected std|dw|g=N|G=N");
  }
  return value;
}

ConvLayerSpec conv(int in, int out, int kernel, int stride, int groups, LayerRole role) {
  return ConvLayerSpec{in, out, kernel, stride, kernel / 2, groups, role};
}

// [norm, act, 3x3 grouped (m->m, strided), norm, act, 1x1 (m->n)], twice.
BlockSpec basic_block(BlockFamily family, int in, int out, int stride,
                      const GroupingPolicy &policy, bool residual,
                      std::optional<double> dropout_p) {
  BlockSpec block;
  block.family = family;
  block.in_channels = in;
  block.out_channels = out;
  block.stride = stride;

  auto &l = block.layers;
  l.emplace_back(NormMarker{in});
  l.emplace_back(ActMarker{});
  l.emplace_back(conv(in, in, 3, stride, resolve_groups(policy, in), LayerRole::Spatial3x3));
  l.emplace_back(NormMarker{in});
  l.emplace_back(ActMarker{});
  l.emplace_back(conv(in, out, 1, 1, 1, LayerRole::Pointwise1x1));
  if (dropout_p) l.emplace_back(DropoutMarker{*dropout_p});
  l.emplace_back(NormMarker{out});
  l.emplace_back(ActMarker{});
  l.emplace_back(conv(out, out, 3, 1, resolve_groups(policy, out), LayerRole::Spatial3x3));
  l.emplace_back(NormMarker{out});
  l.emplace_back(ActMarker{});
  l.emplace_back(conv(out, out, 1, 1, 1, LayerRole::Pointwise1x1));

  if (!residual) {
    block.shortcut = Shortcut::None;
  } else if (in != out || stride != 1) {
    block.shortcut = Shortcut::Projection1x1;
    block.projection = conv(in, out, 1, stride, 1, LayerRole::Shortcut1x1);
  } else {
    block.shortcut = Shortcut::Identity;
  }
  return block;
}

BlockSpec inverted_block(int in, int out, int stride, int expansion,
                         const GroupingPolicy &policy, bool residual) {
  BlockSpec block;
  block.family = BlockFamily::Mv2Inverted;
  block.in_channels = in;
  block.out_channels = out;
  block.stride = stride;

  const int hidden = in * expansion;
  auto &l = block.layers;
  if (expansion != 1) {
    l.emplace_back(conv(in, hidden, 1, 1, 1, LayerRole::Pointwise1x1));
    l.emplace_back(NormMarker{hidden});
    l.emplace_back(ActMarker{});
  }
  l.emplace_back(conv(hidden, hidden, 3, stride, resolve_groups(policy, hidden),
                      LayerRole::Spatial3x3));
  l.emplace_back(NormMarker{hidden});
  l.emplace_back(ActMarker{});
  l.emplace_back(conv(hidden, out, 1, 1, 1, LayerRole::Pointwise1x1));
  l.emplace_back(NormMarker{out});

  block.shortcut = (residual && stride == 1 && in == out) ? Shortcut::Identity : Shortcut::None;
  return block;
}

NetworkSpec preact_network(Family family, BlockFamily block_family, int stem_width,
                           std::vector<StageSpec> stages, const GroupingPolicy &policy,
                           bool residual, int num_classes, std::optional<double> dropout_p) {
  NetworkSpec spec;
  spec.family = family;
  spec.policy = policy;
  spec.residual = residual;
  spec.num_classes = num_classes;
  spec.dropout_p = dropout_p.value_or(0.0);
  spec.stages = std::move(stages);
  spec.stem.emplace_back(conv(spec.in_channels, stem_width, 3, 1, 1, LayerRole::Stem));

  int channels = stem_width;
  for (const auto &stage : spec.stages) {
    for (int b = 0; b < stage.blocks; ++b) {
      const int stride = b == 0 ? stage.stride : 1;
      spec.blocks.push_back(basic_block(block_family, channels, stage.out_channels, stride,
                                        policy, residual, dropout_p));
      channels = stage.out_channels;
    }
  }
  spec.head.emplace_back(NormMarker{channels});
  spec.head.emplace_back(ActMarker{});
  spec.classifier_in = channels;
  return spec;
}

bool shape_changes(const BlockSpec &b) { return b.in_channels != b.out_channels || b.stride != 1; }

}  // namespace

GroupingPolicy GroupingPolicy::parse(const std::string &text) {
  if (text == "std" || text == "standard") return standard();
  if (text == "dw" || text == "depthwise") return depthwise();
  if (text.size() > 2 && text[1] == '=') {
    const int v = parse_positive(text.substr(2), text);
    if (text[0] == 'g') return groups(v);
    if (text[0] == 'G') return group_size(v);
  }
  throw ConfigError("invalid policy '" + text + "': expected std|dw|g=N|G=N");
}

std::string GroupingPolicy::to_string() const {
  switch (kind) {
    case PolicyKind::Standard: return "std";
    case PolicyKind::Depthwise: return "dw";
    case PolicyKind::ConstantGroups: return "g=" + std::to_string(value);
    case PolicyKind::ConstantGroupSize: return "G=" + std::to_string(value);
  }
  return "std";
}

int resolve_groups(const GroupingPolicy &policy, int m) {
  if (m < 1) throw NonDivisible("channel count must be positive, got " + std::to_string(m));
  switch (policy.kind) {
    case PolicyKind::Standard: return 1;
    case PolicyKind::Depthwise: return m;
    case PolicyKind::ConstantGroups:
      if (policy.value < 1 || m % policy.value != 0) {
        throw NonDivisible("g=" + std::to_string(policy.value) + " does not divide m=" +
                           std::to_string(m));
      }
      return policy.value;
    case PolicyKind::ConstantGroupSize:
      if (policy.value < 1 || m % policy.value != 0) {
        throw NonDivisible("G=" + std::to_string(policy.value) + " does not divide m=" +
                           std::to_string(m));
      }
      return m / policy.value;
  }
  return 1;
}

NetworkSpec build_wrn(int depth, int widen, const GroupingPolicy &policy, bool residual,
                      int num_classes, double dropout_p) {
  if (depth < 10 || (depth - 4) % 6 != 0) {
    throw InvalidDepth("WRN depth " + std::to_string(depth) +
                       " does not give an integer block count (d-4)/6 >= 1");
  }
  if (widen < 1) throw InvalidSpec("widen factor must be >= 1");
  const int r = (depth - 4) / 6;
  auto spec = preact_network(Family::WRN, BlockFamily::WrnBasic, 16,
                             {{r, 16 * widen, 1, 1}, {r, 32 * widen, 2, 1}, {r, 64 * widen, 2, 1}},
                             policy, residual, num_classes, dropout_p);
  spec.depth = depth;
  spec.widen_factor = widen;
  return spec;
}

NetworkSpec build_resnet18(const GroupingPolicy &policy, bool residual, int num_classes) {
  auto spec = preact_network(Family::ResNet18, BlockFamily::ResNet18Basic, 64,
                             {{2, 64, 1, 1}, {2, 128, 2, 1}, {2, 256, 2, 1}, {2, 512, 2, 1}},
                             policy, residual, num_classes, std::nullopt);
  spec.depth = 18;
  return spec;
}

NetworkSpec build_mobilenetv2(const GroupingPolicy &policy, bool residual, int num_classes) {
  NetworkSpec spec;
  spec.family = Family::MobileNetV2;
  spec.policy = policy;
  spec.residual = residual;
  spec.num_classes = num_classes;
  spec.stages = {{1, 16, 1, 1},  {2, 24, 1, 6}, {3, 32, 2, 6},  {4, 64, 2, 6},
                 {3, 96, 1, 6},  {3, 160, 2, 6}, {1, 320, 1, 6}};

  spec.stem = {conv(spec.in_channels, 32, 3, 1, 1, LayerRole::Stem), NormMarker{32}, ActMarker{}};
  int channels = 32;
  for (const auto &stage : spec.stages) {
    for (int b = 0; b < stage.blocks; ++b) {
      const int stride = b == 0 ? stage.stride : 1;
      spec.blocks.push_back(
          inverted_block(channels, stage.out_channels, stride, stage.expansion, policy, residual));
      channels = stage.out_channels;
    }
  }
  spec.head = {conv(channels, 1280, 1, 1, 1, LayerRole::ClassifierAdjacent), NormMarker{1280},
               ActMarker{}};
  spec.classifier_in = 1280;
  return spec;
}

std::vector<ConvLayerSpec> main_path_convs(const NetworkSpec &spec) {
  std::vector<ConvLayerSpec> out;
  auto collect = [&](const std::vector<LayerOp> &ops) {
    for (const auto &op : ops) {
      if (const auto *c = std::get_if<ConvLayerSpec>(&op)) out.push_back(*c);
    }
  };
  collect(spec.stem);
  for (const auto &b : spec.blocks) collect(b.layers);
  collect(spec.head);
  return out;
}

std::vector<Violation> validate(const NetworkSpec &spec) {
  std::vector<Violation> out;
  auto report = [&](std::string rule, int block, int layer, std::string msg) {
    out.push_back({std::move(rule), block, layer, std::move(msg)});
  };

  auto check_conv = [&](const ConvLayerSpec &c, int block, int layer) {
    if (c.groups < 1 || c.in_channels % c.groups != 0 || c.out_channels % c.groups != 0) {
      report("NonDivisible", block, layer,
             "groups=" + std::to_string(c.groups) + " does not divide m=" +
                 std::to_string(c.in_channels) + " and n=" + std::to_string(c.out_channels));
    } else if (c.role == LayerRole::Spatial3x3) {
      int expected = 0;
      try {
        expected = resolve_groups(spec.policy, c.in_channels);
      } catch (const NonDivisible &e) {
        report("NonDivisible", block, layer, e.what());
      }
      if (expected != 0 && expected != c.groups) {
        report("PolicyRule", block, layer,
               "groups=" + std::to_string(c.groups) + " but policy " + spec.policy.to_string() +
                   " resolves to " + std::to_string(expected));
      }
    } else if (c.groups != 1) {
      report("PolicyRule", block, layer, "only spatial 3x3 layers may be grouped");
    }
    if ((c.role == LayerRole::Pointwise1x1 || c.role == LayerRole::Shortcut1x1) && c.kernel != 1) {
      report("KernelRule", block, layer, "pointwise/shortcut layer must have k=1");
    }
    if (c.stride < 1 || c.padding < 0 || c.kernel < 1) {
      report("GeometryRule", block, layer, "kernel/stride must be >= 1 and padding >= 0");
    }
  };

  // Walks a layer list, checking channel flow; returns the outgoing width.
  auto walk = [&](const std::vector<LayerOp> &ops, int block, int channels) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const int li = static_cast<int>(i);
      if (const auto *c = std::get_if<ConvLayerSpec>(&ops[i])) {
        check_conv(*c, block, li);
        if (c->in_channels != channels) {
          report("ChannelFlow", block, li,
                 "expects " + std::to_string(c->in_channels) + " input channels, receives " +
                     std::to_string(channels));
        }
        channels = c->out_channels;
      } else if (const auto *n = std::get_if<NormMarker>(&ops[i])) {
        if (n->channels != channels) {
          report("ChannelFlow", block, li, "normalization width does not match its input");
        }
      } else if (const auto *d = std::get_if<DropoutMarker>(&ops[i])) {
        if (!(d->p >= 0.0 && d->p < 1.0)) report("DropoutRule", block, li, "p must lie in [0, 1)");
      }
    }
    return channels;
  };

  int channels = walk(spec.stem, -1, spec.in_channels);

  for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const auto &b = spec.blocks[bi];
    const int id = static_cast<int>(bi);
    if (b.in_channels != channels) {
      report("ChannelFlow", id, -1, "block input width does not match previous output");
    }
    const int end = walk(b.layers, id, b.in_channels);
    if (end != b.out_channels) report("ChannelFlow", id, -1, "block output width mismatch");
    channels = b.out_channels;

    int stride = 1;
    for (const auto &op : b.layers) {
      if (const auto *c = std::get_if<ConvLayerSpec>(&op)) stride *= c->stride;
    }
    if (stride != b.stride) report("GeometryRule", id, -1, "block stride does not match its layers");

    if (b.family == BlockFamily::Mv2Inverted) {
      const bool want_identity = spec.residual && b.stride == 1 && b.in_channels == b.out_channels;
      const Shortcut expected = want_identity ? Shortcut::Identity : Shortcut::None;
      if (b.shortcut != expected) {
        report("ShortcutRule", id, -1,
               want_identity ? "shape-preserving block must carry an identity shortcut"
                             : "block may not carry a shortcut");
      }
    } else {
      Shortcut expected = Shortcut::None;
      if (spec.residual) expected = shape_changes(b) ? Shortcut::Projection1x1 : Shortcut::Identity;
      if (b.shortcut != expected) {
        report("ShortcutRule", id, -1,
               spec.residual ? "residual block needs a projection when its shape changes and an "
                               "identity otherwise"
                             : "non-residual block may not carry a shortcut");
      }
      // every spatial 3x3 is immediately followed (among convs) by a pointwise 1x1
      const ConvLayerSpec *pending = nullptr;
      int pending_index = -1;
      for (std::size_t li = 0; li < b.layers.size(); ++li) {
        const auto *c = std::get_if<ConvLayerSpec>(&b.layers[li]);
        if (!c) continue;
        if (pending && c->role != LayerRole::Pointwise1x1) {
          report("PairRule", id, pending_index, "3x3 layer not followed by a 1x1 layer");
        }
        pending = c->role == LayerRole::Spatial3x3 ? c : nullptr;
        pending_index = static_cast<int>(li);
      }
      if (pending) report("PairRule", id, pending_index, "3x3 layer not followed by a 1x1 layer");
    }

    const bool has_proj = b.projection.has_value();
    if (has_proj != (b.shortcut == Shortcut::Projection1x1)) {
      report("ShortcutRule", id, -1, "projection layer present iff shortcut is Projection1x1");
    }
    if (has_proj) {
      const auto &p = *b.projection;
      check_conv(p, id, -1);
      if (p.in_channels != b.in_channels || p.out_channels != b.out_channels ||
          p.stride != b.stride || p.kernel != 1 || p.role != LayerRole::Shortcut1x1) {
        report("ShortcutRule", id, -1, "projection must be a strided 1x1 in->out layer");
      }
    }
  }

  channels = walk(spec.head, -1, channels);
  if (spec.classifier_in != channels) {
    report("ChannelFlow", -1, -1, "classifier input width does not match the head output");
  }
  if (spec.num_classes < 1) report("InvalidSpec", -1, -1, "num_classes must be >= 1");

  int declared_blocks = 0;
  for (const auto &s : spec.stages) declared_blocks += s.blocks;
  if (declared_blocks != static_cast<int>(spec.blocks.size())) {
    report("StageRule", -1, -1, "stage block counts do not sum to the block list length");
  }
  if (spec.family == Family::WRN) {
    if (spec.depth < 10 || (spec.depth - 4) % 6 != 0) {
      report("DepthRule", -1, -1, "WRN depth must satisfy (d-4)/6 = positive integer");
    } else {
      const int r = (spec.depth - 4) / 6;
      for (const auto &s : spec.stages) {
        if (s.blocks != r) report("DepthRule", -1, -1, "stage block count differs from (d-4)/6");
      }
    }
  }
  return out;
}

std::string family_name(Family family) {
  switch (family) {
    case Family::WRN: return "wrn";
    case Family::ResNet18: return "resnet18";
    case Family::MobileNetV2: return "mobilenetv2";
  }
  return "wrn";
}

Family parse_family(const std::string &name) {
  if (name == "wrn") return Family::WRN;
  if (name == "resnet18") return Family::ResNet18;
  if (name == "mobilenetv2" || name == "mv2") return Family::MobileNetV2;
  throw ConfigError("unknown architecture family '" + name + "' (expected wrn|resnet18|mobilenetv2)");
}

std::string role_name(LayerRole role) {
  switch (role) {
    case LayerRole::Spatial3x3: return "spatial3x3";
    case LayerRole::Pointwise1x1: return "pointwise1x1";
    case LayerRole::Shortcut1x1: return "shortcut1x1";
    case LayerRole::Stem: return "stem";
    case LayerRole::ClassifierAdjacent: return "classifier-adjacent";
  }
  return "pointwise1x1";
}

}  // namespace rdl::arch
