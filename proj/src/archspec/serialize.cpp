#include "json.hpp"

#include "rdl/archspec.hpp"
#include "rdl/errors.hpp"

namespace rdl::arch {

using nlohmann::json;

namespace {

constexpr const char *kSchema = "archspec/1";

const char *policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::Standard: return "Standard";
    case PolicyKind::ConstantGroups: return "ConstantGroups";
    case PolicyKind::ConstantGroupSize: return "ConstantGroupSize";
    case PolicyKind::Depthwise: return "Depthwise";
  }
  return "Standard";
}

PolicyKind parse_policy_kind(const std::string &s) {
  if (s == "Standard") return PolicyKind::Standard;
  if (s == "ConstantGroups") return PolicyKind::ConstantGroups;
  if (s == "ConstantGroupSize") return PolicyKind::ConstantGroupSize;
  if (s == "Depthwise") return PolicyKind::Depthwise;
  throw FormatError("unknown policy kind '" + s + "'");
}

LayerRole parse_role(const std::string &s) {
  for (auto r : {LayerRole::Spatial3x3, LayerRole::Pointwise1x1, LayerRole::Shortcut1x1,
                 LayerRole::Stem, LayerRole::ClassifierAdjacent}) {
    if (role_name(r) == s) return r;
  }
  throw FormatError("unknown layer role '" + s + "'");
}

const char *block_family_name(BlockFamily f) {
  switch (f) {
    case BlockFamily::WrnBasic: return "WrnBasic";
    case BlockFamily::ResNet18Basic: return "ResNet18Basic";
    case BlockFamily::Mv2Inverted: return "Mv2Inverted";
  }
  return "WrnBasic";
}

BlockFamily parse_block_family(const std::string &s) {
  if (s == "WrnBasic") return BlockFamily::WrnBasic;
  if (s == "ResNet18Basic") return BlockFamily::ResNet18Basic;
  if (s == "Mv2Inverted") return BlockFamily::Mv2Inverted;
  throw FormatError("unknown block family '" + s + "'");
}

const char *shortcut_name(Shortcut s) {
  switch (s) {
    case Shortcut::Projection1x1: return "Projection1x1";
    case Shortcut::Identity: return "Identity";
    case Shortcut::None: return "None";
  }
  return "None";
}

Shortcut parse_shortcut(const std::string &s) {
  if (s == "Projection1x1") return Shortcut::Projection1x1;
  if (s == "Identity") return Shortcut::Identity;
  if (s == "None") return Shortcut::None;
  throw FormatError("unknown shortcut '" + s + "'");
}

json conv_to_json(const ConvLayerSpec &c) {
  return {{"op", "conv"},         {"in_channels", c.in_channels}, {"out_channels", c.out_channels},
          {"kernel", c.kernel},   {"stride", c.stride},           {"padding", c.padding},
          {"groups", c.groups},   {"role", role_name(c.role)}};
}

ConvLayerSpec conv_from_json(const json &j) {
  ConvLayerSpec c;
  c.in_channels = j.at("in_channels").get<int>();
  c.out_channels = j.at("out_channels").get<int>();
  c.kernel = j.at("kernel").get<int>();
  c.stride = j.at("stride").get<int>();
  c.padding = j.at("padding").get<int>();
  c.groups = j.at("groups").get<int>();
  c.role = parse_role(j.at("role").get<std::string>());
  return c;
}

json ops_to_json(const std::vector<LayerOp> &ops) {
  json arr = json::array();
  for (const auto &op : ops) {
    std::visit(
        [&](const auto &v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ConvLayerSpec>) {
            arr.push_back(conv_to_json(v));
          } else if constexpr (std::is_same_v<T, NormMarker>) {
            arr.push_back({{"op", "norm"}, {"channels", v.channels}});
          } else if constexpr (std::is_same_v<T, ActMarker>) {
            arr.push_back({{"op", "relu"}});
          } else {
            arr.push_back({{"op", "dropout"}, {"p", v.p}});
          }
        },
        op);
  }
  return arr;
}

std::vector<LayerOp> ops_from_json(const json &arr) {
  std::vector<LayerOp> ops;
  for (const auto &j : arr) {
    const auto kind = j.at("op").get<std::string>();
    if (kind == "conv") {
      ops.emplace_back(conv_from_json(j));
    } else if (kind == "norm") {
      ops.emplace_back(NormMarker{j.at("channels").get<int>()});
    } else if (kind == "relu") {
      ops.emplace_back(ActMarker{});
    } else if (kind == "dropout") {
      ops.emplace_back(DropoutMarker{j.at("p").get<double>()});
    } else {
      throw FormatError("unknown layer op '" + kind + "'");
    }
  }
  return ops;
}

}  // namespace

std::string serialize(const NetworkSpec &spec, int indent) {
  json j;
  j["schema"] = kSchema;
  j["family"] = family_name(spec.family);
  j["depth"] = spec.depth;
  j["widen_factor"] = spec.widen_factor;
  j["policy"] = {{"kind", policy_kind_name(spec.policy.kind)}, {"value", spec.policy.value}};
  j["residual"] = spec.residual;
  j["num_classes"] = spec.num_classes;
  j["dropout_p"] = spec.dropout_p;
  j["in_channels"] = spec.in_channels;
  j["stages"] = json::array();
  for (const auto &s : spec.stages) {
    j["stages"].push_back({{"blocks", s.blocks},
                           {"out_channels", s.out_channels},
                           {"stride", s.stride},
                           {"expansion", s.expansion}});
  }
  j["stem"] = ops_to_json(spec.stem);
  j["blocks"] = json::array();
  for (const auto &b : spec.blocks) {
    j["blocks"].push_back({{"family", block_family_name(b.family)},
                           {"in_channels", b.in_channels},
                           {"out_channels", b.out_channels},
                           {"stride", b.stride},
                           {"layers", ops_to_json(b.layers)},
                           {"shortcut", shortcut_name(b.shortcut)},
                           {"projection", b.projection ? conv_to_json(*b.projection) : json()}});
  }
  j["head"] = ops_to_json(spec.head);
  j["classifier_in"] = spec.classifier_in;
  return j.dump(indent);
}

NetworkSpec parse_spec(const std::string &json_text) {
  try {
    const json j = json::parse(json_text);
    const auto schema = j.at("schema").get<std::string>();
    if (schema != kSchema) {
      throw FormatError("expected schema " + std::string(kSchema) + ", got '" + schema + "'");
    }
    NetworkSpec spec;
    spec.family = parse_family(j.at("family").get<std::string>());
    spec.depth = j.at("depth").get<int>();
    spec.widen_factor = j.at("widen_factor").get<int>();
    spec.policy.kind = parse_policy_kind(j.at("policy").at("kind").get<std::string>());
    spec.policy.value = j.at("policy").at("value").get<int>();
    spec.residual = j.at("residual").get<bool>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.dropout_p = j.at("dropout_p").get<double>();
    spec.in_channels = j.at("in_channels").get<int>();
    for (const auto &s : j.at("stages")) {
      spec.stages.push_back({s.at("blocks").get<int>(), s.at("out_channels").get<int>(),
                             s.at("stride").get<int>(), s.at("expansion").get<int>()});
    }
    spec.stem = ops_from_json(j.at("stem"));
    for (const auto &bj : j.at("blocks")) {
      BlockSpec b;
      b.family = parse_block_family(bj.at("family").get<std::string>());
      b.in_channels = bj.at("in_channels").get<int>();
      b.out_channels = bj.at("out_channels").get<int>();
      b.stride = bj.at("stride").get<int>();
      b.layers = ops_from_json(bj.at("layers"));
      b.shortcut = parse_shortcut(bj.at("shortcut").get<std::string>());
      if (bj.contains("projection") && !bj.at("projection").is_null()) {
        b.projection = conv_from_json(bj.at("projection"));
      }
      spec.blocks.push_back(std::move(b));
    }
    spec.head = ops_from_json(j.at("head"));
    spec.classifier_in = j.at("classifier_in").get<int>();
    return spec;
  } catch (const json::exception &e) {
    throw FormatError(std::string("malformed archspec/1 document: ") + e.what());
  } catch (const ConfigError &e) {
    throw FormatError(e.what());
  }
}

}  // namespace rdl::arch
