#include "rdl/costmodel.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "rdl/errors.hpp"

namespace rdl::cost {

using arch::ConvLayerSpec;
using arch::LayerOp;

LayerCost layer_cost(const ConvLayerSpec &layer, int f) {
  const std::int64_t n = layer.out_channels;
  const std::int64_t m = layer.in_channels;
  const std::int64_t k = layer.kernel;
  const std::int64_t t = layer.groups;
  const std::int64_t params = n * m * k * k / t;
  return {params, params * f * f};
}

InputShape InputShape::parse(const std::string &text) {
  InputShape s;
  int *fields[] = {&s.channels, &s.height, &s.width};
  const char *p = text.data();
  const char *end = p + text.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, *fields[i]);
    if (ec != std::errc() || *fields[i] <= 0) {
      throw ConfigError("invalid input shape '" + text + "': expected CxHxW");
    }
    p = next;
    if (i < 2) {
      if (p == end || (*p != 'x' && *p != 'X')) {
        throw ConfigError("invalid input shape '" + text + "': expected CxHxW");
      }
      ++p;
    }
  }
  if (p != end) throw ConfigError("invalid input shape '" + text + "': expected CxHxW");
  return s;
}

std::string InputShape::to_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

namespace {

int conv_out(int f, const ConvLayerSpec &c) { return (f + 2 * c.padding - c.kernel) / c.stride + 1; }

struct Walker {
  const Conventions &conv;
  CostReport &report;

  // Returns the map side after the ops.
  int walk(const std::vector<LayerOp> &ops, const std::string &prefix, int f, int channels) {
    for (std::size_t i = 0; i < ops.size(); ++i) {
      const std::string id = prefix + "." + std::to_string(i);
      if (const auto *c = std::get_if<ConvLayerSpec>(&ops[i])) {
        f = conv_out(f, *c);
        channels = c->out_channels;
        const auto lc = layer_cost(*c, f);
        report.per_layer.push_back({id, EntryKind::Conv, false, lc.params, lc.flops, f});
      } else if (const auto *n = std::get_if<arch::NormMarker>(&ops[i])) {
        const std::int64_t p = conv.norm_params ? 2LL * n->channels : 0;
        const std::int64_t fl = conv.norm_flops ? 2LL * n->channels * f * f : 0;
        report.per_layer.push_back({id, EntryKind::Norm, false, p, fl, f});
      } else if (std::holds_alternative<arch::ActMarker>(ops[i])) {
        if (conv.activation_flops) {
          report.per_layer.push_back(
              {id, EntryKind::Activation, false, 0, std::int64_t{channels} * f * f, f});
        }
      }
    }
    return f;
  }
};

}  // namespace

CostReport network_cost(const arch::NetworkSpec &spec, const InputShape &input,
                        const Conventions &conventions) {
  if (input.height != input.width) throw ConfigError("input must be spatially square");
  if (input.channels != spec.in_channels) {
    throw ShapeMismatch("input has " + std::to_string(input.channels) +
                        " channels, network expects " + std::to_string(spec.in_channels));
  }
  CostReport report;
  report.conventions = conventions;
  Walker w{conventions, report};

  int f = w.walk(spec.stem, "stem", input.height, spec.in_channels);
  for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const auto &b = spec.blocks[bi];
    const std::string prefix = "blocks." + std::to_string(bi);
    const int f_in = f;
    f = w.walk(b.layers, prefix + ".layers", f, b.in_channels);
    if (b.projection) {
      const int fs = conv_out(f_in, *b.projection);
      const auto lc = layer_cost(*b.projection, fs);
      report.per_layer.push_back({prefix + ".shortcut", EntryKind::Conv, true, lc.params, lc.flops, fs});
    }
  }
  w.walk(spec.head, "head", f, spec.blocks.empty() ? spec.in_channels : spec.blocks.back().out_channels);

  if (conventions.classifier) {
    const std::int64_t in = spec.classifier_in;
    const std::int64_t out = spec.num_classes;
    report.per_layer.push_back({"classifier", EntryKind::Classifier, false, in * out + out, in * out, 1});
  }

  for (const auto &e : report.per_layer) {
    report.totals.params += e.params;
    report.totals.flops += e.flops;
    if (e.shortcut) {
      report.residual_overhead.params += e.params;
      report.residual_overhead.flops += e.flops;
    }
  }
  return report;
}

std::string ArchDescriptor::label() const {
  switch (family) {
    case arch::Family::WRN: return "WRN-" + std::to_string(depth) + "x" + std::to_string(widen);
    case arch::Family::ResNet18: return "ResNet-18";
    case arch::Family::MobileNetV2: return "MobileNet-V2";
  }
  return "?";
}

arch::NetworkSpec build_network(const ArchDescriptor &a, const arch::GroupingPolicy &policy,
                                bool residual) {
  switch (a.family) {
    case arch::Family::WRN:
      return arch::build_wrn(a.depth, a.widen, policy, residual, a.num_classes, a.dropout_p);
    case arch::Family::ResNet18: return arch::build_resnet18(policy, residual, a.num_classes);
    case arch::Family::MobileNetV2: return arch::build_mobilenetv2(policy, residual, a.num_classes);
  }
  throw InvalidSpec("unknown family");
}

CostTable cost_table(const ArchDescriptor &a, const std::vector<arch::GroupingPolicy> &policies,
                     const std::vector<bool> &residual_modes, const InputShape &input,
                     const Conventions &conventions) {
  CostTable table{a, input, policies, residual_modes, {}};
  for (bool residual : residual_modes) {
    std::vector<LayerCost> row;
    for (const auto &p : policies) row.push_back(network_cost(build_network(a, p, residual), input, conventions).totals);
    table.cells.push_back(std::move(row));
  }

  for (const auto &row : table.cells) {
    // consecutive pairs of same-kind columns, in increasing parameter value
    for (std::size_t i = 0; i < policies.size(); ++i) {
      for (std::size_t j = 0; j < policies.size(); ++j) {
        if (policies[i].kind != policies[j].kind || policies[i].value >= policies[j].value) continue;
        if (policies[i].kind == arch::PolicyKind::ConstantGroups) {
          table.flops_decrease_with_g &= row[j].flops < row[i].flops;
          table.params_decrease_with_g &= row[j].params < row[i].params;
        } else if (policies[i].kind == arch::PolicyKind::ConstantGroupSize) {
          table.flops_increase_with_G &= row[j].flops > row[i].flops;
          table.params_increase_with_G &= row[j].params > row[i].params;
        }
      }
    }
  }
  return table;
}

std::string format_millions(std::int64_t count, int significant) {
  const bool negative = count < 0;
  std::uint64_t v = negative ? static_cast<std::uint64_t>(-count) : static_cast<std::uint64_t>(count);
  int digits = 1;
  for (std::uint64_t t = v; t >= 10; t /= 10) ++digits;

  int drop = digits - significant;
  if (drop > 0) {
    std::uint64_t scale = 1;
    for (int i = 0; i < drop; ++i) scale *= 10;
    std::uint64_t q = v / scale;
    const std::uint64_t r = v % scale;
    if (2 * r > scale || (2 * r == scale && (q % 2 == 1))) ++q;
    v = q * scale;
  }

  // v is now an integer count; print v / 1e6 exactly, then trim zeros.
  std::string s = std::to_string(v);
  if (s.size() <= 6) s.insert(0, 7 - s.size(), '0');
  s.insert(s.size() - 6, ".");
  while (s.back() == '0') s.pop_back();
  if (s.back() == '.') s.pop_back();
  return negative ? "-" + s : s;
}

Format parse_format(const std::string &name) {
  if (name == "json") return Format::Json;
  if (name == "csv") return Format::Csv;
  if (name == "table") return Format::Table;
  throw UsageError("--format must be json|csv|table, got '" + name + "'");
}

namespace {

const char *kind_name(EntryKind k) {
  switch (k) {
    case EntryKind::Conv: return "conv";
    case EntryKind::Norm: return "norm";
    case EntryKind::Activation: return "activation";
    case EntryKind::Classifier: return "classifier";
  }
  return "conv";
}

}  // namespace

std::string render_report(const CostReport &report, Format format) {
  std::ostringstream os;
  if (format == Format::Json) {
    nlohmann::ordered_json j;
    j["per_layer"] = nlohmann::ordered_json::array();
    for (const auto &e : report.per_layer) {
      j["per_layer"].push_back({{"id", e.id},
                                {"kind", kind_name(e.kind)},
                                {"shortcut", e.shortcut},
                                {"params", e.params},
                                {"flops", e.flops},
                                {"fmap", e.fmap}});
    }
    j["totals"] = {{"params", report.totals.params}, {"flops", report.totals.flops}};
    j["residual_overhead"] = {{"params", report.residual_overhead.params},
                              {"flops", report.residual_overhead.flops}};
    j["conventions"] = {{"flops_unit", "multiply-accumulate"},
                        {"norm_params", report.conventions.norm_params},
                        {"classifier", report.conventions.classifier},
                        {"norm_flops", report.conventions.norm_flops},
                        {"activation_flops", report.conventions.activation_flops}};
    os << j.dump(2) << "\n";
  } else if (format == Format::Csv) {
    os << "id,kind,shortcut,params,flops,fmap\n";
    for (const auto &e : report.per_layer) {
      os << e.id << ',' << kind_name(e.kind) << ',' << (e.shortcut ? 1 : 0) << ',' << e.params
         << ',' << e.flops << ',' << e.fmap << '\n';
    }
    os << "total,total,0," << report.totals.params << ',' << report.totals.flops << ",0\n";
  } else {
    char line[160];
    std::snprintf(line, sizeof line, "%-24s %-10s %12s %16s %6s\n", "layer", "kind", "params", "flops", "fmap");
    os << line;
    for (const auto &e : report.per_layer) {
      std::snprintf(line, sizeof line, "%-24s %-10s %12lld %16lld %6d\n", e.id.c_str(),
                    e.shortcut ? "shortcut" : kind_name(e.kind), static_cast<long long>(e.params),
                    static_cast<long long>(e.flops), e.fmap);
      os << line;
    }
    os << "total params " << report.totals.params << " (" << format_millions(report.totals.params, 3)
       << " M), flops " << report.totals.flops << " (" << format_millions(report.totals.flops, 4)
       << " M MACs)\n";
    os << "residual overhead params " << report.residual_overhead.params << ", flops "
       << report.residual_overhead.flops << "\n";
  }
  return os.str();
}

std::string render_table(const CostTable &table, Format format) {
  std::ostringstream os;
  auto mode_name = [](bool r) { return r ? "R" : "NR"; };
  auto col_name = [](const arch::GroupingPolicy &p) {
    switch (p.kind) {
      case arch::PolicyKind::ConstantGroups: return "g" + std::to_string(p.value);
      case arch::PolicyKind::ConstantGroupSize: return "G" + std::to_string(p.value);
      case arch::PolicyKind::Depthwise: return std::string("dw");
      case arch::PolicyKind::Standard: return std::string("std");
    }
    return std::string("?");
  };
  if (format == Format::Json) {
    nlohmann::ordered_json j;
    j["network"] = table.arch.label();
    j["input"] = table.input.to_string();
    j["columns"] = nlohmann::ordered_json::array();
    for (const auto &p : table.policies) j["columns"].push_back(p.to_string());
    j["rows"] = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < table.cells.size(); ++r) {
      nlohmann::ordered_json row;
      row["mode"] = mode_name(table.residual_modes[r]);
      row["params"] = nlohmann::ordered_json::array();
      row["flops"] = nlohmann::ordered_json::array();
      for (const auto &c : table.cells[r]) {
        row["params"].push_back(c.params);
        row["flops"].push_back(c.flops);
      }
      j["rows"].push_back(row);
    }
    j["monotonic"] = {{"flops_decrease_with_g", table.flops_decrease_with_g},
                      {"params_decrease_with_g", table.params_decrease_with_g},
                      {"flops_increase_with_G", table.flops_increase_with_G},
                      {"params_increase_with_G", table.params_increase_with_G}};
    os << j.dump(2) << "\n";
    return os.str();
  }
  const char sep = format == Format::Csv ? ',' : ' ';
  for (const char *metric : {"flops", "params"}) {
    const bool flops = metric[0] == 'f';
    os << (format == Format::Csv ? "" : flops ? "# FLOPs (M MACs)\n" : "# Params (M)\n");
    os << "network" << sep << "metric" << sep << "mode";
    for (const auto &p : table.policies) os << sep << col_name(p);
    os << '\n';
    for (std::size_t r = 0; r < table.cells.size(); ++r) {
      os << table.arch.label() << sep << metric << sep << mode_name(table.residual_modes[r]);
      for (const auto &c : table.cells[r]) {
        os << sep << format_millions(flops ? c.flops : c.params, flops ? 4 : 3);
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace rdl::cost
