#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "rdl/costmodel.hpp"

using namespace rdl;
using namespace rdl::arch;
using namespace rdl::cost;

namespace {

ConvLayerSpec conv(int m, int n, int k, const GroupingPolicy &p) {
  ConvLayerSpec c;
  c.in_channels = m;
  c.out_channels = n;
  c.kernel = k;
  c.padding = k / 2;
  c.groups = resolve_groups(p, m);
  c.role = k == 3 ? LayerRole::Spatial3x3 : LayerRole::Pointwise1x1;
  return c;
}

const std::vector<GroupingPolicy> &columns() {
  static const std::vector<GroupingPolicy> cols = [] {
    std::vector<GroupingPolicy> c;
    for (int g : {2, 4, 8, 16}) c.push_back(GroupingPolicy::groups(g));
    for (int G : {1, 2, 4, 8, 16}) c.push_back(GroupingPolicy::group_size(G));
    return c;
  }();
  return cols;
}

std::vector<ArchDescriptor> families() {
  std::vector<ArchDescriptor> out;
  for (auto [d, w] : {std::pair{22, 2}, {22, 10}, {28, 2}, {40, 2}}) {
    ArchDescriptor a;
    a.depth = d;
    a.widen = w;
    out.push_back(a);
  }
  ArchDescriptor r;
  r.family = Family::ResNet18;
  out.push_back(r);
  ArchDescriptor m;
  m.family = Family::MobileNetV2;
  out.push_back(m);
  return out;
}

}  // namespace

TEST_CASE("layer_cost worked examples") {
  CHECK(layer_cost(conv(32, 64, 3, GroupingPolicy::standard()), 16) == LayerCost{18432, 4718592});
  CHECK(layer_cost(conv(32, 64, 3, GroupingPolicy::groups(4)), 16) == LayerCost{4608, 1179648});
  CHECK(layer_cost(conv(32, 64, 3, GroupingPolicy::group_size(2)), 16) == LayerCost{1152, 294912});
  CHECK(layer_cost(conv(32, 32, 3, GroupingPolicy::depthwise()), 16) == LayerCost{288, 73728});
}

TEST_CASE("layer_cost matches the formula fixture") {
  std::ifstream in(RDL_FIXTURE_DIR "/layer_costs.json");
  REQUIRE(in);
  const auto doc = nlohmann::json::parse(in);
  REQUIRE(doc["layers"].size() >= 20);
  for (const auto &row : doc["layers"]) {
    const auto p = GroupingPolicy::parse(row["policy"].get<std::string>());
    auto c = conv(row["in"], row["out"], row["kernel"], p);
    c.stride = row["stride"];
    CHECK(c.groups == row["groups"].get<int>());
    const auto got = layer_cost(c, row["f"]);
    CHECK(got.params == row["params"].get<std::int64_t>());
    CHECK(got.flops == row["flops"].get<std::int64_t>());
  }
}

TEST_CASE("policy equivalences hold exhaustively") {
  for (int m = 1; m <= 64; ++m) {
    for (int k : {1, 3}) {
      for (int f : {1, 4, 8, 32}) {
        const auto s = layer_cost(conv(m, m, k, GroupingPolicy::standard()), f);
        CHECK(layer_cost(conv(m, m, k, GroupingPolicy::groups(1)), f) == s);
        CHECK(layer_cost(conv(m, m, k, GroupingPolicy::group_size(m)), f) == s);
        CHECK(layer_cost(conv(m, m, k, GroupingPolicy::depthwise()), f) ==
              layer_cost(conv(m, m, k, GroupingPolicy::groups(m)), f));
      }
    }
  }
}

TEST_CASE("every conv layer costs params times f squared") {
  for (const auto &a : families()) {
    for (const auto &p : columns()) {
      for (bool residual : {true, false}) {
        const auto report = network_cost(build_network(a, p, residual), {});
        for (const auto &e : report.per_layer) {
          if (e.kind == EntryKind::Conv) CHECK(e.flops == e.params * e.fmap * e.fmap);
        }
      }
    }
  }
}

TEST_CASE("cost tables are monotone and the residual delta is policy independent") {
  for (const auto &a : families()) {
    CAPTURE(a.label());
    const auto t = cost_table(a, columns(), {true, false}, {});
    CHECK(t.flops_decrease_with_g);
    CHECK(t.params_decrease_with_g);
    CHECK(t.flops_increase_with_G);
    CHECK(t.params_increase_with_G);
    const auto d0 = t.cells[0][0].flops - t.cells[1][0].flops;
    const auto p0 = t.cells[0][0].params - t.cells[1][0].params;
    for (std::size_t j = 0; j < columns().size(); ++j) {
      CHECK(t.cells[0][j].flops - t.cells[1][j].flops == d0);
      CHECK(t.cells[0][j].params - t.cells[1][j].params == p0);
      CHECK(network_cost(build_network(a, columns()[j], true), {}).residual_overhead ==
            LayerCost{p0, d0});
    }
    if (a.family == Family::MobileNetV2) CHECK(d0 == 0);
    if (a.family == Family::MobileNetV2) CHECK(p0 == 0);
  }
}

TEST_CASE("network_cost is pure") {
  const auto spec = build_network({}, GroupingPolicy::groups(2), true);
  CHECK(network_cost(spec, {}) == network_cost(spec, {}));
}

TEST_CASE("conventions only add their own terms") {
  const auto spec = build_network({}, GroupingPolicy::groups(2), true);
  const auto base = network_cost(spec, {});
  Conventions bare;
  bare.norm_params = false;
  bare.classifier = false;
  const auto convs = network_cost(spec, {}, bare);
  std::int64_t conv_params = 0;
  for (const auto &e : base.per_layer) conv_params += e.kind == EntryKind::Conv ? e.params : 0;
  CHECK(convs.totals.params == conv_params);
  Conventions all;
  all.norm_flops = true;
  all.activation_flops = true;
  CHECK(network_cost(spec, {}, all).totals.flops > base.totals.flops);
}

TEST_CASE("WRN-22x2 g2 lands on the reference count") {
  const auto r = network_cost(build_network({}, GroupingPolicy::groups(2), true), InputShape::parse("3x32x32"));
  CHECK(format_millions(r.totals.flops, 4) == "93.65");
  CHECK(format_millions(r.totals.params, 3) == "0.656");
}

TEST_CASE("format_millions") {
  CHECK(format_millions(93'650'000, 4) == "93.65");
  CHECK(format_millions(2'281'000'000, 4) == "2281");
  CHECK(format_millions(656'000, 3) == "0.656");
  CHECK(format_millions(16'000'000, 3) == "16");
  CHECK(format_millions(0, 3) == "0");
}

TEST_CASE("input shape parsing") {
  const auto s = InputShape::parse("3x32x32");
  CHECK(s.channels == 3);
  CHECK(s.height == 32);
  CHECK(s.to_string() == "3x32x32");
  CHECK_THROWS(InputShape::parse("3x32"));
  CHECK_THROWS(InputShape::parse("0x32x32"));
}

TEST_CASE("report rendering") {
  const auto r = network_cost(build_network({}, GroupingPolicy::groups(2), true), {});
  const auto j = nlohmann::json::parse(render_report(r, Format::Json));
  CHECK(j["totals"]["flops"].get<std::int64_t>() == r.totals.flops);
  const auto csv = render_report(r, Format::Csv);
  CHECK(csv.find('\n') != std::string::npos);
  CHECK_THROWS(parse_format("yaml"));
}
