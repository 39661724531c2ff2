// Acceptance suite: one PASS/FAIL line per criterion. Arguments select
// criteria by number; no arguments runs all of them.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "rdl/archspec.hpp"
#include "rdl/checkpoint.hpp"
#include "rdl/costmodel.hpp"
#include "rdl/data.hpp"
#include "rdl/distill.hpp"
#include "rdl/experiments.hpp"
#include "rdl/model.hpp"
#include "rdl/ops.hpp"
#include "rdl/parallel.hpp"
#include "support/cifar_fixture.hpp"
#include "support/conv_oracle.hpp"
#include "support/gradcheck.hpp"
#include "support/op_gradchecks.hpp"

using namespace rdl;
using arch::GroupingPolicy;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

json load_fixture(const std::string &name) {
  std::ifstream in(std::string(RDL_FIXTURE_DIR) + "/" + name);
  if (!in) throw DataError("missing fixture " + name);
  return json::parse(in);
}

std::string fmt(const char *f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

cost::ArchDescriptor descriptor(const json &n) {
  cost::ArchDescriptor a;
  a.family = arch::parse_family(n["family"].get<std::string>());
  a.depth = n["depth"];
  a.widen = n["widen"];
  return a;
}

// 1. Cost formulas, exact integers.
Outcome criterion1() {
  const auto doc = load_fixture("layer_costs.json");
  std::set<arch::PolicyKind> kinds;
  int bad = 0, n = 0;
  for (const auto &row : doc["layers"]) {
    const auto p = GroupingPolicy::parse(row["policy"].get<std::string>());
    kinds.insert(p.kind);
    arch::ConvLayerSpec c;
    c.in_channels = row["in"];
    c.out_channels = row["out"];
    c.kernel = row["kernel"];
    c.stride = row["stride"];
    c.padding = row["padding"];
    c.groups = arch::resolve_groups(p, c.in_channels);
    const auto got = cost::layer_cost(c, row["f"]);
    bad += got.params != row["params"].get<std::int64_t>() || got.flops != row["flops"].get<std::int64_t>() ||
           c.groups != row["groups"].get<int>();
    ++n;
  }
  return {bad == 0 && n >= 20 && kinds.size() == 4,
          std::to_string(n) + " layers, " + std::to_string(kinds.size()) + " policy kinds, " + std::to_string(bad) +
              " mismatches"};
}

// 2. g=1 ~ std, g=m ~ dw, G=m ~ std for layer_cost and conv2d.
Outcome criterion2() {
  int cost_bad = 0, tensor_bad = 0, cases = 0;
  double worst = 0;
  for (int m : {2, 4, 8, 16}) {
    const std::vector<std::pair<GroupingPolicy, GroupingPolicy>> pairs{
        {GroupingPolicy::groups(1), GroupingPolicy::standard()},
        {GroupingPolicy::groups(m), GroupingPolicy::depthwise()},
        {GroupingPolicy::group_size(m), GroupingPolicy::standard()}};
    for (int k : {1, 3}) {
      for (int f : {4, 8}) {
        for (const auto &[a, b] : pairs) {
          auto layer = [&](const GroupingPolicy &p) {
            arch::ConvLayerSpec c;
            c.in_channels = c.out_channels = m;
            c.kernel = k;
            c.padding = k / 2;
            c.groups = arch::resolve_groups(p, m);
            return c;
          };
          const auto la = layer(a), lb = layer(b);
          cost_bad += !(cost::layer_cost(la, f) == cost::layer_cost(lb, f));

          tg::Rng rng(static_cast<std::uint64_t>(m * 100 + k * 10 + f));
          const auto x = tg::randn<double>({2, m, f, f}, rng);
          const auto w = tg::randn<double>({m, m / la.groups, k, k}, rng);
          const auto wb = la.groups == lb.groups ? w : tg::randn<double>({m, m / lb.groups, k, k}, rng);
          const auto ya = tg::conv2d(tg::Var<double>::constant(x), tg::Var<double>::constant(w),
                                     {1, k / 2, la.groups}).value();
          const auto yb = tg::conv2d(tg::Var<double>::constant(x), tg::Var<double>::constant(wb),
                                     {1, k / 2, lb.groups}).value();
          const double ra = testing::max_rel_diff(ya, yb);
          // Each side also against direct summation.
          const double oa = testing::max_rel_diff(ya, testing::direct_conv(x, w, 1, k / 2, la.groups));
          const double ob = testing::max_rel_diff(yb, testing::direct_conv(x, wb, 1, k / 2, lb.groups));
          const double r = std::max({ra, oa, ob});
          worst = std::max(worst, r);
          tensor_bad += r > 1e-6;
          ++cases;
        }
      }
    }
  }
  return {cost_bad == 0 && tensor_bad == 0,
          std::to_string(cases) + " cases, cost mismatches " + std::to_string(cost_bad) + ", max tensor rel diff " +
              fmt("%.2e", worst)};
}

// 3. Calibration against the reference cost tables.
Outcome criterion3() {
  const auto doc = load_fixture("cost_tables.json");
  const auto input = cost::InputShape::parse(doc["input"].get<std::string>());
  std::vector<GroupingPolicy> cols;
  for (const auto &c : doc["columns"]) cols.push_back(GroupingPolicy::parse(c.get<std::string>()));
  bool pass = true;
  std::ostringstream detail;
  for (const auto &n : doc["networks"]) {
    auto a = descriptor(n);
    a.num_classes = doc["num_classes"];
    const auto t = cost::cost_table(a, cols, {true, false}, input);
    double worst = 0;
    for (int mode = 0; mode < 2; ++mode) {
      const char *key = mode == 0 ? "R" : "NR";
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const double rf = n["flops_m"][key][j].get<double>() * 1e6, rp = n["params_m"][key][j].get<double>() * 1e6;
        worst = std::max({worst, std::abs(t.cells[mode][j].flops - rf) / rf,
                          std::abs(t.cells[mode][j].params - rp) / rp});
      }
    }
    const bool monotone = t.flops_decrease_with_g && t.params_decrease_with_g && t.flops_increase_with_G &&
                          t.params_increase_with_G;
    const bool binding = a.family == arch::Family::ResNet18 || (a.family == arch::Family::WRN && a.depth == 22 &&
                                                                 a.widen == 2);
    pass &= monotone;
    if (binding) pass &= worst <= 0.02;
    detail << a.label() << " max gap " << fmt("%.2f%%", 100 * worst) << (binding ? "" : " (documented)")
           << (monotone ? "" : " NOT MONOTONE") << "; ";
    if (a.family == arch::Family::WRN && a.depth == 22 && a.widen == 2) {
      for (std::size_t j = 0; j < cols.size(); ++j) {
        const auto delta = t.cells[0][j].flops - t.cells[1][j].flops;
        pass &= delta >= 1'550'000 && delta <= 1'600'000;
        if (j == 0) detail << "WRN-22x2 R-NR delta " << fmt("%.4f M", delta / 1e6) << "; ";
      }
    }
    if (a.family == arch::Family::MobileNetV2) {
      bool equal = true;
      for (std::size_t j = 0; j < cols.size(); ++j) equal &= t.cells[0][j] == t.cells[1][j];
      pass &= equal;
      detail << "MobileNet-V2 R==NR " << (equal ? "yes" : "no") << "; ";
    }
  }
  return {pass, detail.str()};
}

// 4. Analytic vs central-difference gradients in double precision.
Outcome criterion4() {
  double worst = 0;
  std::string where;
  std::size_t checked = 0;
  for (const auto &check : testing::operator_gradchecks()) {
    const auto r = check.run();
    checked += r.checked;
    if (r.max_rel > worst) worst = r.max_rel, where = check.name + ": " + r.worst;
  }
  {
    tg::Rng rng(5);
    auto s = tg::Var<double>::leaf(tg::randn<double>({3, 5}, rng, 1.5));
    const auto t = tg::randn<double>({3, 5}, rng, 1.5);
    const auto r = testing::grad_check({{"student", s}},
                                       [&] { return distill::kd_loss(s, t, {1, 4, 0}, 4.0, 0.9); });
    checked += r.checked;
    if (r.max_rel > worst) worst = r.max_rel, where = "kd_loss: " + r.worst;
  }
  // Full WRN-10x1 forward + kd_loss, every parameter.
  const auto spec = arch::build_wrn(10, 1, GroupingPolicy::groups(2), true, 5, 0.0);
  tg::Network<double> net(spec, 17);
  tg::Rng rng(23);
  const auto x = tg::randn<double>({2, 3, 8, 8}, rng);
  const auto teacher = tg::randn<double>({2, 5}, rng, 2.0);
  std::vector<std::pair<std::string, tg::Var<double>>> leaves;
  for (auto &p : net.parameters()) leaves.emplace_back(p.name, p.var);
  const auto r = testing::grad_check(
      leaves, [&] { return distill::kd_loss(net.forward(x, tg::Mode::Train, nullptr), teacher, {1, 3}, 4.0, 0.9); },
      1e-5, 1, true);
  checked += r.checked;
  if (r.max_rel > worst) worst = r.max_rel, where = "WRN-10x1: " + r.worst;
  return {worst <= 1e-4 && r.checked == static_cast<std::size_t>(net.parameter_count()),
          std::to_string(checked) + " entries (" + std::to_string(r.checked) + " WRN-10x1 parameters, " +
              std::to_string(r.nonsmooth) + " re-estimated at a ReLU kink), max rel " +
              fmt("%.2e", worst) + (worst > 1e-4 ? " at " + where : "")};
}

// 5. Distillation objective identities.
Outcome criterion5() {
  tg::Rng rng(31);
  const auto s = tg::randn<double>({6, 10}, rng, 2.0);
  const auto t = tg::randn<double>({6, 10}, rng, 2.0);
  const std::vector<int> labels{0, 1, 2, 7, 8, 9};
  double ce_gap = 0, self = 0;
  for (double T : {1.0, 2.0, 4.0, 20.0}) {
    const double ce = tg::cross_entropy(tg::Var<double>::constant(s), labels).value()[0];
    const double a0 = distill::kd_loss(tg::Var<double>::constant(s), t, labels, T, 0.0).value()[0];
    ce_gap = std::max(ce_gap, std::abs(a0 - ce));
    self = std::max(self, std::abs(distill::kd_loss(tg::Var<double>::constant(s), s, labels, T, 1.0).value()[0]));
  }
  // Oracle: p = softmax([2, 0]), q = [1/2, 1/2], KL = sum p ln(2p).
  const double p0 = 1.0 / (1.0 + std::exp(-2.0)), p1 = 1.0 - p0;
  const double oracle = p0 * std::log(2 * p0) + p1 * std::log(2 * p1);
  const double kl = distill::kd_loss(tg::Var<double>::constant(tg::Tensor<double>({1, 2}, {0.0, 0.0})),
                                     tg::Tensor<double>({1, 2}, {2.0, 0.0}), {0}, 1.0, 1.0)
                        .value()[0];
  const bool pass = ce_gap <= 1e-6 && self <= 1e-9 && std::abs(kl - 0.3280) <= 1e-3 && std::abs(kl - oracle) <= 1e-12;
  return {pass, "alpha=0 vs CE " + fmt("%.1e", ce_gap) + ", self-distill " + fmt("%.1e", self) + ", KL case " +
                    fmt("%.6f", kl) + " (oracle " + fmt("%.6f", oracle) + ")"};
}

// 6. Drop and gain rows recomputed from the raw reference accuracies.
Outcome criterion6() {
  const auto doc = load_fixture("reference_tables.json");
  int cells = 0, bad = 0;
  double worst = 0;
  for (const auto &t : doc["tables"]) {
    const auto teachers = t["distilled"];
    for (std::size_t j = 0; j < t["students"].size(); ++j) {
      std::vector<double> distilled;
      for (const auto &row : teachers) distilled.push_back(row[j]);
      const double base = t["baseline"][j], nr = t["nr_baseline"][j];
      const double d = std::abs(exp::accuracy_drop(base, nr) - t["acc_drop"][j].get<double>());
      const double g = std::abs(exp::distillation_gain(distilled, base) - t["distil_gain"][j].get<double>());
      worst = std::max({worst, d, g});
      bad += (d > 0.01 + 1e-9) + (g > 0.01 + 1e-9);
      cells += 2;
    }
  }
  return {bad == 0 && doc["tables"].size() == 12,
          std::to_string(doc["tables"].size()) + " tables, " + std::to_string(cells) + " derived cells, max error " +
              fmt("%.4f", worst)};
}

// Desk-scale protocol shared by criteria 7 and 8.
constexpr std::uint64_t kSeeds[] = {0, 1, 2};

distill::TrainConfig desk_config(int epochs, std::uint64_t seed) {
  distill::TrainConfig cfg;
  cfg.sgd.lr0 = 0.05;
  cfg.sgd.momentum = 0.9;
  cfg.sgd.weight_decay = 5e-4;
  cfg.sgd.batch_size = 32;
  cfg.sgd.epochs = epochs;
  cfg.sgd.seed = seed;
  cfg.schedule = distill::LrSchedule::step({epochs / 2, epochs * 3 / 4}, 5.0);
  cfg.augment.enabled = false;
  return cfg;
}

arch::NetworkSpec desk_wrn(int depth, bool residual) {
  return arch::build_wrn(depth, 1, GroupingPolicy::standard(), residual, 8, 0.3);
}

// 7. Directional reproduction on the synthetic set.
Outcome criterion7() {
  const auto data = data::make_synthetic(data::SyntheticSpec{});
  std::ostringstream detail;
  bool fit_ok = true;
  std::vector<double> margins, kd_gains;
  std::vector<double> r_train, nr_train;
  for (std::uint64_t seed : kSeeds) {
    const auto r10 = distill::train(desk_wrn(10, true), data, desk_config(40, seed));
    const auto nr10 = distill::train(desk_wrn(10, false), data, desk_config(40, seed));
    r_train.push_back(r10.final_train);
    nr_train.push_back(nr10.final_train);
    fit_ok &= r10.final_train >= 90.0 && nr10.final_train >= 90.0;

    auto kd_cfg = desk_config(40, seed);
    distill::DistillConfig kd;
    kd.temperature = 4.0;
    kd.alpha = 0.9;
    kd_cfg.distill = kd;
    const distill::Teacher teacher{desk_wrn(10, true), r10.checkpoint};
    const auto student = distill::train(desk_wrn(10, false), data, kd_cfg, teacher);
    kd_gains.push_back(student.final_test - nr10.final_test);

    const auto r28 = distill::train(desk_wrn(28, true), data, desk_config(20, seed));
    const auto nr28 = distill::train(desk_wrn(28, false), data, desk_config(20, seed));
    margins.push_back(r28.final_test - nr28.final_test);
    detail << "[seed " << seed << ": train R10 " << fmt("%.1f", r10.final_train) << " NR10 "
           << fmt("%.1f", nr10.final_train) << "; test R28 " << fmt("%.1f", r28.final_test) << " NR28 "
           << fmt("%.1f", nr28.final_test) << "; test NR10 " << fmt("%.1f", nr10.final_test) << " KD "
           << fmt("%.1f", student.final_test) << "] ";
  }
  const double m = median(margins), g = median(kd_gains);
  detail << "(a) min train " << fmt("%.1f", std::min(*std::min_element(r_train.begin(), r_train.end()),
                                                        *std::min_element(nr_train.begin(), nr_train.end())))
         << "% (b) median R28-NR28 " << fmt("%+.2f", m) << " (c) median KD-NR10 " << fmt("%+.2f", g);
  return {fit_ok && m > 0 && g > 0, detail.str()};
}

// 8. Bitwise reproducibility of train and distill runs.
Outcome criterion8() {
  data::SyntheticSpec s;
  s.train_per_class = 16;
  const auto data = data::make_synthetic(s);
  const auto spec = desk_wrn(10, true);
  auto run = [&](const std::optional<distill::Teacher> &teacher) {
    auto cfg = desk_config(3, 9);
    cfg.augment.enabled = true;
    if (teacher) cfg.distill = distill::DistillConfig{};
    const auto res = distill::train(teacher ? desk_wrn(10, false) : spec, data, cfg, teacher);
    return std::pair{tg::encode_checkpoint(res.checkpoint), distill::history_csv(res.history)};
  };
  const auto a = run(std::nullopt), b = run(std::nullopt);
  const distill::Teacher teacher{spec, tg::decode_checkpoint(a.first)};
  const auto c = run(teacher), d = run(teacher);
  const bool pass = a == b && c == d;
  return {pass, std::string("train ") + (a == b ? "identical" : "DIFFERS") + ", distill " +
                    (c == d ? "identical" : "DIFFERS") + " (" + std::to_string(a.first.size()) + " checkpoint bytes)"};
}

// 9. ckpt/1, CIFAR-100 fixture and archspec round trips.
Outcome criterion9() {
  tg::Checkpoint ck;
  tg::Tensor<float> f({2, 3});
  const float specials[] = {0.0f, -0.0f, std::numeric_limits<float>::infinity(),
                            std::numeric_limits<float>::denorm_min(), 1.0f / 3.0f,
                            std::numeric_limits<float>::quiet_NaN()};
  for (int i = 0; i < 6; ++i) f[i] = specials[i];
  tg::Tensor<double> d({4});
  for (int i = 0; i < 4; ++i) d[i] = std::ldexp(1.0 + i / 7.0, -1000 + 600 * i);
  ck.entries.push_back({"a.weight", f});
  ck.entries.push_back({"b.running_var", d});
  tg::Network<float> net(desk_wrn(10, false), 3);
  for (auto &e : net.state().entries) ck.entries.push_back(e);
  const auto bytes = tg::encode_checkpoint(ck);
  const auto back = tg::decode_checkpoint(bytes);
  bool ckpt_ok = tg::encode_checkpoint(back) == bytes && back.entries.size() == ck.entries.size();
  for (std::size_t i = 0; ckpt_ok && i < ck.entries.size(); ++i) {
    ckpt_ok = std::visit(
        [&](const auto &t) {
          using Tn = std::decay_t<decltype(t)>;
          const auto *o = std::get_if<Tn>(&back.entries[i].tensor);
          if (!o || o->shape() != t.shape()) return false;
          return std::memcmp(o->data(), t.data(), t.numel() * sizeof(t.data()[0])) == 0;
        },
        ck.entries[i].tensor);
  }
  const auto path = std::filesystem::temp_directory_path() / "rdl_acceptance.ckpt";
  tg::save_checkpoint(path, ck);
  ckpt_ok &= tg::encode_checkpoint(tg::load_checkpoint(path)) == bytes;
  std::filesystem::remove(path);

  const auto cifar = data::parse_cifar(testing::cifar100_fixture(), 100);
  bool cifar_ok = cifar.size() == 2 && cifar.labels[0] == testing::kFixtureFine[0] &&
                  cifar.labels[1] == testing::kFixtureFine[1];
  for (int r = 0; r < 2 && cifar_ok; ++r) {
    for (int i = 0; i < 3072; ++i) {
      cifar_ok &= cifar.image(r)[i] == testing::fixture_pixel(r, i / 1024, (i / 32) % 32, i % 32);
    }
  }

  bool spec_ok = true;
  for (const auto &spec : {arch::build_wrn(22, 2, GroupingPolicy::groups(2), true, 100),
                           arch::build_wrn(40, 2, GroupingPolicy::group_size(4), false, 100),
                           arch::build_resnet18(GroupingPolicy::groups(16), true, 100),
                           arch::build_mobilenetv2(GroupingPolicy::depthwise(), false, 100)}) {
    spec_ok &= arch::parse_spec(arch::serialize(spec)) == spec;
  }
  return {ckpt_ok && cifar_ok && spec_ok, std::string("ckpt/1 ") + (ckpt_ok ? "lossless" : "LOSSY") + ", CIFAR-100 fixture " +
                                              (cifar_ok ? "exact" : "WRONG") + ", archspec " +
                                              (spec_ok ? "equal" : "DIFFERS")};
}

struct Criterion {
  int id;
  double limit_s;  // 0: no separate bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char **argv) {
  set_deterministic(true);
  const std::vector<Criterion> all{
      {1, 1, criterion1},    {2, 30, criterion2},   {3, 10, criterion3},
      {4, 300, criterion4},  {5, 1, criterion5},    {6, 1, criterion6},
      {7, 45 * 60, criterion7}, {8, 0, criterion8}, {9, 1, criterion9},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto &c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception &e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.limit_s == 0 || secs < c.limit_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::printf("criterion %d: %s %s [%.2fs%s]\n", c.id, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                c.limit_s == 0 ? "" : (in_time ? "" : " OVER TIME LIMIT"));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
