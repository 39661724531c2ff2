#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "rdl/errors.hpp"
#include "rdl/experiments.hpp"

namespace rdl::exp {

double accuracy_drop(double r_baseline, double nr_baseline) { return r_baseline - nr_baseline; }

double distillation_gain(const std::vector<double> &distilled, double r_baseline) {
  if (distilled.empty()) throw EmptyList("distillation gain needs at least one distilled accuracy");
  return *std::max_element(distilled.begin(), distilled.end()) - r_baseline;
}

namespace {

std::string fmt(const char *spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::string> split(const std::string &line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <typename V>
V parse_num(const std::string &s, int line, const char *what) {
  try {
    std::size_t used = 0;
    V v;
    if constexpr (std::is_same_v<V, double>) {
      v = std::stod(s, &used);
    } else if constexpr (std::is_same_v<V, std::uint64_t>) {
      v = std::stoull(s, &used);
    } else if constexpr (std::is_same_v<V, std::int64_t>) {
      v = std::stoll(s, &used);
    } else {
      v = std::stoi(s, &used);
    }
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    throw FormatError("results line " + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

int kind_rank(arch::PolicyKind k) {
  switch (k) {
    case arch::PolicyKind::Standard: return 0;
    case arch::PolicyKind::ConstantGroups: return 1;
    case arch::PolicyKind::ConstantGroupSize: return 2;
    case arch::PolicyKind::Depthwise: return 3;
  }
  return 4;
}

std::string kind_tag(arch::PolicyKind k) {
  switch (k) {
    case arch::PolicyKind::Standard: return "std";
    case arch::PolicyKind::ConstantGroups: return "g";
    case arch::PolicyKind::ConstantGroupSize: return "G";
    case arch::PolicyKind::Depthwise: return "dw";
  }
  return "?";
}

bool policy_less(const std::string &a, const std::string &b) {
  const auto pa = arch::GroupingPolicy::parse(a), pb = arch::GroupingPolicy::parse(b);
  return std::make_pair(kind_rank(pa.kind), pa.value) < std::make_pair(kind_rank(pb.kind), pb.value);
}

struct Stat {
  double mean = 0;
  double std = 0;
  int n = 0;
};

Stat stat_of(const std::vector<double> &v) {
  Stat s;
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / s.n;
  if (s.n > 1) {
    double sq = 0;
    for (double x : v) sq += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(sq / (s.n - 1));
  }
  return s;
}

std::string cell(const std::optional<double> &v, const char *spec) { return v ? fmt(spec, *v) : ""; }

}  // namespace

std::string result_row(const ExperimentResult &r) {
  std::ostringstream os;
  os << r.family << ',' << r.depth << ',' << r.widen << ',' << r.policy << ',' << (r.residual ? "true" : "false")
     << ',' << (r.mode == RunMode::HardTarget ? "hard" : "distilled") << ',' << r.teacher << ',' << r.seed << ','
     << fmt("%.4f", r.top1_test) << ',' << fmt("%.4f", r.top1_train) << ',' << r.params << ',' << r.flops << ','
     << r.epochs;
  return os.str();
}

std::string results_csv(const std::vector<ExperimentResult> &rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto &r : rows) out += result_row(r) + "\n";
  return out;
}

std::vector<ExperimentResult> parse_results_csv(const std::string &text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("results file is empty; expected header: " + std::string(kResultsHeader));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kResultsHeader) throw FormatError("results header must be: " + std::string(kResultsHeader));
  std::vector<ExperimentResult> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = split(line, ',');
    if (f.size() != 13) {
      throw FormatError("results line " + std::to_string(lineno) + ": expected 13 fields, got " +
                        std::to_string(f.size()));
    }
    ExperimentResult r;
    r.family = arch::family_name(arch::parse_family(f[0]));
    r.depth = parse_num<int>(f[1], lineno, "depth");
    r.widen = parse_num<int>(f[2], lineno, "widen");
    r.policy = arch::GroupingPolicy::parse(f[3]).to_string();
    if (f[4] != "true" && f[4] != "false") throw FormatError("results line " + std::to_string(lineno) + ": residual must be true|false");
    r.residual = f[4] == "true";
    if (f[5] == "hard") {
      r.mode = RunMode::HardTarget;
    } else if (f[5] == "distilled") {
      r.mode = RunMode::Distilled;
    } else {
      throw FormatError("results line " + std::to_string(lineno) + ": mode must be hard|distilled");
    }
    r.teacher = f[6].empty() ? "" : arch::GroupingPolicy::parse(f[6]).to_string();
    if ((r.mode == RunMode::Distilled) != !r.teacher.empty()) {
      throw FormatError("results line " + std::to_string(lineno) + ": teacher is required exactly for distilled rows");
    }
    r.seed = parse_num<std::uint64_t>(f[7], lineno, "seed");
    r.top1_test = parse_num<double>(f[8], lineno, "top1_test");
    r.top1_train = parse_num<double>(f[9], lineno, "top1_train");
    r.params = parse_num<std::int64_t>(f[10], lineno, "params");
    r.flops = parse_num<std::int64_t>(f[11], lineno, "flops");
    r.epochs = parse_num<int>(f[12], lineno, "epochs");
    if (r.top1_test < 0 || r.top1_test > 100 || r.top1_train < 0 || r.top1_train > 100) {
      throw FormatError("results line " + std::to_string(lineno) + ": accuracies must lie in [0, 100]");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string variant_label(bool residual, const arch::GroupingPolicy &policy) {
  std::string tag;
  switch (policy.kind) {
    case arch::PolicyKind::Standard: tag = "std"; break;
    case arch::PolicyKind::Depthwise: tag = "dw"; break;
    case arch::PolicyKind::ConstantGroups: tag = "g" + std::to_string(policy.value); break;
    case arch::PolicyKind::ConstantGroupSize: tag = "G" + std::to_string(policy.value); break;
  }
  return std::string(residual ? "R-" : "NR-") + tag;
}

std::string MetricTable::title() const {
  cost::ArchDescriptor a;
  a.family = arch::parse_family(family);
  a.depth = depth;
  a.widen = widen;
  return a.label() + " students NR-" + group;
}

void derive_rows(MetricTable &t) {
  const std::size_t S = t.students.size();
  t.acc_drop.assign(S, std::nullopt);
  t.distil_gain.assign(S, std::nullopt);
  for (std::size_t s = 0; s < S; ++s) {
    if (t.baseline[s] && t.nr_baseline[s]) t.acc_drop[s] = accuracy_drop(*t.baseline[s], *t.nr_baseline[s]);
    std::vector<double> col;
    for (const auto &row : t.distilled) {
      if (row[s]) col.push_back(*row[s]);
    }
    if (t.baseline[s] && !col.empty()) t.distil_gain[s] = distillation_gain(col, *t.baseline[s]);
  }
}

std::vector<MetricTable> build_tables(const std::vector<ExperimentResult> &results) {
  using NetKey = std::tuple<std::string, int, int>;
  std::map<NetKey, std::vector<const ExperimentResult *>> by_net;
  std::vector<NetKey> net_order;
  for (const auto &r : results) {
    NetKey k{r.family, r.depth, r.widen};
    if (!by_net.count(k)) net_order.push_back(k);
    by_net[k].push_back(&r);
  }

  std::vector<MetricTable> tables;
  for (const auto &nk : net_order) {
    const auto &rows = by_net[nk];
    std::map<std::string, std::vector<std::string>> students_by_kind;
    auto add_student = [&](const std::string &p) {
      const std::string kind = kind_tag(arch::GroupingPolicy::parse(p).kind);
      auto &v = students_by_kind[kind];
      if (std::find(v.begin(), v.end(), p) == v.end()) v.push_back(p);
    };
    for (const auto *r : rows) {
      if (!r->residual) add_student(r->policy);
    }
    for (const std::string kind : {"std", "g", "G", "dw"}) {
      auto it = students_by_kind.find(kind);
      if (it == students_by_kind.end()) continue;
      MetricTable t;
      std::tie(t.family, t.depth, t.widen) = nk;
      t.group = kind;
      t.students = it->second;
      std::sort(t.students.begin(), t.students.end(), policy_less);
      for (const auto *r : rows) {
        if (r->mode == RunMode::Distilled && !r->residual &&
            std::find(t.students.begin(), t.students.end(), r->policy) != t.students.end() &&
            std::find(t.teachers.begin(), t.teachers.end(), r->teacher) == t.teachers.end()) {
          t.teachers.push_back(r->teacher);
        }
      }
      std::sort(t.teachers.begin(), t.teachers.end(), policy_less);

      const std::size_t S = t.students.size(), T = t.teachers.size();
      auto gather = [&](auto pred, std::size_t s) {
        std::vector<double> v;
        for (const auto *r : rows) {
          if (pred(*r) && r->policy == t.students[s]) v.push_back(r->top1_test);
        }
        return stat_of(v);
      };
      t.baseline.assign(S, std::nullopt);
      t.nr_baseline.assign(S, std::nullopt);
      t.baseline_n.assign(S, 0);
      t.nr_baseline_n.assign(S, 0);
      t.baseline_std.assign(S, 0);
      t.nr_baseline_std.assign(S, 0);
      t.distilled.assign(T, std::vector<std::optional<double>>(S));
      t.distilled_n.assign(T, std::vector<int>(S, 0));
      t.distilled_std.assign(T, std::vector<double>(S, 0));
      for (std::size_t s = 0; s < S; ++s) {
        auto b = gather([](const ExperimentResult &r) { return r.residual && r.mode == RunMode::HardTarget; }, s);
        if (b.n) t.baseline[s] = b.mean;
        t.baseline_n[s] = b.n;
        t.baseline_std[s] = b.std;
        auto nb = gather([](const ExperimentResult &r) { return !r.residual && r.mode == RunMode::HardTarget; }, s);
        if (nb.n) t.nr_baseline[s] = nb.mean;
        t.nr_baseline_n[s] = nb.n;
        t.nr_baseline_std[s] = nb.std;
        for (std::size_t q = 0; q < T; ++q) {
          auto d = gather(
              [&](const ExperimentResult &r) {
                return !r.residual && r.mode == RunMode::Distilled && r.teacher == t.teachers[q];
              },
              s);
          if (d.n) t.distilled[q][s] = d.mean;
          t.distilled_n[q][s] = d.n;
          t.distilled_std[q][s] = d.std;
        }
      }
      derive_rows(t);
      tables.push_back(std::move(t));
    }
  }
  return tables;
}

std::string metrics_csv(const std::vector<MetricTable> &tables) {
  std::string out = "family,depth,widen,group,row,student,value,std,n\n";
  for (const auto &t : tables) {
    const std::string prefix =
        t.family + "," + std::to_string(t.depth) + "," + std::to_string(t.widen) + "," + t.group + ",";
    auto emit = [&](const std::string &row, std::size_t s, const std::optional<double> &v, double sd, int n) {
      out += prefix + row + "," + t.students[s] + "," + cell(v, "%.4f") + "," + (v ? fmt("%.4f", sd) : "") + "," +
             std::to_string(n) + "\n";
    };
    for (std::size_t q = 0; q < t.teachers.size(); ++q) {
      for (std::size_t s = 0; s < t.students.size(); ++s) {
        emit("teacher:" + t.teachers[q], s, t.distilled[q][s], t.distilled_std[q][s], t.distilled_n[q][s]);
      }
    }
    for (std::size_t s = 0; s < t.students.size(); ++s) emit("baseline", s, t.baseline[s], t.baseline_std[s], t.baseline_n[s]);
    for (std::size_t s = 0; s < t.students.size(); ++s) {
      emit("nr_baseline", s, t.nr_baseline[s], t.nr_baseline_std[s], t.nr_baseline_n[s]);
    }
    for (std::size_t s = 0; s < t.students.size(); ++s) {
      out += prefix + "acc_drop," + t.students[s] + "," + cell(t.acc_drop[s], "%.4f") + ",,\n";
    }
    for (std::size_t s = 0; s < t.students.size(); ++s) {
      out += prefix + "distil_gain," + t.students[s] + "," + cell(t.distil_gain[s], "%.4f") + ",,\n";
    }
  }
  return out;
}

std::string render_tables(const std::vector<MetricTable> &tables) {
  std::ostringstream os;
  bool first = true;
  for (const auto &t : tables) {
    if (!first) os << "\n";
    first = false;
    os << t.title() << "\n";
    std::vector<std::string> header{"I_t-S_s"};
    for (const auto &s : t.students) header.push_back(variant_label(false, arch::GroupingPolicy::parse(s)));
    std::vector<std::vector<std::string>> body;
    auto row = [&](const std::string &label, const std::vector<std::optional<double>> &vals) {
      std::vector<std::string> r{label};
      for (const auto &v : vals) r.push_back(v ? fmt("%.2f", *v) : "-");
      body.push_back(std::move(r));
    };
    for (std::size_t q = 0; q < t.teachers.size(); ++q) {
      row(variant_label(true, arch::GroupingPolicy::parse(t.teachers[q])), t.distilled[q]);
    }
    row("Baseline", t.baseline);
    row("NR-baseline", t.nr_baseline);
    row("Acc. drop", t.acc_drop);
    row("Distil. gain", t.distil_gain);

    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
    for (const auto &r : body) {
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    auto line = [&](const std::vector<std::string> &r) {
      for (std::size_t c = 0; c < r.size(); ++c) {
        if (c) os << "  ";
        const std::size_t padn = width[c] - r[c].size();
        if (c == 0) {
          os << r[c] << std::string(padn, ' ');
        } else {
          os << std::string(padn, ' ') << r[c];
        }
      }
      os << "\n";
    };
    line(header);
    for (const auto &r : body) line(r);
  }
  return os.str();
}

}  // namespace rdl::exp
