// rdl: cost analysis, training, distillation, experiment matrices, reports and
// activation export from one entry point.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rdl/archspec.hpp"
#include "rdl/costmodel.hpp"
#include "rdl/data.hpp"
#include "rdl/distill.hpp"
#include "rdl/errors.hpp"
#include "rdl/experiments.hpp"
#include "rdl/io.hpp"
#include "rdl/parallel.hpp"

namespace fs = std::filesystem;
using namespace rdl;

namespace {

std::string one_line(std::string s) {
  for (auto &c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

[[noreturn]] void usage(const std::string &flag, const std::string &schema, const std::string &message) {
  throw UsageError("flag=" + flag + " expected_schema=" + schema + " message=" + one_line(message));
}

// CLI11 names the error kind, not the flag; the first --token in its message
// is the offending option when there is one.
std::string offending_flag(const std::string &what) {
  const auto at = what.find("--");
  if (at == std::string::npos) return "-";
  const auto end = what.find_first_of(" =:,]", at);
  return what.substr(at, end == std::string::npos ? std::string::npos : end - at);
}

bool parse_bool(const std::string &flag, const std::string &v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  usage(flag, "archspec/1", "expects true|false");
}

/// Timestamped progress lines; the only place wall-clock time is written.
class SidecarLog {
 public:
  explicit SidecarLog(const fs::path &path) : path_(path) {}
  void operator()(const std::string &line) const {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%S", std::localtime(&now));
    io::append_line(path_, std::string(stamp) + " " + line);
    std::cerr << line << "\n";
  }

 private:
  fs::path path_;
};

struct NetworkFlags {
  std::string arch = "wrn";
  int depth = 22;
  int widen = 2;
  std::string policy = "std";
  std::string residual = "true";
  int num_classes = 0;  // 0: taken from the dataset
  double dropout = 0.3;
  std::string spec_path;

  void add(CLI::App *cmd) {
    cmd->add_option("--arch", arch, "wrn | resnet18 | mobilenetv2");
    cmd->add_option("--depth", depth, "WRN depth d, (d-4)/6 blocks per stage");
    cmd->add_option("--widen", widen, "WRN widen factor");
    cmd->add_option("--policy", policy, "std | dw | g=N | G=N");
    cmd->add_option("--residual", residual, "true | false");
    cmd->add_option("--num-classes", num_classes, "classifier width (default: dataset classes, or 100)");
    cmd->add_option("--dropout", dropout, "WRN dropout probability");
    cmd->add_option("--spec", spec_path, "archspec/1 file; overrides the flags above");
  }

  arch::NetworkSpec build(int default_classes) const {
    if (!spec_path.empty()) return arch::parse_spec(io::read_file(spec_path));
    cost::ArchDescriptor a;
    try {
      a.family = arch::parse_family(arch);
    } catch (const Error &e) {
      usage("--arch", "archspec/1", e.what());
    }
    a.depth = depth;
    a.widen = widen;
    a.num_classes = num_classes > 0 ? num_classes : default_classes;
    a.dropout_p = dropout;
    arch::GroupingPolicy p;
    try {
      p = arch::GroupingPolicy::parse(policy);
    } catch (const Error &e) {
      usage("--policy", "archspec/1", e.what());
    }
    return cost::build_network(a, p, parse_bool("--residual", residual));
  }
};

struct TrainFlags {
  std::string config_path;
  std::string dataset = "synthetic";
  int subset = 0;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string out;

  void add(CLI::App *cmd) {
    cmd->add_option("--config", config_path, "traincfg/1 file");
    cmd->add_option("--dataset", dataset, "synthetic[:k=v,...] | cifar10:<dir> | cifar100:<dir>");
    cmd->add_option("--subset", subset, "first N samples per class of each split");
    cmd->add_option("--epochs", epochs, "override sgd.epochs");
    cmd->add_option("--batch-size", batch_size, "override sgd.batch_size");
    cmd->add_option("--lr", lr, "override sgd.lr0");
    cmd->add_option("--seed", seed, "override sgd.seed");
    cmd->add_option("--out", out, "output directory")->required();
  }

  distill::TrainConfig config(arch::Family family) const {
    distill::TrainConfig cfg;
    if (!config_path.empty()) {
      try {
        cfg = distill::TrainConfig::from_json(io::read_file(config_path));
      } catch (const ConfigError &e) {
        usage("--config", "traincfg/1", e.what());
      }
    } else {
      cfg.schedule = distill::LrSchedule::for_family(family);
    }
    if (epochs) cfg.sgd.epochs = *epochs;
    if (batch_size) cfg.sgd.batch_size = *batch_size;
    if (lr) cfg.sgd.lr0 = *lr;
    if (seed) cfg.sgd.seed = *seed;
    try {
      cfg.validate();
    } catch (const ConfigError &e) {
      usage("--config", "traincfg/1", e.what());
    }
    return cfg;
  }

  data::DatasetHandle handle() const {
    data::DatasetHandle h;
    try {
      h = data::parse_handle(dataset);
    } catch (const ConfigError &e) {
      usage("--dataset", "traincfg/1", e.what());
    }
    if (subset < 0) usage("--subset", "traincfg/1", "must be positive");
    if (subset > 0) h.subset = subset;
    return h;
  }
};

void write_run(const fs::path &dir, const arch::NetworkSpec &spec, const distill::TrainConfig &cfg,
               const distill::TrainResult &res) {
  tg::save_checkpoint(dir / "model.ckpt", res.checkpoint);
  io::write_atomic(dir / "spec.json", arch::serialize(spec));
  io::write_atomic(dir / "history.csv", distill::history_csv(res.history));
  io::write_atomic(dir / "norm.json", res.normalizer.to_json());
  io::write_atomic(dir / "traincfg.json", cfg.to_json());
}

std::string class_counts_line(const data::Dataset &d) {
  std::string s;
  const auto counts = d.class_counts();
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (c) s += " ";
    s += std::to_string(counts[c]);
  }
  return s;
}

int run_train(const NetworkFlags &net, const TrainFlags &tf, std::optional<distill::DistillConfig> kd) {
  // Validate every input before any computation.
  const auto handle = tf.handle();
  const auto data = data::load_dataset(handle);
  auto spec = net.build(data.train.num_classes);
  auto cfg = tf.config(spec.family);
  std::optional<distill::Teacher> teacher;
  if (kd) {
    kd->validate();
    teacher = distill::load_teacher(*kd);
    cfg.distill = kd;
  }
  const fs::path out = tf.out;
  fs::create_directories(out);
  SidecarLog log(out / "run.log");
  log("dataset " + data::describe(handle) + " train=" + std::to_string(data.train.size()) +
      " test=" + std::to_string(data.test.size()));
  log("train per-class counts: " + class_counts_line(data.train));
  log("test per-class counts: " + class_counts_line(data.test));
  const auto res = distill::train(spec, data, cfg, teacher, [&](const distill::HistoryRow &r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d lr=%.6g loss=%.4f train_acc=%.2f test_acc=%.2f", r.epoch, r.lr,
                  r.train_loss, r.train_acc, r.test_acc);
    log(buf);
  });
  write_run(out, spec, cfg, res);
  std::cout << "final_test=" << res.final_test << " best_test=" << res.best_test << " final_train=" << res.final_train
            << "\n";
  return 0;
}

struct RunDir {
  arch::NetworkSpec spec;
  tg::Checkpoint ckpt;
  data::Normalizer norm;
};

RunDir load_run(const fs::path &dir) {
  RunDir r;
  r.spec = arch::parse_spec(io::read_file(dir / "spec.json"));
  r.ckpt = tg::load_checkpoint(dir / "model.ckpt");
  r.norm = data::Normalizer::from_json(io::read_file(dir / "norm.json"));
  return r;
}

std::vector<int> parse_class_list(const std::string &text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception &) {
      usage("--classes", "ckpt/1", "expects a comma-separated list of class ids");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Grouped-convolution residual / non-residual networks: cost analysis, training, distillation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // analyze
  auto *analyze = app.add_subcommand("analyze", "parameter and FLOP counts of a network");
  NetworkFlags an_net;
  an_net.add(analyze);
  std::string an_input = "3x32x32", an_format = "table";
  bool an_table = false;
  analyze->add_option("--input", an_input, "CxHxW");
  analyze->add_option("--format", an_format, "json | csv | table");
  analyze->add_flag("--table", an_table, "all nine g/G policy columns, R and NR");

  // train
  auto *train = app.add_subcommand("train", "train on hard targets");
  NetworkFlags tr_net;
  TrainFlags tr_flags;
  tr_net.add(train);
  tr_flags.add(train);

  // distill
  auto *dist = app.add_subcommand("distill", "train a student against a frozen teacher");
  NetworkFlags di_net;
  TrainFlags di_flags;
  di_net.add(dist);
  di_flags.add(dist);
  std::string teacher_dir, teacher_ckpt, teacher_spec, kd_t2 = "on";
  double temperature = 4.0, alpha = 0.9;
  dist->add_option("--teacher", teacher_dir, "teacher run directory (model.ckpt + spec.json)");
  dist->add_option("--teacher-ckpt", teacher_ckpt, "teacher ckpt/1 file");
  dist->add_option("--teacher-spec", teacher_spec, "teacher archspec/1 file");
  dist->add_option("--temperature", temperature, "softmax temperature T");
  dist->add_option("--alpha", alpha, "weight of the soft term");
  dist->add_option("--kd-t2", kd_t2, "scale the soft term by T^2: on | off");

  // matrix
  auto *matrix = app.add_subcommand("matrix", "run an experiment matrix");
  std::string mx_config, mx_out = "matrix_out";
  int mx_parallel = 0;
  matrix->add_option("--config", mx_config, "matrix/1 file")->required();
  matrix->add_option("--out", mx_out, "output directory");
  matrix->add_option("--parallel", mx_parallel, "concurrent cells (overrides the config)");

  // report
  auto *report = app.add_subcommand("report", "accuracy-drop / distillation-gain tables from results");
  std::string rp_results, rp_metrics;
  report->add_option("--results", rp_results, "results CSV")->required();
  report->add_option("--metrics-out", rp_metrics, "also write the metric table CSV here");

  // eval
  auto *eval = app.add_subcommand("eval", "top-1 accuracy of a trained run");
  std::string ev_run, ev_dataset = "synthetic", ev_split = "test";
  int ev_subset = 0;
  eval->add_option("--run", ev_run, "run directory")->required();
  eval->add_option("--dataset", ev_dataset, "dataset handle");
  eval->add_option("--subset", ev_subset, "first N samples per class");
  eval->add_option("--split", ev_split, "train | test");

  // viz
  auto *viz = app.add_subcommand("viz", "penultimate activations and their 2-D projection");
  std::string vz_run, vz_dataset = "synthetic", vz_classes, vz_out, vz_worst_run;
  int vz_worst_k = 0, vz_subset = 0;
  bool vz_project = false;
  viz->add_option("--run", vz_run, "run directory")->required();
  viz->add_option("--dataset", vz_dataset, "dataset handle (test split is used)");
  viz->add_option("--subset", vz_subset, "first N samples per class");
  viz->add_option("--classes", vz_classes, "comma-separated class ids");
  viz->add_option("--worst-k", vz_worst_k, "pick the k classes with the lowest top-1 accuracy");
  viz->add_option("--worst-run", vz_worst_run, "run whose accuracy ranks the classes (default: --run)");
  viz->add_flag("--project", vz_project, "emit 2-D principal-component coordinates");
  viz->add_option("--out", vz_out, "output CSV")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
      return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
      return app.exit(e);
    } catch (const CLI::ParseError &e) {
      const auto *sub = app.get_subcommands().empty() ? nullptr : app.get_subcommands().front();
      std::string schema = "archspec/1";
      if (sub == train || sub == dist) schema = "traincfg/1";
      if (sub == matrix || sub == report) schema = "matrix/1";
      if (sub == viz || sub == eval) schema = "ckpt/1";
      std::cerr << "error: code=UsageError flag=" << offending_flag(e.what()) << " expected_schema=" << schema
                << " message=" << one_line(e.what()) << "\n";
      return 2;
    }

    if (*analyze) {
      cost::Format fmt;
      try {
        fmt = cost::parse_format(an_format);
      } catch (const Error &e) {
        usage("--format", "archspec/1", e.what());
      }
      cost::InputShape input;
      try {
        input = cost::InputShape::parse(an_input);
      } catch (const Error &e) {
        usage("--input", "archspec/1", e.what());
      }
      const int classes = an_net.num_classes > 0 ? an_net.num_classes : 100;
      if (an_table) {
        cost::ArchDescriptor a;
        a.family = arch::parse_family(an_net.arch);
        a.depth = an_net.depth;
        a.widen = an_net.widen;
        a.num_classes = classes;
        a.dropout_p = an_net.dropout;
        std::vector<arch::GroupingPolicy> cols;
        for (int g : {2, 4, 8, 16}) cols.push_back(arch::GroupingPolicy::groups(g));
        for (int G : {1, 2, 4, 8, 16}) cols.push_back(arch::GroupingPolicy::group_size(G));
        std::cout << cost::render_table(cost::cost_table(a, cols, {true, false}, input), fmt);
      } else {
        const auto spec = an_net.build(classes);
        std::cout << cost::render_report(cost::network_cost(spec, input), fmt);
      }
      return 0;
    }
    if (*train) return run_train(tr_net, tr_flags, std::nullopt);
    if (*dist) {
      distill::DistillConfig kd;
      kd.temperature = temperature;
      kd.alpha = alpha;
      if (kd_t2 == "on") {
        kd.t2 = true;
      } else if (kd_t2 == "off") {
        kd.t2 = false;
      } else {
        usage("--kd-t2", "traincfg/1", "expects on|off");
      }
      if (!teacher_dir.empty()) {
        kd.teacher_checkpoint = (fs::path(teacher_dir) / "model.ckpt").string();
        kd.teacher_spec = (fs::path(teacher_dir) / "spec.json").string();
      }
      if (!teacher_ckpt.empty()) kd.teacher_checkpoint = teacher_ckpt;
      if (!teacher_spec.empty()) kd.teacher_spec = teacher_spec;
      if (kd.teacher_checkpoint.empty() || kd.teacher_spec.empty()) {
        usage("--teacher", "traincfg/1", "distillation needs --teacher or --teacher-ckpt with --teacher-spec");
      }
      return run_train(di_net, di_flags, kd);
    }
    if (*matrix) {
      exp::MatrixConfig cfg;
      try {
        cfg = exp::MatrixConfig::from_json(io::read_file(mx_config), fs::path(mx_config).parent_path());
      } catch (const ConfigError &e) {
        usage("--config", "matrix/1", e.what());
      } catch (const DataError &e) {
        usage("--config", "matrix/1", e.what());
      }
      if (mx_parallel > 0) cfg.parallelism = mx_parallel;
      fs::create_directories(mx_out);
      SidecarLog log(fs::path(mx_out) / "run.log");
      const auto outcome = exp::run_matrix(cfg, mx_out, log);
      std::cout << "runs=" << outcome.results.size() << " failures=" << outcome.failures.size() << "\n";
      if (!outcome.tables.empty()) std::cout << exp::render_tables(outcome.tables);
      return outcome.failures.empty() ? 0 : 3;
    }
    if (*report) {
      const auto rows = exp::parse_results_csv(io::read_file(rp_results));
      const auto tables = exp::build_tables(rows);
      if (!rp_metrics.empty()) io::write_atomic(rp_metrics, exp::metrics_csv(tables));
      std::cout << exp::render_tables(tables);
      return 0;
    }
    if (*eval) {
      const auto run = load_run(ev_run);
      auto handle = data::parse_handle(ev_dataset);
      if (ev_subset > 0) handle.subset = ev_subset;
      const auto data = data::load_dataset(handle);
      if (ev_split != "train" && ev_split != "test") usage("--split", "ckpt/1", "expects train|test");
      const auto &split = ev_split == "train" ? data.train : data.test;
      std::cout << "top1=" << distill::evaluate(run.ckpt, run.spec, split, run.norm) << "\n";
      return 0;
    }
    if (*viz) {
      const auto run = load_run(vz_run);
      auto handle = data::parse_handle(vz_dataset);
      if (vz_subset > 0) handle.subset = vz_subset;
      const auto data = data::load_dataset(handle);
      std::vector<int> classes;
      if (vz_worst_k > 0) {
        const auto ranker = vz_worst_run.empty() ? run : load_run(vz_worst_run);
        tg::Network<float> net(ranker.spec, 0);
        net.load_state(ranker.ckpt);
        const auto pred = distill::predict(net, data.test, ranker.norm);
        classes = exp::worst_classes(pred, data.test.labels, ranker.spec.num_classes, vz_worst_k);
      } else if (!vz_classes.empty()) {
        classes = parse_class_list(vz_classes);
      } else {
        usage("--classes", "ckpt/1", "give --classes or --worst-k");
      }
      const auto m = exp::export_activations(run.ckpt, run.spec, data.test, run.norm, classes);
      io::write_atomic(vz_out, vz_project ? exp::projection_csv(exp::project_2d(m)) : exp::activations_csv(m));
      std::cout << "rows=" << m.features.size() << " classes=";
      for (std::size_t i = 0; i < classes.size(); ++i) std::cout << (i ? "," : "") << classes[i];
      std::cout << "\n";
      return 0;
    }
  } catch (const UsageError &e) {
    std::cerr << "error: code=UsageError " << e.what() << "\n";
    return 2;
  } catch (const Error &e) {
    std::cerr << "error: code=" << e.code() << " message=" << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception &e) {
    std::cerr << "error: code=InternalError message=" << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
