#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"
#include "rdl/errors.hpp"
#include "rdl/experiments.hpp"
#include "rdl/io.hpp"
#include "rdl/parallel.hpp"

namespace rdl::exp {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

void reject_unknown(const json &obj, const std::set<std::string> &allowed, const std::string &where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto &[k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

std::vector<arch::GroupingPolicy> policies(const json &j, const char *key) {
  std::vector<arch::GroupingPolicy> out;
  if (!j.contains(key)) return out;
  for (const auto &p : j.at(key)) out.push_back(arch::GroupingPolicy::parse(p.get<std::string>()));
  return out;
}

std::uint64_t fnv1a(const std::string &s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string run_id(const cost::ArchDescriptor &a, bool residual, const arch::GroupingPolicy &p, std::uint64_t seed,
                   const std::optional<arch::GroupingPolicy> &teacher) {
  std::string id = a.label() + "_" + variant_label(residual, p) + "_s" + std::to_string(seed);
  if (teacher) id += "_from_" + variant_label(true, *teacher);
  return id;
}

/// Runs `jobs` on up to `workers` threads; job i receives index i.
void run_pool(std::size_t jobs, int workers, const std::function<void(std::size_t)> &job) {
  workers = std::max(1, std::min<int>(workers, static_cast<int>(jobs)));
  if (workers == 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) job(i);
    });
  }
  for (auto &t : threads) t.join();
}

}  // namespace

MatrixConfig MatrixConfig::from_json(const std::string &text, const fs::path &base_dir) {
  MatrixConfig cfg;
  try {
    const json j = json::parse(text);
    reject_unknown(j, {"schema", "families", "students", "residual_modes", "teachers", "seeds", "dataset", "subset",
                       "train_config", "distill", "parallelism"},
                   "matrix config");
    if (j.contains("schema") && j.at("schema") != "matrix/1") {
      throw ConfigError("matrix config schema must be \"matrix/1\"");
    }
    if (j.contains("families")) {
      for (const auto &f : j.at("families")) {
        reject_unknown(f, {"family", "depth", "widen", "dropout_p"}, "families entry");
        cost::ArchDescriptor a;
        a.family = arch::parse_family(f.at("family").get<std::string>());
        a.depth = f.value("depth", a.family == arch::Family::ResNet18 ? 18 : 0);
        a.widen = f.value("widen", 1);
        a.dropout_p = f.value("dropout_p", 0.3);
        if (a.family == arch::Family::WRN && (a.depth < 10 || (a.depth - 4) % 6 != 0)) {
          throw ConfigError("WRN depth " + std::to_string(a.depth) + " does not give an integer block count");
        }
        cfg.families.push_back(a);
      }
    }
    cfg.students = policies(j, "students");
    cfg.teachers = policies(j, "teachers");
    if (j.contains("residual_modes")) cfg.residual_modes = j.at("residual_modes").get<std::vector<bool>>();
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("dataset")) cfg.dataset = j.at("dataset").get<std::string>();
    if (j.contains("subset") && !j.at("subset").is_null()) cfg.subset = j.at("subset").get<int>();
    if (j.contains("train_config")) {
      const auto &tc = j.at("train_config");
      if (tc.is_string()) {
        fs::path p = tc.get<std::string>();
        if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
        cfg.train = distill::TrainConfig::from_json(io::read_file(p));
      } else {
        json doc = tc;
        if (!doc.contains("schema")) doc["schema"] = "traincfg/1";
        cfg.train = distill::TrainConfig::from_json(doc.dump());
      }
    }
    if (cfg.train.distill) throw ConfigError("train_config may not name a teacher inside a matrix; use \"teachers\"");
    if (j.contains("distill")) {
      const auto &d = j.at("distill");
      reject_unknown(d, {"temperature", "alpha", "t2"}, "distill");
      cfg.distill.temperature = d.value("temperature", cfg.distill.temperature);
      cfg.distill.alpha = d.value("alpha", cfg.distill.alpha);
      cfg.distill.t2 = d.value("t2", cfg.distill.t2);
      distill::DistillConfig{cfg.distill.temperature, cfg.distill.alpha, cfg.distill.t2, "", ""}.validate();
    }
    cfg.parallelism = j.value("parallelism", 1);
    if (cfg.parallelism < 1) throw ConfigError("parallelism must be >= 1");
  } catch (const json::exception &e) {
    throw ConfigError(std::string("bad matrix config: ") + e.what());
  } catch (const DataError &e) {
    throw ConfigError(std::string("bad matrix config: ") + e.what());
  }
  data::parse_handle(cfg.dataset);
  return cfg;
}

std::vector<RunSpec> plan_runs(const MatrixConfig &config) {
  const bool with_r = std::count(config.residual_modes.begin(), config.residual_modes.end(), true) > 0;
  const bool with_nr = std::count(config.residual_modes.begin(), config.residual_modes.end(), false) > 0;
  std::vector<RunSpec> plan;
  std::set<std::string> ids;
  auto push = [&](RunSpec r) {
    if (ids.insert(r.id).second) plan.push_back(std::move(r));
  };
  for (const auto &a : config.families) {
    for (std::uint64_t seed : config.seeds) {
      auto make = [&](const arch::GroupingPolicy &p, bool residual, std::optional<arch::GroupingPolicy> teacher) {
        RunSpec r;
        r.arch = a;
        r.policy = p;
        r.residual = residual;
        r.teacher = teacher;
        r.seed = seed;
        r.phase = teacher ? 1 : 0;
        r.id = run_id(a, residual, p, seed, teacher);
        return r;
      };
      if (with_r) {
        for (const auto &p : config.students) push(make(p, true, std::nullopt));
      }
      if (with_nr) {
        for (const auto &p : config.students) push(make(p, false, std::nullopt));
      }
      for (const auto &q : config.teachers) push(make(q, true, std::nullopt));
      for (const auto &q : config.teachers) {
        for (const auto &p : config.students) push(make(p, false, q));
      }
    }
  }
  return plan;
}

std::uint64_t run_seed(const RunSpec &run) {
  const std::string key = run.arch.label() + "|" + run.policy.to_string() + "|" + (run.residual ? "R" : "NR");
  return tg::Rng::derive(run.seed, fnv1a(key));
}

MatrixOutcome run_matrix(const MatrixConfig &config, const fs::path &out_dir, const Logger &log) {
  const auto plan = plan_runs(config);
  fs::create_directories(out_dir);
  const fs::path results_path = out_dir / "results.csv";
  io::write_atomic(results_path, std::string(kResultsHeader) + "\n");

  MatrixOutcome outcome;
  std::vector<std::optional<ExperimentResult>> slots(plan.size());
  std::map<std::string, RunFailure> failures;
  std::map<std::string, distill::Teacher> trained;  // R hard-target runs by id
  std::mutex mu;

  data::DatasetPair data;
  if (!plan.empty()) {
    auto handle = data::parse_handle(config.dataset);
    if (config.subset) handle.subset = config.subset;
    data = data::load_dataset(handle);
  }
  const cost::InputShape input{data.train.channels, data.train.height, data.train.width};

  auto say = [&](const std::string &msg) {
    if (!log) return;
    std::lock_guard lock(mu);
    log(msg);
  };

  auto execute = [&](std::size_t i) {
    const RunSpec &run = plan[i];
    try {
      cost::ArchDescriptor a = run.arch;
      a.num_classes = data.train.num_classes;
      const auto spec = cost::build_network(a, run.policy, run.residual);
      distill::TrainConfig cfg = config.train;
      cfg.sgd.seed = run_seed(run);
      std::optional<distill::Teacher> teacher;
      const fs::path dir = out_dir / "runs" / run.id;
      if (run.teacher) {
        const std::string tid = run_id(run.arch, true, *run.teacher, run.seed, std::nullopt);
        {
          std::lock_guard lock(mu);
          auto it = trained.find(tid);
          if (it == trained.end()) throw DataError("teacher run " + tid + " did not complete");
          teacher = it->second;
        }
        const fs::path tdir = out_dir / "runs" / tid;
        cfg.distill = distill::DistillConfig{config.distill.temperature, config.distill.alpha, config.distill.t2,
                                             (tdir / "model.ckpt").string(), (tdir / "spec.json").string()};
      }
      say("start " + run.id);
      const auto res = distill::train(spec, data, cfg, teacher);
      tg::save_checkpoint(dir / "model.ckpt", res.checkpoint);
      io::write_atomic(dir / "spec.json", arch::serialize(spec));
      io::write_atomic(dir / "history.csv", distill::history_csv(res.history));
      io::write_atomic(dir / "norm.json", res.normalizer.to_json());
      io::write_atomic(dir / "traincfg.json", cfg.to_json());

      const auto cost = cost::network_cost(spec, input);
      ExperimentResult r;
      r.family = arch::family_name(a.family);
      r.depth = spec.depth;
      r.widen = spec.widen_factor;
      r.policy = run.policy.to_string();
      r.residual = run.residual;
      r.mode = run.teacher ? RunMode::Distilled : RunMode::HardTarget;
      r.teacher = run.teacher ? run.teacher->to_string() : "";
      r.seed = run.seed;
      r.top1_test = res.final_test;
      r.top1_train = res.final_train;
      r.params = cost.totals.params;
      r.flops = cost.totals.flops;
      r.epochs = static_cast<int>(res.history.size());
      io::append_line(results_path, result_row(r));
      char buf[160];
      std::snprintf(buf, sizeof buf, "done  %s top1_test=%.2f top1_train=%.2f", run.id.c_str(), r.top1_test,
                    r.top1_train);
      say(buf);
      std::lock_guard lock(mu);
      slots[i] = r;
      if (run.residual && !run.teacher) trained[run.id] = distill::Teacher{spec, res.checkpoint};
    } catch (const Error &e) {
      say("fail  " + run.id + " " + e.code() + ": " + e.what());
      std::lock_guard lock(mu);
      failures[run.id] = {run.id, e.code(), e.what()};
    } catch (const std::exception &e) {
      say("fail  " + run.id + " " + e.what());
      std::lock_guard lock(mu);
      failures[run.id] = {run.id, "InternalError", e.what()};
    }
  };

  const int saved_threads = thread_count();
  if (config.parallelism > 1) set_thread_count(std::max(1, saved_threads / config.parallelism));
  for (int phase : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < plan.size(); ++i) {
      if (plan[i].phase == phase) idx.push_back(i);
    }
    run_pool(idx.size(), config.parallelism, [&](std::size_t k) { execute(idx[k]); });
  }
  set_thread_count(saved_threads);

  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (slots[i]) outcome.results.push_back(*slots[i]);
    auto it = failures.find(plan[i].id);
    if (it != failures.end()) outcome.failures.push_back(it->second);
  }
  outcome.tables = build_tables(outcome.results);

  io::write_atomic(results_path, results_csv(outcome.results));
  io::write_atomic(out_dir / "metrics.csv", metrics_csv(outcome.tables));
  std::string fcsv = "id,code,message\n";
  for (const auto &f : outcome.failures) {
    std::string msg = f.message;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    fcsv += f.id + "," + f.code + "," + msg + "\n";
  }
  io::write_atomic(out_dir / "failures.csv", fcsv);
  return outcome;
}

}  // namespace rdl::exp
