#pragma once

// Experiment matrix (baselines, teachers, distilled students), the derived
// accuracy-drop / distillation-gain tables, and activation export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rdl/archspec.hpp"
#include "rdl/costmodel.hpp"
#include "rdl/data.hpp"
#include "rdl/distill.hpp"

namespace rdl::exp {

/// r_baseline - nr_baseline.
double accuracy_drop(double r_baseline, double nr_baseline);

/// max(distilled) - r_baseline. Throws EmptyList on an empty list.
double distillation_gain(const std::vector<double> &distilled, double r_baseline);

enum class RunMode { HardTarget, Distilled };

struct ExperimentResult {
  std::string family;  // family_name()
  int depth = 0;
  int widen = 0;
  std::string policy;  // GroupingPolicy::to_string()
  bool residual = true;
  RunMode mode = RunMode::HardTarget;
  std::string teacher;  // teacher policy (residual, same network) for distilled runs
  std::uint64_t seed = 0;
  double top1_test = 0;   // percent, final epoch
  double top1_train = 0;  // percent, eval mode on the training split
  std::int64_t params = 0;
  std::int64_t flops = 0;
  int epochs = 0;

  bool operator==(const ExperimentResult &) const = default;
};

inline const char *kResultsHeader =
    "family,depth,widen,policy,residual,mode,teacher,seed,top1_test,top1_train,params,flops,epochs";

std::string result_row(const ExperimentResult &r);
std::string results_csv(const std::vector<ExperimentResult> &rows);
/// Throws FormatError on a wrong header or malformed row.
std::vector<ExperimentResult> parse_results_csv(const std::string &text);

/// "NR-g2", "R-G16", "R-std".
std::string variant_label(bool residual, const arch::GroupingPolicy &policy);

/// Students are non-residual variants; teachers are residual variants of the
/// same network. Values are means over seeds; absent cells stay empty.
struct MetricTable {
  std::string family;
  int depth = 0;
  int widen = 0;
  std::string group;  // policy kind shared by the student columns: g, G, std or dw
  std::vector<std::string> students;  // student policies
  std::vector<std::string> teachers;  // teacher policies
  std::vector<std::vector<std::optional<double>>> distilled;  // [teacher][student]
  std::vector<std::optional<double>> baseline;
  std::vector<std::optional<double>> nr_baseline;
  std::vector<std::optional<double>> acc_drop;
  std::vector<std::optional<double>> distil_gain;
  std::vector<std::vector<int>> distilled_n;  // seeds averaged per cell
  std::vector<std::vector<double>> distilled_std;
  std::vector<int> baseline_n, nr_baseline_n;
  std::vector<double> baseline_std, nr_baseline_std;

  std::string title() const;
};

/// Recomputes acc_drop and distil_gain from the raw rows of `table`.
void derive_rows(MetricTable &table);

/// Groups results into one table per (network, student policy kind).
std::vector<MetricTable> build_tables(const std::vector<ExperimentResult> &results);

std::string metrics_csv(const std::vector<MetricTable> &tables);
/// Text layout: teacher rows, Baseline, NR-baseline, Acc. drop, Distil. gain.
std::string render_tables(const std::vector<MetricTable> &tables);

struct DistillParams {
  double temperature = 4.0;
  double alpha = 0.9;
  bool t2 = true;
};

/// "matrix/1" document. Every list may be empty.
struct MatrixConfig {
  std::vector<cost::ArchDescriptor> families;
  std::vector<arch::GroupingPolicy> students;
  std::vector<bool> residual_modes{true, false};
  std::vector<arch::GroupingPolicy> teachers;
  std::vector<std::uint64_t> seeds{0};
  std::string dataset = "synthetic";
  std::optional<int> subset;
  distill::TrainConfig train;
  DistillParams distill;
  int parallelism = 1;

  /// `base_dir` resolves a relative "train_config" path. Throws ConfigError.
  static MatrixConfig from_json(const std::string &text, const std::filesystem::path &base_dir = {});
};

struct RunSpec {
  std::string id;  // unique, filesystem-safe
  cost::ArchDescriptor arch;
  arch::GroupingPolicy policy;
  bool residual = true;
  std::optional<arch::GroupingPolicy> teacher;
  std::uint64_t seed = 0;
  int phase = 0;  // 0: hard-target runs (baselines and teachers), 1: distilled runs
};

/// Per family and seed: R baselines, NR baselines, teachers not already
/// among the R baselines, then every (teacher, student) distilled cell.
std::vector<RunSpec> plan_runs(const MatrixConfig &config);

/// Training seed of a run: derived from the matrix seed and the network
/// variant, so a distilled student starts from its NR baseline's weights.
std::uint64_t run_seed(const RunSpec &run);

struct RunFailure {
  std::string id;
  std::string code;
  std::string message;
};

struct MatrixOutcome {
  std::vector<ExperimentResult> results;  // plan order
  std::vector<RunFailure> failures;
  std::vector<MetricTable> tables;
};

using Logger = std::function<void(const std::string &)>;

/// Runs the plan, `parallelism` cells at a time, phase 0 before phase 1.
/// Writes out_dir/results.csv (header first, then one appended row per
/// finished run, finally rewritten in plan order), out_dir/metrics.csv,
/// out_dir/failures.csv and per-run artifacts under out_dir/runs/<id>/.
/// A failing cell is recorded and the rest continue.
MatrixOutcome run_matrix(const MatrixConfig &config, const std::filesystem::path &out_dir,
                         const Logger &log = {});

/// Penultimate activations (the classifier input) of every sample of the
/// selected classes, eval mode.
struct ActivationMatrix {
  std::vector<int> sample_ids;
  std::vector<int> class_ids;
  std::vector<std::vector<double>> features;
};

/// Throws UnknownClass when a class id is out of range or has no samples.
ActivationMatrix export_activations(const tg::Checkpoint &checkpoint, const arch::NetworkSpec &spec,
                                    const data::Dataset &data, const data::Normalizer &norm,
                                    const std::vector<int> &class_ids);

struct ProjectedPoint {
  int sample_id = 0;
  double x = 0;
  double y = 0;
  int class_id = 0;
};

/// Two leading principal components after per-feature centering. Each
/// component's largest-magnitude loading is made positive. Throws
/// DegenerateData for fewer than 3 rows or identical rows.
std::vector<ProjectedPoint> project_2d(const ActivationMatrix &matrix);

/// The k classes with the lowest per-class accuracy (ties: lower id first).
std::vector<int> worst_classes(const std::vector<int> &predictions, const std::vector<int> &labels,
                               int num_classes, int k);

std::string activations_csv(const ActivationMatrix &matrix);
std::string projection_csv(const std::vector<ProjectedPoint> &points);

}  // namespace rdl::exp
