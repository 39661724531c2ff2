#pragma once

// Training engine: SGD with momentum and coupled weight decay, step or
// exponential learning-rate schedules, pad/crop/flip augmentation and the
// temperature-softened distillation objective.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rdl/archspec.hpp"
#include "rdl/checkpoint.hpp"
#include "rdl/data.hpp"
#include "rdl/model.hpp"

namespace rdl::distill {

struct SgdConfig {
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 4e-4;
  int batch_size = 128;
  int epochs = 120;
  std::uint64_t seed = 0;

  /// Throws ConfigError on lr0 <= 0, momentum outside [0, 1), negative decay,
  /// or non-positive batch size / epochs.
  void validate() const;
  bool operator==(const SgdConfig &) const = default;
};

struct LrSchedule {
  enum class Kind { StepDecay, ExponentialPerEpoch };
  Kind kind = Kind::StepDecay;
  std::vector<int> milestones{30, 60, 90};  // StepDecay: lr divided by `factor` at each
  double factor = 5.0;                       // StepDecay divisor, or per-epoch multiplier

  static LrSchedule step(std::vector<int> milestones, double divide_by);
  static LrSchedule exponential(double per_epoch);
  /// ResNet-18: /10 at 30/60/90; WRN: /5 at 30/60/90; MobileNetV2: x0.98 per epoch.
  static LrSchedule for_family(arch::Family family);

  void validate() const;
  bool operator==(const LrSchedule &) const = default;
};

/// Learning rate for 0-indexed `epoch`; a milestone e takes effect from the
/// start of epoch e.
double lr_at(const LrSchedule &schedule, double lr0, int epoch);

struct AugmentConfig {
  bool enabled = true;
  int pad = 4;           // reflection padding on each side
  int crop = 0;          // square crop side; 0 means the image side
  double hflip_p = 0.5;

  void validate(int image_side) const;
  bool operator==(const AugmentConfig &) const = default;
};

struct DistillConfig {
  double temperature = 4.0;
  double alpha = 0.9;
  bool t2 = true;  // scale the soft term by T^2
  std::string teacher_checkpoint;
  std::string teacher_spec;  // path to an archspec/1 document

  void validate() const;
  bool operator==(const DistillConfig &) const = default;
};

/// "traincfg/1" document.
struct TrainConfig {
  SgdConfig sgd;
  LrSchedule schedule;
  AugmentConfig augment;
  std::optional<DistillConfig> distill;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string &text);
  bool operator==(const TrainConfig &) const = default;
};

/// x mirrored about the border without repeating the edge pixel.
int reflect_index(int i, int n);

/// [C, H, W] -> [C, H + 2 pad, W + 2 pad] by edge reflection.
std::vector<float> reflect_pad(const float *image, int channels, int height, int width, int pad);

struct CropChoice {
  int dy = 0;
  int dx = 0;
  bool flip = false;
};

CropChoice draw_crop(const AugmentConfig &cfg, int height, int width, tg::Rng &rng);

/// Pads, crops at (dy, dx) in padded coordinates, then mirrors horizontally
/// when requested. `out` holds C * crop * crop values.
void augment_image(const float *image, int channels, int height, int width, const AugmentConfig &cfg,
                   const CropChoice &choice, float *out);

/// alpha * s * KL(softmax_T(teacher) || softmax_T(student)) + (1 - alpha) * CE,
/// with s = T^2 when `t2` else 1. The teacher enters as a constant.
template <typename T>
tg::Var<T> kd_loss(const tg::Var<T> &student_logits, const tg::Tensor<T> &teacher_logits,
                   const std::vector<int> &labels, double temperature, double alpha, bool t2 = true);

template <typename T>
struct SgdState {
  std::vector<tg::Tensor<T>> velocity;  // lazily sized to the parameter list
};

/// v <- momentum v + (g + wd p) ; p <- p - lr v. Decay applies only to
/// parameters flagged `decay`. Parameters without a gradient count as g = 0.
template <typename T>
void sgd_step(std::vector<tg::Parameter<T>> &params, SgdState<T> &state, double lr, double momentum,
              double weight_decay);

struct HistoryRow {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;  // running train-mode accuracy over the epoch, percent
  double test_acc = 0;   // eval-mode accuracy after the epoch, percent

  bool operator==(const HistoryRow &) const = default;
};

std::string history_csv(const std::vector<HistoryRow> &rows);

struct Teacher {
  arch::NetworkSpec spec;
  tg::Checkpoint checkpoint;
};

struct TrainResult {
  tg::Checkpoint checkpoint;
  data::Normalizer normalizer;
  std::vector<HistoryRow> history;
  double final_test = 0;
  double best_test = 0;
  double final_train = 0;  // eval-mode accuracy on the training split, percent
};

/// Trains a fresh network. Everything random derives from sgd.seed; with
/// deterministic mode on, the result is bitwise reproducible. The teacher,
/// when given, runs in eval mode without gradient recording. Throws
/// CheckpointMismatch when the teacher checkpoint does not fit its spec.
using EpochCallback = std::function<void(const HistoryRow &)>;

TrainResult train(const arch::NetworkSpec &spec, const data::DatasetPair &data, const TrainConfig &config,
                  const std::optional<Teacher> &teacher = std::nullopt, const EpochCallback &on_epoch = {});

/// Eval-mode predictions of a loaded network.
std::vector<int> predict(tg::Network<float> &net, const data::Dataset &data, const data::Normalizer &norm,
                         int batch_size = 256);

/// Top-1 accuracy in percent.
double evaluate(const tg::Checkpoint &checkpoint, const arch::NetworkSpec &spec, const data::Dataset &data,
                const data::Normalizer &norm);

/// Loads teacher spec and checkpoint paths from a distill config.
Teacher load_teacher(const DistillConfig &config);

}  // namespace rdl::distill
