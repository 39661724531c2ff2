#include "rdl/distill.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "json.hpp"
#include "rdl/errors.hpp"
#include "rdl/io.hpp"

namespace rdl::distill {

using json = nlohmann::json;
using tg::Mode;
using tg::Tensor;
using tg::Var;

void SgdConfig::validate() const {
  if (!(lr0 > 0)) throw ConfigError("sgd.lr0 must be > 0");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("sgd.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("sgd.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("sgd.batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("sgd.epochs must be >= 1");
}

LrSchedule LrSchedule::step(std::vector<int> milestones, double divide_by) {
  return {Kind::StepDecay, std::move(milestones), divide_by};
}

LrSchedule LrSchedule::exponential(double per_epoch) { return {Kind::ExponentialPerEpoch, {}, per_epoch}; }

LrSchedule LrSchedule::for_family(arch::Family family) {
  switch (family) {
    case arch::Family::ResNet18: return step({30, 60, 90}, 10.0);
    case arch::Family::WRN: return step({30, 60, 90}, 5.0);
    case arch::Family::MobileNetV2: return exponential(0.98);
  }
  return {};
}

void LrSchedule::validate() const {
  if (!(factor > 0)) throw ConfigError("schedule.factor must be > 0");
  if (kind == Kind::StepDecay) {
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (milestones[i] < 0 || (i > 0 && milestones[i] <= milestones[i - 1])) {
        throw ConfigError("schedule.milestones must be non-negative and strictly increasing");
      }
    }
  }
}

double lr_at(const LrSchedule &schedule, double lr0, int epoch) {
  if (epoch < 0) throw DomainError("epoch must be >= 0");
  if (schedule.kind == LrSchedule::Kind::ExponentialPerEpoch) return lr0 * std::pow(schedule.factor, epoch);
  int passed = 0;
  for (int m : schedule.milestones) passed += epoch >= m;
  return lr0 / std::pow(schedule.factor, passed);
}

void AugmentConfig::validate(int image_side) const {
  if (pad < 0) throw ConfigError("augmentation.pad must be >= 0");
  if (pad >= image_side) throw ConfigError("augmentation.pad must be smaller than the image side");
  const int side = crop == 0 ? image_side : crop;
  if (side < 1 || side > image_side + 2 * pad) throw ConfigError("augmentation.crop exceeds the padded image");
  if (!(hflip_p >= 0 && hflip_p <= 1)) throw ConfigError("augmentation.hflip_p must lie in [0, 1]");
}

void DistillConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("distill.temperature must be > 0");
  if (!(alpha >= 0 && alpha <= 1)) throw ConfigError("distill.alpha must lie in [0, 1]");
}

void TrainConfig::validate() const {
  sgd.validate();
  schedule.validate();
  if (augment.pad < 0 || !(augment.hflip_p >= 0 && augment.hflip_p <= 1) || augment.crop < 0) {
    throw ConfigError("augmentation parameters out of range");
  }
  if (distill) distill->validate();
}

namespace {

const std::set<std::string> kTopKeys{"schema", "sgd", "schedule", "augmentation", "distill"};

void reject_unknown(const json &obj, const std::set<std::string> &allowed, const std::string &where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto &[k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
  }
}

template <typename V>
void read(const json &obj, const char *key, V &out) {
  if (obj.contains(key)) out = obj.at(key).get<V>();
}

}  // namespace

std::string TrainConfig::to_json() const {
  json j;
  j["schema"] = "traincfg/1";
  j["sgd"] = {{"lr0", sgd.lr0},         {"momentum", sgd.momentum}, {"weight_decay", sgd.weight_decay},
              {"batch_size", sgd.batch_size}, {"epochs", sgd.epochs},     {"seed", sgd.seed}};
  if (schedule.kind == LrSchedule::Kind::StepDecay) {
    j["schedule"] = {{"kind", "step"}, {"milestones", schedule.milestones}, {"factor", schedule.factor}};
  } else {
    j["schedule"] = {{"kind", "exponential"}, {"factor", schedule.factor}};
  }
  j["augmentation"] = {
      {"enabled", augment.enabled}, {"pad", augment.pad}, {"crop", augment.crop}, {"hflip_p", augment.hflip_p}};
  if (distill) {
    j["distill"] = {{"temperature", distill->temperature},
                    {"alpha", distill->alpha},
                    {"t2", distill->t2},
                    {"teacher_checkpoint", distill->teacher_checkpoint},
                    {"teacher_spec", distill->teacher_spec}};
  } else {
    j["distill"] = nullptr;
  }
  return j.dump(2) + "\n";
}

TrainConfig TrainConfig::from_json(const std::string &text) {
  TrainConfig cfg;
  try {
    const json j = json::parse(text);
    reject_unknown(j, kTopKeys, "traincfg");
    if (j.value("schema", std::string()) != "traincfg/1") {
      throw ConfigError("training config schema must be \"traincfg/1\"");
    }
    if (j.contains("sgd")) {
      const auto &s = j.at("sgd");
      reject_unknown(s, {"lr0", "momentum", "weight_decay", "batch_size", "epochs", "seed"}, "sgd");
      read(s, "lr0", cfg.sgd.lr0);
      read(s, "momentum", cfg.sgd.momentum);
      read(s, "weight_decay", cfg.sgd.weight_decay);
      read(s, "batch_size", cfg.sgd.batch_size);
      read(s, "epochs", cfg.sgd.epochs);
      read(s, "seed", cfg.sgd.seed);
    }
    if (j.contains("schedule")) {
      const auto &s = j.at("schedule");
      reject_unknown(s, {"kind", "milestones", "factor"}, "schedule");
      const std::string kind = s.value("kind", std::string("step"));
      if (kind == "step") {
        cfg.schedule = LrSchedule::step(s.value("milestones", std::vector<int>{30, 60, 90}), s.value("factor", 5.0));
      } else if (kind == "exponential") {
        cfg.schedule = LrSchedule::exponential(s.value("factor", 0.98));
      } else {
        throw ConfigError("schedule.kind must be step or exponential");
      }
    }
    if (j.contains("augmentation")) {
      const auto &a = j.at("augmentation");
      reject_unknown(a, {"enabled", "pad", "crop", "hflip_p"}, "augmentation");
      read(a, "enabled", cfg.augment.enabled);
      read(a, "pad", cfg.augment.pad);
      read(a, "crop", cfg.augment.crop);
      read(a, "hflip_p", cfg.augment.hflip_p);
    }
    if (j.contains("distill") && !j.at("distill").is_null()) {
      const auto &d = j.at("distill");
      reject_unknown(d, {"temperature", "alpha", "t2", "teacher_checkpoint", "teacher_spec"}, "distill");
      DistillConfig dc;
      read(d, "temperature", dc.temperature);
      read(d, "alpha", dc.alpha);
      read(d, "t2", dc.t2);
      read(d, "teacher_checkpoint", dc.teacher_checkpoint);
      read(d, "teacher_spec", dc.teacher_spec);
      cfg.distill = dc;
    }
  } catch (const json::exception &e) {
    throw ConfigError(std::string("bad training config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

std::vector<float> reflect_pad(const float *image, int channels, int height, int width, int pad) {
  const int H = height + 2 * pad, W = width + 2 * pad;
  std::vector<float> out(static_cast<std::size_t>(channels) * H * W);
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < H; ++y) {
      const int sy = reflect_index(y - pad, height);
      for (int x = 0; x < W; ++x) {
        out[(static_cast<std::size_t>(c) * H + y) * W + x] =
            image[(static_cast<std::size_t>(c) * height + sy) * width + reflect_index(x - pad, width)];
      }
    }
  }
  return out;
}

CropChoice draw_crop(const AugmentConfig &cfg, int height, int width, tg::Rng &rng) {
  const int side = cfg.crop == 0 ? height : cfg.crop;
  CropChoice c;
  c.dy = static_cast<int>(rng.below(static_cast<std::uint64_t>(height + 2 * cfg.pad - side + 1)));
  c.dx = static_cast<int>(rng.below(static_cast<std::uint64_t>(width + 2 * cfg.pad - side + 1)));
  c.flip = rng.uniform() < cfg.hflip_p;
  return c;
}

void augment_image(const float *image, int channels, int height, int width, const AugmentConfig &cfg,
                   const CropChoice &choice, float *out) {
  const int side = cfg.crop == 0 ? height : cfg.crop;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < side; ++y) {
      const int sy = reflect_index(choice.dy + y - cfg.pad, height);
      for (int x = 0; x < side; ++x) {
        const int px = choice.flip ? side - 1 - x : x;
        const int sx = reflect_index(choice.dx + px - cfg.pad, width);
        out[(static_cast<std::size_t>(c) * side + y) * side + x] =
            image[(static_cast<std::size_t>(c) * height + sy) * width + sx];
      }
    }
  }
}

template <typename T>
Var<T> kd_loss(const Var<T> &student_logits, const Tensor<T> &teacher_logits, const std::vector<int> &labels,
               double temperature, double alpha, bool t2) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeMismatch("kd_loss: student " + tg::shape_str(student_logits.shape()) + " vs teacher " +
                        tg::shape_str(teacher_logits.shape()));
  }
  const double soft_scale = alpha * (t2 ? temperature * temperature : 1.0);
  auto p = tg::softmax_t(Var<T>::constant(teacher_logits), temperature);
  auto q = tg::softmax_t(student_logits, temperature);
  auto soft = tg::scale(tg::kl_div(p, q), soft_scale);
  auto hard = tg::scale(tg::cross_entropy(student_logits, labels), 1.0 - alpha);
  return tg::add(soft, hard);
}

template <typename T>
void sgd_step(std::vector<tg::Parameter<T>> &params, SgdState<T> &state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.size() != params.size()) {
    state.velocity.clear();
    for (const auto &p : params) state.velocity.emplace_back(p.var.shape());
  }
  const T mu = static_cast<T>(momentum), step = static_cast<T>(lr);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto &var = params[i].var;
    T *w = var.mutable_value().data();
    T *v = state.velocity[i].data();
    const T *g = var.has_grad() ? var.grad().data() : nullptr;
    const T wd = static_cast<T>(params[i].decay ? weight_decay : 0.0);
    for (std::size_t j = 0; j < state.velocity[i].numel(); ++j) {
      const T grad = (g ? g[j] : T(0)) + wd * w[j];
      v[j] = mu * v[j] + grad;
      w[j] -= step * v[j];
    }
  }
}

std::string history_csv(const std::vector<HistoryRow> &rows) {
  std::string out = "epoch,lr,train_loss,train_acc,test_acc\n";
  char buf[160];
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6f,%.4f,%.4f\n", r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc);
    out += buf;
  }
  return out;
}

namespace {

int argmax_row(const float *row, int k) {
  int best = 0;
  for (int j = 1; j < k; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::vector<int> predict_tensor(tg::Network<float> &net, const Tensor<float> &images, int batch_size) {
  tg::NoGradGuard guard;
  const int N = images.rank() == 4 ? images.dim(0) : 0;
  std::vector<int> out;
  out.reserve(N);
  if (N == 0) return out;
  const std::size_t per = images.numel() / N;
  for (int start = 0; start < N; start += batch_size) {
    const int b = std::min(batch_size, N - start);
    Tensor<float> batch({b, images.dim(1), images.dim(2), images.dim(3)},
                        std::vector<float>(images.data() + start * per, images.data() + (start + b) * per));
    auto logits = net.forward(batch, Mode::Eval, nullptr);
    const int k = logits.shape()[1];
    for (int i = 0; i < b; ++i) out.push_back(argmax_row(logits.value().data() + i * k, k));
  }
  return out;
}

double accuracy(const std::vector<int> &pred, const std::vector<int> &labels) {
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

void check_data(const arch::NetworkSpec &spec, const data::Dataset &d, const char *split) {
  if (d.channels != spec.in_channels) {
    throw DataError(std::string(split) + " images have " + std::to_string(d.channels) + " channels, the network takes " +
                    std::to_string(spec.in_channels));
  }
  for (int l : d.labels) {
    if (l < 0 || l >= spec.num_classes) {
      throw DataError(std::string(split) + " label " + std::to_string(l) + " outside the network's " +
                      std::to_string(spec.num_classes) + " classes");
    }
  }
}

constexpr int kEvalBatch = 256;

}  // namespace

TrainResult train(const arch::NetworkSpec &spec, const data::DatasetPair &data, const TrainConfig &config,
                  const std::optional<Teacher> &teacher, const EpochCallback &on_epoch) {
  config.validate();
  const auto &trn = data.train;
  config.augment.validate(trn.height);
  if (trn.height != trn.width) throw DataError("training images must be square");
  if (trn.size() == 0) throw DataError("training split is empty");
  check_data(spec, trn, "train");
  check_data(spec, data.test, "test");
  if (config.distill && !teacher) throw ConfigError("distillation requested without a teacher");

  std::optional<tg::Network<float>> tnet;
  const DistillConfig dcfg = config.distill.value_or(DistillConfig{});
  if (teacher) {
    if (teacher->spec.num_classes != spec.num_classes) {
      throw CheckpointMismatch("teacher predicts " + std::to_string(teacher->spec.num_classes) +
                               " classes, student " + std::to_string(spec.num_classes));
    }
    tnet.emplace(teacher->spec, 0);
    tnet->load_state(teacher->checkpoint);
  }

  const std::uint64_t seed = config.sgd.seed;
  TrainResult result;
  result.normalizer = data::Normalizer::fit(trn);
  const Tensor<float> xtrain = data::to_tensor(trn, result.normalizer);
  const Tensor<float> xtest = data::to_tensor(data.test, result.normalizer);

  tg::Network<float> net(spec, tg::Rng::derive(seed, 1));
  tg::Rng order_rng(tg::Rng::derive(seed, 2));
  tg::Rng aug_rng(tg::Rng::derive(seed, 3));
  tg::Rng drop_rng(tg::Rng::derive(seed, 4));
  SgdState<float> state;

  const int N = static_cast<int>(trn.size());
  const int C = trn.channels, H = trn.height, W = trn.width;
  const int side = config.augment.enabled && config.augment.crop != 0 ? config.augment.crop : H;
  const std::size_t in_per = static_cast<std::size_t>(C) * H * W;
  const std::size_t out_per = static_cast<std::size_t>(C) * side * side;
  std::vector<std::size_t> order(N);

  for (int epoch = 0; epoch < config.sgd.epochs; ++epoch) {
    const double lr = lr_at(config.schedule, config.sgd.lr0, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (int i = N - 1; i > 0; --i) {
      std::swap(order[i], order[order_rng.below(static_cast<std::uint64_t>(i) + 1)]);
    }
    double loss_sum = 0;
    std::size_t correct = 0;
    for (int start = 0; start < N; start += config.sgd.batch_size) {
      const int b = std::min(config.sgd.batch_size, N - start);
      Tensor<float> batch({b, C, side, side});
      std::vector<int> labels(b);
      for (int i = 0; i < b; ++i) {
        const std::size_t idx = order[start + i];
        labels[i] = trn.labels[idx];
        const float *src = xtrain.data() + idx * in_per;
        float *dst = batch.data() + i * out_per;
        if (config.augment.enabled) {
          augment_image(src, C, H, W, config.augment, draw_crop(config.augment, H, W, aug_rng), dst);
        } else {
          std::copy(src, src + in_per, dst);
        }
      }
      auto logits = net.forward(batch, Mode::Train, &drop_rng);
      Var<float> loss;
      if (tnet) {
        Tensor<float> tlogits;
        {
          tg::NoGradGuard guard;
          tlogits = tnet->forward(batch, Mode::Eval, nullptr).value();
        }
        loss = kd_loss(logits, tlogits, labels, dcfg.temperature, dcfg.alpha, dcfg.t2);
      } else {
        loss = tg::cross_entropy(logits, labels);
      }
      const int k = logits.shape()[1];
      for (int i = 0; i < b; ++i) correct += argmax_row(logits.value().data() + i * k, k) == labels[i];
      loss_sum += static_cast<double>(loss.value()[0]) * b;
      net.zero_grad();
      tg::backward(loss);
      sgd_step(net.parameters(), state, lr, config.sgd.momentum, config.sgd.weight_decay);
    }
    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / N;
    row.train_acc = 100.0 * static_cast<double>(correct) / N;
    row.test_acc = accuracy(predict_tensor(net, xtest, kEvalBatch), data.test.labels);
    result.best_test = std::max(result.best_test, row.test_acc);
    result.history.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.final_test = result.history.back().test_acc;
  result.final_train = accuracy(predict_tensor(net, xtrain, kEvalBatch), trn.labels);
  result.checkpoint = net.state();
  return result;
}

std::vector<int> predict(tg::Network<float> &net, const data::Dataset &data, const data::Normalizer &norm,
                         int batch_size) {
  return predict_tensor(net, data::to_tensor(data, norm), batch_size);
}

double evaluate(const tg::Checkpoint &checkpoint, const arch::NetworkSpec &spec, const data::Dataset &data,
                const data::Normalizer &norm) {
  check_data(spec, data, "evaluation");
  tg::Network<float> net(spec, 0);
  net.load_state(checkpoint);
  return accuracy(predict(net, data, norm, kEvalBatch), data.labels);
}

Teacher load_teacher(const DistillConfig &config) {
  if (config.teacher_spec.empty() || config.teacher_checkpoint.empty()) {
    throw ConfigError("distillation needs teacher_spec and teacher_checkpoint");
  }
  Teacher t;
  t.spec = arch::parse_spec(io::read_file(config.teacher_spec));
  t.checkpoint = tg::load_checkpoint(config.teacher_checkpoint);
  tg::Network<float> probe(t.spec, 0);
  probe.load_state(t.checkpoint);
  return t;
}

template Var<float> kd_loss<float>(const Var<float> &, const Tensor<float> &, const std::vector<int> &, double,
                                   double, bool);
template Var<double> kd_loss<double>(const Var<double> &, const Tensor<double> &, const std::vector<int> &, double,
                                     double, bool);
template void sgd_step<float>(std::vector<tg::Parameter<float>> &, SgdState<float> &, double, double, double);
template void sgd_step<double>(std::vector<tg::Parameter<double>> &, SgdState<double> &, double, double, double);

}  // namespace rdl::distill
