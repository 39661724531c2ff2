#include "rdl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "rdl/errors.hpp"
#include "rdl/io.hpp"

namespace rdl::data {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kCifarSide = 32;
constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;

std::size_t record_length(int variant) {
  if (variant == 100) return kCifarPixels + 2;
  if (variant == 10) return kCifarPixels + 1;
  throw ConfigError("CIFAR variant must be 10 or 100, got " + std::to_string(variant));
}

void append(Dataset &into, const Dataset &from) {
  into.pixels.insert(into.pixels.end(), from.pixels.begin(), from.pixels.end());
  into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

struct Blob {
  double cy, cx, sigma;
  std::vector<double> color;  // signed per-channel weight
};

Blob random_blob(tg::Rng &rng, const SyntheticSpec &s) {
  Blob b;
  const double margin = std::min(3.0, s.image_size / 4.0);
  b.cy = rng.uniform(margin, s.image_size - 1 - margin);
  b.cx = rng.uniform(margin, s.image_size - 1 - margin);
  b.sigma = s.blob_sigma * rng.uniform(0.75, 1.25);
  for (int c = 0; c < s.channels; ++c) b.color.push_back(rng.uniform(-1.0, 1.0));
  return b;
}

void paint(std::vector<double> &img, const Blob &b, double amplitude, const SyntheticSpec &s) {
  const int S = s.image_size;
  const double inv = 1.0 / (2 * b.sigma * b.sigma);
  for (int y = 0; y < S; ++y) {
    for (int x = 0; x < S; ++x) {
      const double w = amplitude * std::exp(-((y - b.cy) * (y - b.cy) + (x - b.cx) * (x - b.cx)) * inv);
      for (int c = 0; c < s.channels; ++c) img[(static_cast<std::size_t>(c) * S + y) * S + x] += w * b.color[c];
    }
  }
}

Dataset synth_split(const SyntheticSpec &s, const std::vector<std::vector<Blob>> &protos, int per_class,
                    std::uint64_t stream) {
  Dataset d;
  d.channels = s.channels;
  d.height = d.width = s.image_size;
  d.num_classes = s.classes;
  const std::size_t n = d.image_bytes();
  tg::Rng rng(tg::Rng::derive(s.seed, stream));
  std::vector<double> img(n);
  // Interleave classes so any prefix is roughly balanced.
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < s.classes; ++c) {
      std::fill(img.begin(), img.end(), 128.0);
      for (const auto &proto : protos[c]) {
        Blob b = proto;
        b.cy += rng.normal() * s.jitter;
        b.cx += rng.normal() * s.jitter;
        paint(img, b, s.amplitude * rng.uniform(0.7, 1.3), s);
      }
      for (int k = 0; k < s.distractors; ++k) paint(img, random_blob(rng, s), s.amplitude, s);
      for (auto &v : img) v += rng.normal() * s.noise;
      for (std::size_t j = 0; j < n; ++j) d.pixels.push_back(to_byte(img[j]));
      d.labels.push_back(c);
    }
  }
  return d;
}

int parse_int(const std::string &key, const std::string &v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("dataset option " + key + " needs an integer");
  return out;
}

double parse_double(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception &) {
    throw ConfigError("dataset option " + key + " needs a number");
  }
}

}  // namespace

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(std::max(num_classes, 0), 0);
  for (int l : labels) {
    if (l >= 0 && l < num_classes) ++counts[l];
  }
  return counts;
}

Dataset parse_cifar(std::string_view bytes, int variant, const std::string &file_name) {
  const std::size_t rec = record_length(variant);
  if (bytes.size() % rec != 0 || bytes.empty()) {
    const std::size_t expected = (bytes.size() / rec + (bytes.empty() ? 1 : 0)) * rec;
    throw WrongLength(file_name + ": expected a multiple of " + std::to_string(rec) + " bytes (nearest " +
                      std::to_string(expected) + "), got " + std::to_string(bytes.size()));
  }
  Dataset d;
  d.channels = 3;
  d.height = d.width = kCifarSide;
  d.num_classes = variant;
  const std::size_t count = bytes.size() / rec;
  d.pixels.reserve(count * kCifarPixels);
  d.labels.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t off = r * rec;
    const auto *p = reinterpret_cast<const std::uint8_t *>(bytes.data() + off);
    int label;
    if (variant == 100) {
      if (p[0] >= 20) {
        throw CorruptRecord(file_name + ": coarse label " + std::to_string(p[0]) + " at offset " + std::to_string(off));
      }
      label = p[1];
      p += 2;
    } else {
      label = p[0];
      p += 1;
    }
    if (label >= variant) {
      throw CorruptRecord(file_name + ": label " + std::to_string(label) + " at offset " + std::to_string(off));
    }
    d.labels.push_back(label);
    d.pixels.insert(d.pixels.end(), p, p + kCifarPixels);
  }
  return d;
}

DatasetPair load_cifar(const CifarSource &source) {
  record_length(source.variant);
  auto read = [&](const std::string &name) {
    const fs::path path = source.dir / name;
    if (!fs::exists(path)) throw DataError("missing CIFAR file " + path.string());
    return parse_cifar(io::read_file(path), source.variant, path.string());
  };
  DatasetPair pair;
  if (source.variant == 100) {
    pair.train = read("train.bin");
    pair.test = read("test.bin");
  } else {
    pair.train = read("data_batch_1.bin");
    for (int i = 2; i <= 5; ++i) append(pair.train, read("data_batch_" + std::to_string(i) + ".bin"));
    pair.test = read("test_batch.bin");
  }
  return pair;
}

DatasetPair make_synthetic(const SyntheticSpec &s) {
  if (s.classes < 2 || s.train_per_class < 1 || s.test_per_class < 0 || s.image_size < 4 || s.channels < 1 ||
      s.blobs_per_class < 1 || s.distractors < 0 || s.noise < 0 || s.jitter < 0 || s.blob_sigma <= 0) {
    throw ConfigError("synthetic dataset parameters out of range");
  }
  tg::Rng proto_rng(tg::Rng::derive(s.seed, 0));
  std::vector<std::vector<Blob>> protos(s.classes);
  for (auto &p : protos) {
    for (int k = 0; k < s.blobs_per_class; ++k) p.push_back(random_blob(proto_rng, s));
  }
  return {synth_split(s, protos, s.train_per_class, 1), synth_split(s, protos, s.test_per_class, 2)};
}

Dataset subset_per_class(const Dataset &data, int n) {
  if (n < 1) throw ConfigError("--subset must be positive");
  Dataset out = data;
  out.pixels.clear();
  out.labels.clear();
  std::vector<int> taken(std::max(data.num_classes, 0), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int l = data.labels[i];
    if (taken[l]++ >= n) continue;
    out.labels.push_back(l);
    out.pixels.insert(out.pixels.end(), data.image(i), data.image(i) + data.image_bytes());
  }
  return out;
}

DatasetPair load_dataset(const DatasetHandle &handle) {
  DatasetPair pair = std::visit(
      [](const auto &src) -> DatasetPair {
        if constexpr (std::is_same_v<std::decay_t<decltype(src)>, CifarSource>) {
          return load_cifar(src);
        } else {
          return make_synthetic(src);
        }
      },
      handle.source);
  if (handle.subset) {
    pair.train = subset_per_class(pair.train, *handle.subset);
    pair.test = subset_per_class(pair.test, *handle.subset);
  }
  if (pair.train.size() == 0) throw DataError("training split is empty");
  return pair;
}

DatasetHandle parse_handle(const std::string &text) {
  DatasetHandle h;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (kind == "cifar10" || kind == "cifar100") {
    if (rest.empty()) throw ConfigError("dataset '" + kind + "' needs a directory: " + kind + ":<dir>");
    h.source = CifarSource{rest, kind == "cifar10" ? 10 : 100};
    return h;
  }
  if (kind != "synthetic") throw ConfigError("unknown dataset '" + kind + "': expected synthetic, cifar10 or cifar100");
  SyntheticSpec s;
  std::size_t pos = 0;
  while (pos < rest.size()) {
    const auto comma = rest.find(',', pos);
    const std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    pos = comma == std::string::npos ? rest.size() : comma + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("dataset option '" + item + "' must be key=value");
    const std::string key = item.substr(0, eq), v = item.substr(eq + 1);
    if (key == "classes") s.classes = parse_int(key, v);
    else if (key == "train") s.train_per_class = parse_int(key, v);
    else if (key == "test") s.test_per_class = parse_int(key, v);
    else if (key == "size") s.image_size = parse_int(key, v);
    else if (key == "channels") s.channels = parse_int(key, v);
    else if (key == "blobs") s.blobs_per_class = parse_int(key, v);
    else if (key == "sigma") s.blob_sigma = parse_double(key, v);
    else if (key == "jitter") s.jitter = parse_double(key, v);
    else if (key == "noise") s.noise = parse_double(key, v);
    else if (key == "distractors") s.distractors = parse_int(key, v);
    else if (key == "amplitude") s.amplitude = parse_double(key, v);
    else if (key == "seed") s.seed = static_cast<std::uint64_t>(parse_int(key, v));
    else throw ConfigError("unknown synthetic dataset option '" + key + "'");
  }
  h.source = s;
  return h;
}

std::string describe(const DatasetHandle &handle) {
  std::string out;
  if (const auto *c = std::get_if<CifarSource>(&handle.source)) {
    out = "cifar" + std::to_string(c->variant) + ":" + c->dir.string();
  } else {
    const auto &s = std::get<SyntheticSpec>(handle.source);
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "synthetic:classes=%d,train=%d,test=%d,size=%d,channels=%d,blobs=%d,sigma=%g,jitter=%g,noise=%g,"
                  "distractors=%d,amplitude=%g,seed=%llu",
                  s.classes, s.train_per_class, s.test_per_class, s.image_size, s.channels, s.blobs_per_class,
                  s.blob_sigma, s.jitter, s.noise, s.distractors, s.amplitude,
                  static_cast<unsigned long long>(s.seed));
    out = buf;
  }
  if (handle.subset) out += " subset=" + std::to_string(*handle.subset);
  return out;
}

Normalizer Normalizer::fit(const Dataset &train) {
  Normalizer n;
  const std::size_t plane = static_cast<std::size_t>(train.height) * train.width;
  for (int c = 0; c < train.channels; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      const std::uint8_t *p = train.image(i) + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum += p[j];
        sq += static_cast<double>(p[j]) * p[j];
      }
    }
    const double count = static_cast<double>(plane) * train.size();
    const double mean = sum / count;
    const double var = std::max(sq / count - mean * mean, 0.0);
    n.mean.push_back(mean);
    n.stddev.push_back(var > 0 ? std::sqrt(var) : 1.0);
  }
  return n;
}

std::string Normalizer::to_json() const {
  return json{{"schema", "norm/1"}, {"mean", mean}, {"std", stddev}}.dump(2) + "\n";
}

Normalizer Normalizer::from_json(const std::string &text) {
  try {
    const auto j = json::parse(text);
    Normalizer n;
    n.mean = j.at("mean").get<std::vector<double>>();
    n.stddev = j.at("std").get<std::vector<double>>();
    if (n.mean.size() != n.stddev.size()) throw FormatError("normalization mean/std lengths differ");
    return n;
  } catch (const json::exception &e) {
    throw FormatError(std::string("bad normalization file: ") + e.what());
  }
}

tg::Tensor<float> to_tensor(const Dataset &data, std::span<const std::size_t> indices, const Normalizer &norm) {
  if (norm.mean.size() != static_cast<std::size_t>(data.channels)) {
    throw DataError("normalizer has " + std::to_string(norm.mean.size()) + " channels, data has " +
                    std::to_string(data.channels));
  }
  const std::size_t plane = static_cast<std::size_t>(data.height) * data.width;
  tg::Tensor<float> out({static_cast<int>(indices.size()), data.channels, data.height, data.width});
  float *dst = out.data();
  for (std::size_t i : indices) {
    const std::uint8_t *src = data.image(i);
    for (int c = 0; c < data.channels; ++c) {
      const double m = norm.mean[c], inv = 1.0 / norm.stddev[c];
      for (std::size_t j = 0; j < plane; ++j) *dst++ = static_cast<float>((src[c * plane + j] - m) * inv);
    }
  }
  return out;
}

tg::Tensor<float> to_tensor(const Dataset &data, const Normalizer &norm) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return to_tensor(data, all, norm);
}

}  // namespace rdl::data
