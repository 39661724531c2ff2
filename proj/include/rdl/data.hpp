#pragma once

// Image classification datasets: CIFAR binary files and a seeded synthetic
// generator, both stored as channel-major byte planes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rdl/tensor.hpp"

namespace rdl::data {

struct Dataset {
  int channels = 3;
  int height = 32;
  int width = 32;
  int num_classes = 0;
  std::vector<std::uint8_t> pixels;  // [N, C, H, W]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_bytes() const { return static_cast<std::size_t>(channels) * height * width; }
  const std::uint8_t *image(std::size_t i) const { return pixels.data() + i * image_bytes(); }
  /// Sample count per class id, for every class in [0, num_classes).
  std::vector<std::size_t> class_counts() const;

  bool operator==(const Dataset &) const = default;
};

struct DatasetPair {
  Dataset train;
  Dataset test;
};

struct CifarSource {
  std::filesystem::path dir;
  int variant = 100;  // 10 or 100
};

/// Classes are distinguished by a few class-specific Gaussian blobs whose
/// positions jitter per sample, under pixel noise and random distractor
/// blobs. Fully determined by `seed`.
struct SyntheticSpec {
  int classes = 8;
  int train_per_class = 64;
  int test_per_class = 8;
  int image_size = 16;
  int channels = 3;
  int blobs_per_class = 3;
  double blob_sigma = 1.8;     // pixels
  double jitter = 1.5;         // pixels, std of blob displacement
  double noise = 30.0;         // grey levels, std of additive pixel noise
  int distractors = 2;         // random blobs per image
  double amplitude = 90.0;     // grey levels
  std::uint64_t seed = 7;

  bool operator==(const SyntheticSpec &) const = default;
};

struct DatasetHandle {
  std::variant<CifarSource, SyntheticSpec> source;
  std::optional<int> subset;  // first N samples per class of each split
};

/// Parses one CIFAR binary file. Records are [coarse, fine, 3072 pixels] for
/// CIFAR-100 (fine label kept) and [label, 3072 pixels] for CIFAR-10.
/// Throws WrongLength when the size is not a multiple of the record length
/// and CorruptRecord when a label is out of range.
Dataset parse_cifar(std::string_view bytes, int variant, const std::string &file_name = "<memory>");

/// Reads train.bin/test.bin (CIFAR-100) or data_batch_1..5.bin/test_batch.bin
/// (CIFAR-10) from `dir`. Throws DataError for missing files.
DatasetPair load_cifar(const CifarSource &source);

DatasetPair make_synthetic(const SyntheticSpec &spec);

/// First `n` samples of each class, order preserved.
Dataset subset_per_class(const Dataset &data, int n);

DatasetPair load_dataset(const DatasetHandle &handle);

/// Parses "synthetic[:key=value,...]" or "cifar10:<dir>" / "cifar100:<dir>".
DatasetHandle parse_handle(const std::string &text);
std::string describe(const DatasetHandle &handle);

/// Per-channel mean and standard deviation of the byte values.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static Normalizer fit(const Dataset &train);
  std::string to_json() const;
  static Normalizer from_json(const std::string &text);

  bool operator==(const Normalizer &) const = default;
};

/// Normalized float images [N, C, H, W] for the listed samples.
tg::Tensor<float> to_tensor(const Dataset &data, std::span<const std::size_t> indices, const Normalizer &norm);
tg::Tensor<float> to_tensor(const Dataset &data, const Normalizer &norm);

}  // namespace rdl::data
