#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "rdl/data.hpp"
#include "rdl/errors.hpp"
#include "rdl/io.hpp"
#include "support/cifar_fixture.hpp"

using namespace rdl;
using namespace rdl::data;
using rdl::testing::cifar100_fixture;
using rdl::testing::fixture_pixel;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string &name) {
  const auto dir = fs::temp_directory_path() / ("rdl_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("two-record CIFAR-100 fixture parses to known pixels and fine labels") {
  const auto bytes = cifar100_fixture();
  REQUIRE(bytes.size() == 2 * 3074);
  const auto d = parse_cifar(bytes, 100);
  REQUIRE(d.size() == 2);
  CHECK(d.num_classes == 100);
  CHECK(d.channels == 3);
  CHECK(d.height == 32);
  CHECK(d.labels[0] == 42);
  CHECK(d.labels[1] == 99);
  int mismatches = 0;
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 32; ++y) {
        for (int x = 0; x < 32; ++x) mismatches += d.image(r)[(c * 32 + y) * 32 + x] != fixture_pixel(r, c, y, x);
      }
    }
  }
  CHECK(mismatches == 0);
  CHECK(d.image(0)[0] == 0);
  CHECK(d.image(0)[1024 + 33] == 97);
  CHECK(d.image(1)[1024] == 255);
}

TEST_CASE("CIFAR record errors") {
  const auto bytes = cifar100_fixture();
  CHECK_THROWS_AS(parse_cifar(bytes.substr(0, bytes.size() - 1), 100), WrongLength);
  CHECK_THROWS_AS(parse_cifar(bytes, 10), WrongLength);

  auto bad_fine = bytes;
  bad_fine[3074 + 1] = static_cast<char>(100);
  try {
    parse_cifar(bad_fine, 100, "train.bin");
    FAIL("expected CorruptRecord");
  } catch (const CorruptRecord &e) {
    CHECK(std::string(e.what()).find("offset 3074") != std::string::npos);
  }
  auto bad_coarse = bytes;
  bad_coarse[0] = static_cast<char>(20);
  CHECK_THROWS_AS(parse_cifar(bad_coarse, 100), CorruptRecord);

  std::string ten(3073, '\0');
  ten[0] = 9;
  CHECK(parse_cifar(ten, 10).labels == std::vector<int>{9});
  ten[0] = 10;
  CHECK_THROWS_AS(parse_cifar(ten, 10), CorruptRecord);
}

TEST_CASE("load_cifar reads the split files of a directory") {
  const auto dir = scratch_dir("cifar100");
  io::write_atomic(dir / "train.bin", cifar100_fixture());
  CHECK_THROWS_AS(load_cifar({dir, 100}), DataError);
  io::write_atomic(dir / "test.bin", cifar100_fixture().substr(0, 3074));
  const auto pair = load_dataset(parse_handle("cifar100:" + dir.string()));
  CHECK(pair.train.size() == 2);
  CHECK(pair.test.size() == 1);
  CHECK(pair.test.labels[0] == 42);
  fs::remove_all(dir);
}

TEST_CASE("synthetic data is deterministic in its seed") {
  SyntheticSpec s;
  s.train_per_class = 25;
  const auto a = make_synthetic(s), b = make_synthetic(s);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 200);
  CHECK(a.test.size() == 64);
  for (auto n : a.train.class_counts()) CHECK(n == 25);
  s.seed = 8;
  CHECK(!(make_synthetic(s).train == a.train));
  // Train and test draw from separate streams.
  CHECK(!std::equal(a.test.pixels.begin(), a.test.pixels.end(), a.train.pixels.begin()));
}

TEST_CASE("subset keeps the first N samples of each class in order") {
  SyntheticSpec s;
  const auto full = make_synthetic(s).train;
  const auto sub = subset_per_class(full, 5);
  CHECK(sub.size() == 40);
  for (auto n : sub.class_counts()) CHECK(n == 5);
  std::size_t j = 0;
  std::vector<int> seen(full.num_classes, 0);
  for (std::size_t i = 0; i < full.size() && j < sub.size(); ++i) {
    if (seen[full.labels[i]]++ >= 5) continue;
    CHECK(sub.labels[j] == full.labels[i]);
    CHECK(std::equal(full.image(i), full.image(i) + full.image_bytes(), sub.image(j)));
    ++j;
  }
  CHECK(j == sub.size());
  CHECK_THROWS_AS(subset_per_class(full, 0), ConfigError);
}

TEST_CASE("dataset handles") {
  const auto h = parse_handle("synthetic:classes=4,train=10,size=8,seed=3");
  const auto &s = std::get<SyntheticSpec>(h.source);
  CHECK(s.classes == 4);
  CHECK(s.train_per_class == 10);
  CHECK(s.image_size == 8);
  CHECK(s.seed == 3);
  const auto again = parse_handle(describe(h));
  CHECK(std::get<SyntheticSpec>(again.source) == s);
  CHECK_THROWS_AS(parse_handle("imagenet:/x"), ConfigError);
  CHECK_THROWS_AS(parse_handle("synthetic:colour=2"), ConfigError);
  CHECK_THROWS_AS(parse_handle("cifar10"), ConfigError);
}

TEST_CASE("normalization zero-centers the training split") {
  SyntheticSpec s;
  const auto pair = make_synthetic(s);
  const auto norm = Normalizer::fit(pair.train);
  CHECK(Normalizer::from_json(norm.to_json()) == norm);
  const auto t = to_tensor(pair.train, norm);
  const std::size_t plane = static_cast<std::size_t>(s.image_size) * s.image_size;
  for (int c = 0; c < s.channels; ++c) {
    double sum = 0, sq = 0;
    for (std::size_t i = 0; i < pair.train.size(); ++i) {
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = t.data()[(i * s.channels + c) * plane + j];
        sum += v;
        sq += v * v;
      }
    }
    const double n = static_cast<double>(plane * pair.train.size());
    CHECK(std::abs(sum / n) < 1e-4);
    CHECK(std::abs(sq / n - 1.0) < 1e-3);
  }
  Normalizer wrong{{0.0}, {1.0}};
  CHECK_THROWS_AS(to_tensor(pair.train, wrong), DataError);
}
