#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "owattr/dct.hpp"
#include "owattr/synthdata.hpp"
#include "owattr/textio.hpp"

using namespace owattr;
namespace fs = std::filesystem;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.k_known = 2;
  c.k_novel = 3;
  c.feature_dim = 8;
  c.labeled_per_known = 6;
  c.unlabeled_per_known = 4;
  c.unlabeled_per_novel = 5;
  c.seed = 9;
  return c;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("owattr_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("default geometry sizes and invariants") {
  const SynthDataset ds = generate(SynthConfig{});
  CHECK(ds.n_labeled() == 750);
  CHECK(ds.n_unlabeled() == 1750);
  const auto& c = ds.config;
  for (int a = 0; a < c.k_total(); ++a) {
    double n = 0;
    for (double v : ds.class_means.row(a)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0));
    for (int b = a + 1; b < c.k_total(); ++b)
      CHECK(angle_between(ds.class_means.row(a), ds.class_means.row(b)) >= c.min_angle_gamma);
  }
  for (std::size_t i = 0; i < ds.n_labeled(); ++i) {
    const int y = ds.labeled_labels[i];
    REQUIRE(y < c.k_known);
    REQUIRE(angle_between(ds.labeled.row(i), ds.class_means.row(y)) <= c.intra_noise_eta + 1e-12);
  }
  for (std::size_t i = 0; i < ds.n_unlabeled(); ++i)
    REQUIRE(angle_between(ds.unlabeled.row(i), ds.class_means.row(ds.unlabeled_truth[i])) <=
            c.intra_noise_eta + 1e-12);
  for (int k = 0; k < c.k_total(); ++k) CHECK(ds.known_role[k] == (k < c.k_known));
}

TEST_CASE("forced planar geometry") {
  SynthConfig c;
  c.k_known = 2;
  c.k_novel = 0;
  c.feature_dim = 2;
  c.min_angle_gamma = std::acos(-1.0) / 2;
  c.intra_noise_eta = 0.1;
  c.labeled_per_known = 20;
  c.unlabeled_per_known = 5;
  const SynthDataset ds = generate(c);
  CHECK(angle_between(ds.class_means.row(0), ds.class_means.row(1)) >= c.min_angle_gamma);
  for (std::size_t i = 0; i < ds.n_labeled(); ++i)
    CHECK(angle_between(ds.labeled.row(i), ds.class_means.row(ds.labeled_labels[i])) <= 0.1 + 1e-12);
}

TEST_CASE("generation is deterministic and seed dependent") {
  const SynthConfig c = small_config();
  CHECK(generate(c) == generate(c));
  SynthConfig d = c;
  d.seed = 10;
  CHECK_FALSE(generate(c) == generate(d));
}

TEST_CASE("invalid or infeasible geometry is rejected") {
  SynthConfig c = small_config();
  c.intra_noise_eta = 0.4;
  c.min_angle_gamma = 0.7;
  CHECK_THROWS_AS(generate(c), std::invalid_argument);
  c = small_config();
  c.feature_dim = 2;
  c.min_angle_gamma = 2.0;
  c.intra_noise_eta = 0.1;
  CHECK_THROWS_AS(generate(c), GeometryError);
  c = small_config();
  c.k_known = 0;
  CHECK_THROWS(generate(c));
}

TEST_CASE("augmented views stay within their angular budget") {
  const SynthDataset ds = generate(small_config());
  const double eta = ds.config.intra_noise_eta;
  std::size_t checked = 0;
  for (int epoch = 0; epoch < 20; ++epoch)
    for (std::size_t i = 0; i < ds.n_unlabeled(); ++i) {
      const auto x = ds.unlabeled.row(i);
      const auto w = augment(x, ds.config, ds.unlabeled_id(i), epoch, 1, Strength::weak);
      REQUIRE(angle_between(x, w) <= eta / 4 + 1e-12);
      const auto s = augment(x, ds.config, ds.unlabeled_id(i), epoch, 1, Strength::strong);
      double n = 0;
      for (double v : s) n += v * v;
      REQUIRE(std::sqrt(n) == doctest::Approx(1.0));
      CHECK(augment(x, ds.config, ds.unlabeled_id(i), epoch, 1, Strength::weak) == w);
      ++checked;
    }
  CHECK(checked == 20 * ds.n_unlabeled());

  SynthConfig still = small_config();
  still.intra_noise_eta = 0.0;
  const SynthDataset z = generate(still);
  const auto w = augment(z.labeled.row(0), z.config, 0, 0, 0, Strength::weak);
  for (std::size_t j = 0; j < w.size(); ++j) CHECK(w[j] == doctest::Approx(z.labeled.row(0)[j]).epsilon(1e-15));
}

TEST_CASE("image fingerprints are separable by a nearest-fingerprint rule") {
  SynthConfig c = SynthConfig::image_preset();
  c.labeled_per_known = 10;
  c.unlabeled_per_known = 5;
  c.unlabeled_per_novel = 10;
  const SynthDataset ds = generate(c);
  const auto support = fingerprint_support(c);
  const std::size_t side = static_cast<std::size_t>(c.image_side);
  std::vector<Tensor> prints;
  for (int k = 0; k < c.k_total(); ++k) {
    const auto row = ds.class_means.row(static_cast<std::size_t>(k));
    prints.push_back(dct2(Tensor({side, side}, std::vector<double>(row.begin(), row.end()))));
  }
  auto classify = [&](std::span<const double> x) {
    const Tensor f = dct2(Tensor({side, side}, std::vector<double>(x.begin(), x.end())));
    int best = -1;
    double best_score = -1e300;
    for (int k = 0; k < c.k_total(); ++k) {
      double s = 0.0;
      for (auto idx : support[static_cast<std::size_t>(k)]) s += f[idx] * prints[static_cast<std::size_t>(k)][idx];
      if (s > best_score) {
        best_score = s;
        best = k;
      }
    }
    return best;
  };
  for (std::size_t i = 0; i < ds.n_labeled(); ++i) REQUIRE(classify(ds.labeled.row(i)) == ds.labeled_labels[i]);
  for (std::size_t i = 0; i < ds.n_unlabeled(); ++i)
    REQUIRE(classify(ds.unlabeled.row(i)) == ds.unlabeled_truth[i]);
}

TEST_CASE("save and load round trip, tamper detection") {
  const SynthDataset ds = generate(small_config());
  const fs::path dir = scratch("dataset");
  save_dataset(ds, dir);
  CHECK(load_dataset(dir) == ds);
  const std::string manifest = read_file(dir / "manifest.json");
  CHECK(manifest.find("\"seed\"") != std::string::npos);

  std::string samples = read_file(dir / "samples.csv");
  const auto pos = samples.find('\n') + 1;
  const auto hit = samples.find(",0.", pos);
  REQUIRE(hit != std::string::npos);
  samples[hit + 1] = '1';
  write_file(dir / "samples.csv", samples);
  CHECK_THROWS_AS(load_dataset(dir), DataError);
  CHECK_THROWS_AS(load_dataset(scratch("missing")), DataError);
  fs::remove_all(dir);
}
