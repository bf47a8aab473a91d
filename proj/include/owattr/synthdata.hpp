#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "owattr/tensor.hpp"

namespace owattr {

enum class SampleMode { feature, image };

std::string to_string(SampleMode m);
SampleMode sample_mode_from_string(const std::string& s);

/// Generation geometry. Defaults are the desk-scale preset: 5 known and 10
/// novel classes on the 32-sphere, 3:1 labeled:unlabeled split for known
/// classes (1500:500 per class in the original benchmark, scaled by 1/10).
struct SynthConfig {
  int k_known = 5;
  int k_novel = 10;
  int feature_dim = 32;
  double min_angle_gamma = 0.6;   // radians between class means
  double intra_noise_eta = 0.2;   // radians, max spread around a class mean
  int labeled_per_known = 150;
  int unlabeled_per_known = 50;
  int unlabeled_per_novel = 150;
  SampleMode mode = SampleMode::feature;
  int image_side = 16;
  std::uint64_t seed = 0;

  int k_total() const { return k_known + k_novel; }
  /// Length of one sample vector: feature_dim, or image_side^2 in image mode.
  std::size_t input_dim() const;
  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;

  static SynthConfig image_preset();
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Labeled and unlabeled samples. Sample ids are positional: labeled samples
/// take ids [0, n_labeled), unlabeled samples follow.
struct SynthDataset {
  SynthConfig config;
  Tensor labeled;                   // [n_labeled, input_dim]
  std::vector<int> labeled_labels;  // in [0, k_known)
  Tensor unlabeled;                 // [n_unlabeled, input_dim]
  std::vector<int> unlabeled_truth; // hidden; evaluator-only
  Tensor class_means;               // [k_total, input_dim], unit rows
  std::vector<bool> known_role;     // per class

  std::size_t n_labeled() const { return labeled_labels.size(); }
  std::size_t n_unlabeled() const { return unlabeled_truth.size(); }
  std::size_t unlabeled_id(std::size_t i) const { return n_labeled() + i; }

  friend bool operator==(const SynthDataset& a, const SynthDataset& b);
};

SynthDataset generate(const SynthConfig& config);

enum class Strength { weak, strong };

/// Per-view augmentation settings. Image-mode probabilities follow the usual
/// torchvision recipe: weak = horizontal flip at 0.5; strong = flip, resized
/// crop and brightness jitter at 0.2 each.
struct AugmentConfig {
  double weak_flip_p = 0.5;
  double strong_flip_p = 0.2;
  double strong_crop_p = 0.2;
  double strong_brightness_p = 0.2;
  double strong_dropout_fraction = 0.1;
};

/// Deterministic view of one sample, keyed by (sample_id, epoch, seed).
std::vector<double> augment(std::span<const double> sample, const SynthConfig& geometry,
                            std::uint64_t sample_id, int epoch, std::uint64_t seed, Strength strength,
                            const AugmentConfig& aug = {});

/// Angle in radians between two non-zero vectors.
double angle_between(std::span<const double> a, std::span<const double> b);

/// DCT coefficient indices (row-major in the side x side grid) carrying the
/// frequency fingerprint of each class in image mode.
std::vector<std::vector<std::size_t>> fingerprint_support(const SynthConfig& config);

inline constexpr int kDatasetSchemaVersion = 1;

/// Writes manifest.json and samples.csv into dir (created if needed).
void save_dataset(const SynthDataset& ds, const std::filesystem::path& dir);
/// Throws DataError on schema mismatch, checksum mismatch, or corrupt rows.
SynthDataset load_dataset(const std::filesystem::path& dir);

}  // namespace owattr
