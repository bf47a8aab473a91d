#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "owattr/autodiff.hpp"
#include "owattr/kernels.hpp"
#include "owattr/rng.hpp"
#include "owattr/tensor.hpp"

namespace owattr {

struct ModelConfig {
  int hidden = 64;
  int feature_dim = 32;
  /// Multiplier applied to cosine logits before the softmax heads. 1 gives the
  /// literal sigma(s); larger values widen the usable confidence range.
  double logit_scale = 10.0;
  /// Sharpening temperature for the weak-view target head.
  double sharpen_tau = 0.1;
  bool ffe_enabled = true;
};

/// K unit prototypes; rows [0, k_known) are the known classes.
struct PrototypeBank {
  Tensor prototypes;  // [K, d]
  int k_known = 0;
  std::vector<bool> live;

  std::size_t size() const { return live.size(); }
  std::vector<std::size_t> live_indices() const;
  std::size_t live_count() const;
  std::size_t live_novel_count() const;
  void renormalize_live();
};

/// Frequency-mask generator realized as per-coefficient gain and bias.
struct FfeParams {
  Tensor gain;  // [side*side]
  Tensor bias;  // [side*side]
  std::size_t side = 0;  // 0 in feature-vector mode
  bool enabled = false;
};

struct Model {
  ModelConfig config;
  std::size_t input_dim = 0;
  Tensor w1, b1, w2, b2;
  PrototypeBank bank;
  FfeParams ffe;

  /// Random encoder, random unit prototypes. image_side = 0 selects
  /// feature-vector mode (no FFE path).
  static Model create(const ModelConfig& config, std::size_t input_dim, std::size_t image_side,
                      int k_known, int k_total, SeededRng& rng);

  /// Known prototypes := normalized mean encoder feature of each labeled class.
  void init_known_prototypes(const Tensor& labeled_x, const std::vector<int>& labels);
};

/// Tape handles for every trainable tensor of a Model.
struct BoundModel {
  ad::Var w1, b1, w2, b2, prototypes, gain, bias;
  const Model* model = nullptr;
};

BoundModel bind(ad::Tape& tape, const Model& model);

/// FFE on a batch of flattened images [N, side*side]: returns A * x with
/// A = idct2(sigmoid(gain*f + bias) * f), f = dct2(x).
ad::Var ffe_forward(const BoundModel& m, ad::Var x);
/// Unit-norm encoder features [N, d] (applies FFE first when enabled).
ad::Var encode(const BoundModel& m, ad::Var x);
/// Cosine logits over live prototypes, [N, K_live].
ad::Var logits(const BoundModel& m, ad::Var h);
/// softmax(logit_scale * s / t), t = sharpen_tau when sharpened, else 1.
ad::Var predict(const BoundModel& m, ad::Var logits, bool sharpened);

// Tape-free forms.
Tensor ffe_forward(const Tensor& image, const FfeParams& params);
Tensor logits(const Tensor& h, const PrototypeBank& bank);
Tensor predict(const Tensor& h, const PrototypeBank& bank, bool sharpened, double logit_scale = 1.0,
               double sharpen_tau = 0.1);

/// Batched inference for evaluation passes.
struct Inference {
  Tensor features;                 // [N, d]
  Tensor probs;                    // [N, K_live], unsharpened
  std::vector<std::size_t> live;   // column -> prototype index
  std::vector<std::size_t> argmax; // prototype index per row
  std::vector<double> confidence;  // top-1 probability per row
};

Inference infer(const Model& model, const Tensor& x, kernels::Exec exec = kernels::Exec::parallel);

}  // namespace owattr
