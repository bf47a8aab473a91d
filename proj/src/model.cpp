#include "owattr/model.hpp"

#include <cmath>
#include <stdexcept>

#include "owattr/dct.hpp"
#include "owattr/prob.hpp"

namespace owattr {

std::vector<std::size_t> PrototypeBank::live_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < live.size(); ++i)
    if (live[i]) out.push_back(i);
  return out;
}

std::size_t PrototypeBank::live_count() const {
  std::size_t n = 0;
  for (bool b : live) n += b ? 1 : 0;
  return n;
}

std::size_t PrototypeBank::live_novel_count() const {
  std::size_t n = 0;
  for (std::size_t i = static_cast<std::size_t>(k_known); i < live.size(); ++i) n += live[i] ? 1 : 0;
  return n;
}

void PrototypeBank::renormalize_live() {
  for (std::size_t k = 0; k < live.size(); ++k) {
    if (!live[k]) continue;
    auto r = prototypes.row(k);
    double s = 0.0;
    for (double v : r) s += v * v;
    s = std::sqrt(s);
    if (s > 0.0)
      for (auto& v : r) v /= s;
  }
}

namespace {

Tensor xavier(std::size_t in, std::size_t out, SeededRng& rng) {
  Tensor w({in, out});
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (auto& v : w.raw()) v = rng.uniform(-a, a);
  return w;
}

void normalize_row(std::span<double> r) {
  double s = 0.0;
  for (double v : r) s += v * v;
  s = std::sqrt(s);
  if (s > 0.0)
    for (auto& v : r) v /= s;
}

}  // namespace

Model Model::create(const ModelConfig& config, std::size_t input_dim, std::size_t image_side, int k_known,
                    int k_total, SeededRng& rng) {
  if (k_known < 0 || k_total < k_known || k_total < 1) throw std::invalid_argument("invalid prototype counts");
  if (image_side > 0 && image_side * image_side != input_dim)
    throw std::invalid_argument("image mode needs input_dim == image_side^2");
  Model m;
  m.config = config;
  m.input_dim = input_dim;
  const auto h = static_cast<std::size_t>(config.hidden);
  const auto d = static_cast<std::size_t>(config.feature_dim);
  m.w1 = xavier(input_dim, h, rng);
  m.b1 = Tensor({h});
  m.w2 = xavier(h, d, rng);
  m.b2 = Tensor({d});
  const auto k = static_cast<std::size_t>(k_total);
  m.bank.prototypes = Tensor({k, d});
  for (std::size_t r = 0; r < k; ++r) {
    for (auto& v : m.bank.prototypes.row(r)) v = rng.normal();
    normalize_row(m.bank.prototypes.row(r));
  }
  m.bank.k_known = k_known;
  m.bank.live.assign(k, true);
  m.ffe.side = image_side;
  m.ffe.enabled = image_side > 0 && config.ffe_enabled;
  const std::size_t nf = image_side * image_side;
  m.ffe.gain = Tensor({nf});
  m.ffe.bias = Tensor({nf});
  for (auto& v : m.ffe.gain.raw()) v = 0.01 * rng.normal();
  return m;
}

void Model::init_known_prototypes(const Tensor& labeled_x, const std::vector<int>& labels) {
  Inference inf = infer(*this, labeled_x);
  const std::size_t d = bank.prototypes.cols();
  std::vector<std::vector<double>> sums(static_cast<std::size_t>(bank.k_known), std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    for (std::size_t j = 0; j < d; ++j) sums[c][j] += inf.features.at(i, j);
  }
  for (std::size_t c = 0; c < sums.size(); ++c) {
    double s = 0.0;
    for (double v : sums[c]) s += v * v;
    if (s == 0.0) continue;  // class absent from the labeled set: keep random init
    normalize_row(sums[c]);
    std::copy(sums[c].begin(), sums[c].end(), bank.prototypes.row(c).begin());
  }
}

BoundModel bind(ad::Tape& tape, const Model& model) {
  BoundModel b;
  b.model = &model;
  b.w1 = tape.leaf(model.w1, "encoder.w1");
  b.b1 = tape.leaf(model.b1, "encoder.b1");
  b.w2 = tape.leaf(model.w2, "encoder.w2");
  b.b2 = tape.leaf(model.b2, "encoder.b2");
  b.prototypes = tape.leaf(model.bank.prototypes, "prototypes");
  b.gain = tape.leaf(model.ffe.gain, "ffe.gain");
  b.bias = tape.leaf(model.ffe.bias, "ffe.bias");
  return b;
}

ad::Var ffe_forward(const BoundModel& m, ad::Var x) {
  const auto side = m.model->ffe.side;
  if (side == 0) throw std::logic_error("FFE is only defined in image mode");
  if (!m.model->ffe.enabled) return x;
  ad::Var f = ad::dct2_rows(x, side, side);
  ad::Var mask = ad::sigmoid(ad::add_row(ad::mul_row(f, m.gain), m.bias));
  ad::Var attn = ad::idct2_rows(ad::mul(mask, f), side, side);
  return ad::mul(attn, x);
}

ad::Var encode(const BoundModel& m, ad::Var x) {
  if (m.model->ffe.side > 0) x = ffe_forward(m, x);
  ad::Var h1 = ad::tanh(ad::add_row(ad::matmul(x, m.w1), m.b1));
  ad::Var z = ad::add_row(ad::matmul(h1, m.w2), m.b2);
  return ad::normalize_rows(z);
}

ad::Var logits(const BoundModel& m, ad::Var h) {
  ad::Var live = ad::gather_rows(m.prototypes, m.model->bank.live_indices());
  return ad::matmul_nt(h, live);
}

ad::Var predict(const BoundModel& m, ad::Var s, bool sharpened) {
  const auto& cfg = m.model->config;
  const double t = sharpened ? cfg.sharpen_tau : 1.0;
  return ad::softmax_rows(s, t / cfg.logit_scale);
}

Tensor ffe_forward(const Tensor& image, const FfeParams& params) {
  if (params.side == 0) throw std::logic_error("FFE is only defined in image mode");
  if (image.size() != params.side * params.side)
    throw ShapeError("ffe_forward: image does not match FFE side " + std::to_string(params.side));
  if (!params.enabled) return image;
  const Tensor sq = image.reshaped({params.side, params.side});
  Tensor f = dct2(sq);
  Tensor weighted = f;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double mask = 1.0 / (1.0 + std::exp(-(params.gain[i] * f[i] + params.bias[i])));
    weighted[i] = mask * f[i];
  }
  Tensor a = idct2(weighted);
  Tensor out(image.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * image[i];
  return out;
}

Tensor logits(const Tensor& h, const PrototypeBank& bank) {
  const auto live = bank.live_indices();
  const std::size_t d = bank.prototypes.cols();
  if (h.size() != d) throw ShapeError("logits: feature dimension mismatch");
  Tensor s({live.size()});
  for (std::size_t k = 0; k < live.size(); ++k) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += h[j] * bank.prototypes.at(live[k], j);
    s[k] = acc;
  }
  return s;
}

Tensor predict(const Tensor& h, const PrototypeBank& bank, bool sharpened, double logit_scale,
               double sharpen_tau) {
  return softmax(logits(h, bank), (sharpened ? sharpen_tau : 1.0) / logit_scale);
}

Inference infer(const Model& model, const Tensor& x, kernels::Exec exec) {
  using kernels::gemm;
  const std::size_t n = x.rows();
  if (x.cols() != model.input_dim) throw ShapeError("infer: input dimension mismatch");
  Tensor input = x;
  if (model.ffe.side > 0 && model.ffe.enabled) {
    const std::size_t side = model.ffe.side, nf = side * side;
    Tensor f(x.shape());
    kernels::dct_rows(x.data(), f.data(), n, side, side, false, exec);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < nf; ++c) {
        double& v = f[r * nf + c];
        const double pre = v * model.ffe.gain[c] + model.ffe.bias[c];
        v = (1.0 / (1.0 + std::exp(-pre))) * v;
      }
    Tensor a(x.shape());
    kernels::dct_rows(f.data(), a.data(), n, side, side, true, exec);
    for (std::size_t i = 0; i < input.size(); ++i) input[i] = a[i] * x[i];
  }
  const std::size_t hdim = model.w1.cols(), d = model.w2.cols();
  Tensor h1({n, hdim});
  gemm(false, false, n, hdim, model.input_dim, input.data(), model.w1.data(), h1.data(), exec);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < hdim; ++c) h1[r * hdim + c] = std::tanh(h1[r * hdim + c] + model.b1[c]);
  Inference out;
  out.features = Tensor({n, d});
  gemm(false, false, n, d, hdim, h1.data(), model.w2.data(), out.features.data(), exec);
  for (std::size_t r = 0; r < n; ++r) {
    auto row = out.features.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      row[c] += model.b2[c];
      s += row[c] * row[c];
    }
    const double norm = std::sqrt(s) + ad::kLogEps;
    for (auto& v : row) v /= norm;
  }
  out.live = model.bank.live_indices();
  const std::size_t k = out.live.size();
  Tensor protos({k, d});
  for (std::size_t i = 0; i < k; ++i)
    std::copy_n(model.bank.prototypes.row(out.live[i]).begin(), d, protos.row(i).begin());
  Tensor s({n, k});
  gemm(false, true, n, k, d, out.features.data(), protos.data(), s.data(), exec);
  out.probs = Tensor({n, k});
  kernels::softmax_rows(s.data(), out.probs.data(), n, k, model.config.logit_scale, exec);
  out.argmax.resize(n);
  out.confidence.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t j = argmax(out.probs.row(r));
    out.argmax[r] = out.live[j];
    out.confidence[r] = out.probs.at(r, j);
  }
  return out;
}

}  // namespace owattr
