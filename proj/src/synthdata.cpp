#include "owattr/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "owattr/dct.hpp"
#include "owattr/rng.hpp"
#include "owattr/textio.hpp"

namespace owattr {

namespace {

constexpr std::uint64_t kMeanStream = 11;
constexpr std::uint64_t kSampleStream = 12;
constexpr std::uint64_t kAugmentStream = 13;
constexpr int kMeanAttempts = 20000;
constexpr std::size_t kFingerprintSize = 4;
constexpr std::size_t kLowBand = 4;  // u + v < kLowBand holds the base texture
constexpr double kFingerprintAmplitude = 2.0;
constexpr double kTextureScale = 1.0;
constexpr double kPixelNoise = 0.1;

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void normalize(std::span<double> v) {
  const double n = norm(v);
  if (n > 0.0)
    for (auto& x : v) x /= n;
}

std::vector<double> random_unit(std::size_t d, SeededRng& rng) {
  std::vector<double> v(d);
  do {
    for (auto& x : v) x = rng.normal();
  } while (norm(v) < 1e-9);
  normalize(v);
  return v;
}

// Rotates unit vector `base` by `angle` towards a random tangent direction.
std::vector<double> rotate_random(std::span<const double> base, double angle, SeededRng& rng) {
  const std::size_t d = base.size();
  std::vector<double> t(d);
  double tn = 0.0;
  do {
    for (auto& x : t) x = rng.normal();
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += t[i] * base[i];
    for (std::size_t i = 0; i < d; ++i) t[i] -= dot * base[i];
    tn = norm(t);
  } while (tn < 1e-9);
  for (auto& x : t) x /= tn;
  std::vector<double> out(d);
  const double c = std::cos(angle), s = std::sin(angle);
  for (std::size_t i = 0; i < d; ++i) out[i] = c * base[i] + s * t[i];
  normalize(out);
  return out;
}

Tensor place_class_means(const SynthConfig& cfg) {
  const std::size_t k = static_cast<std::size_t>(cfg.k_total());
  const std::size_t d = static_cast<std::size_t>(cfg.feature_dim);
  SeededRng rng(cfg.seed, kMeanStream);
  std::vector<std::vector<double>> means;
  bool ok = true;
  for (std::size_t c = 0; c < k && ok; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMeanAttempts && !placed; ++attempt) {
      auto cand = random_unit(d, rng);
      bool far = true;
      for (const auto& m : means)
        if (angle_between(cand, m) < cfg.min_angle_gamma) {
          far = false;
          break;
        }
      if (far) {
        means.push_back(std::move(cand));
        placed = true;
      }
    }
    ok = placed;
  }
  if (!ok) {
    if (d < k || cfg.min_angle_gamma > std::numbers::pi / 2)
      throw GeometryError("cannot place " + std::to_string(k) + " class means with pairwise angle >= " +
                          format_double(cfg.min_angle_gamma) + " in dimension " + std::to_string(d));
    means.assign(k, std::vector<double>(d, 0.0));
    for (std::size_t c = 0; c < k; ++c) means[c][c] = 1.0;
  }
  Tensor out({k, d});
  for (std::size_t c = 0; c < k; ++c) std::copy(means[c].begin(), means[c].end(), out.row(c).begin());
  return out;
}

struct ImageGeometry {
  std::vector<std::vector<std::size_t>> support;
  std::vector<std::vector<double>> signs;
};

ImageGeometry image_geometry(const SynthConfig& cfg) {
  ImageGeometry g;
  g.support = fingerprint_support(cfg);
  SeededRng rng(cfg.seed, kMeanStream + 100);
  for (const auto& s : g.support) {
    std::vector<double> sg(s.size());
    for (auto& v : sg) v = rng.bernoulli(0.5) ? 1.0 : -1.0;
    g.signs.push_back(std::move(sg));
  }
  return g;
}

std::vector<double> render_image(const SynthConfig& cfg, const ImageGeometry& geo, int cls, SeededRng& rng) {
  const std::size_t side = static_cast<std::size_t>(cfg.image_side);
  Tensor coeffs({side, side});
  for (std::size_t u = 0; u < side; ++u)
    for (std::size_t v = 0; v < side; ++v)
      if (u + v < kLowBand) coeffs.at(u, v) = kTextureScale * rng.normal();
  const auto& sup = geo.support[static_cast<std::size_t>(cls)];
  const auto& sg = geo.signs[static_cast<std::size_t>(cls)];
  for (std::size_t i = 0; i < sup.size(); ++i)
    coeffs[sup[i]] = kFingerprintAmplitude * sg[i] * (1.0 + 0.1 * rng.normal());
  Tensor img = idct2(coeffs);
  for (auto& p : img.raw()) p += kPixelNoise * rng.normal();
  return img.raw();
}

Tensor image_class_means(const SynthConfig& cfg, const ImageGeometry& geo) {
  const std::size_t side = static_cast<std::size_t>(cfg.image_side);
  Tensor out({static_cast<std::size_t>(cfg.k_total()), side * side});
  for (std::size_t c = 0; c < geo.support.size(); ++c) {
    Tensor coeffs({side, side});
    for (std::size_t i = 0; i < geo.support[c].size(); ++i) coeffs[geo.support[c][i]] = geo.signs[c][i];
    Tensor img = idct2(coeffs);
    normalize(img.data());
    std::copy(img.raw().begin(), img.raw().end(), out.row(c).begin());
  }
  return out;
}

std::vector<double> flip_horizontal(std::span<const double> img, std::size_t side) {
  std::vector<double> out(img.size());
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) out[r * side + c] = img[r * side + (side - 1 - c)];
  return out;
}

std::vector<double> crop_resize(std::span<const double> img, std::size_t side, SeededRng& rng) {
  const double scale = rng.uniform(0.6, 1.0);
  const double crop = std::max(2.0, std::round(scale * static_cast<double>(side)));
  const double max_off = static_cast<double>(side) - crop;
  const double oy = std::floor(rng.uniform(0.0, max_off + 1.0));
  const double ox = std::floor(rng.uniform(0.0, max_off + 1.0));
  std::vector<double> out(img.size());
  const double step = (crop - 1.0) / static_cast<double>(side - 1);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double y = oy + step * static_cast<double>(r);
      const double x = ox + step * static_cast<double>(c);
      const auto y0 = static_cast<std::size_t>(std::floor(y));
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t y1 = std::min(y0 + 1, side - 1), x1 = std::min(x0 + 1, side - 1);
      const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
      out[r * side + c] = (1 - fy) * ((1 - fx) * img[y0 * side + x0] + fx * img[y0 * side + x1]) +
                          fy * ((1 - fx) * img[y1 * side + x0] + fx * img[y1 * side + x1]);
    }
  return out;
}

}  // namespace

std::string to_string(SampleMode m) { return m == SampleMode::feature ? "feature" : "image"; }

SampleMode sample_mode_from_string(const std::string& s) {
  if (s == "feature") return SampleMode::feature;
  if (s == "image") return SampleMode::image;
  throw std::invalid_argument("unknown sample mode '" + s + "'");
}

std::size_t SynthConfig::input_dim() const {
  return mode == SampleMode::feature ? static_cast<std::size_t>(feature_dim)
                                     : static_cast<std::size_t>(image_side * image_side);
}

void SynthConfig::validate() const {
  if (k_known < 1) throw std::invalid_argument("k_known must be >= 1");
  if (k_novel < 0) throw std::invalid_argument("k_novel must be >= 0");
  if (labeled_per_known < 1 || unlabeled_per_known < 0 || unlabeled_per_novel < 0)
    throw std::invalid_argument("per-class counts must be non-negative (labeled >= 1)");
  if (mode == SampleMode::feature) {
    if (feature_dim < 2) throw std::invalid_argument("feature_dim must be >= 2");
    if (!(min_angle_gamma > 0.0) || !(intra_noise_eta >= 0.0))
      throw std::invalid_argument("angles must be positive");
    if (!(2.0 * intra_noise_eta < min_angle_gamma))
      throw std::invalid_argument("separability requires 2*intra_noise_eta < min_angle_gamma");
  } else {
    if (image_side < 4) throw std::invalid_argument("image_side must be >= 4");
    const std::size_t side = static_cast<std::size_t>(image_side);
    const std::size_t available = side * side - kLowBand * (kLowBand + 1) / 2;
    if (kFingerprintSize * static_cast<std::size_t>(k_total()) > available)
      throw std::invalid_argument("image too small for the requested number of class fingerprints");
  }
}

SynthConfig SynthConfig::image_preset() {
  SynthConfig c;
  c.mode = SampleMode::image;
  c.image_side = 16;
  return c;
}

bool operator==(const SynthDataset& a, const SynthDataset& b) {
  const auto& ca = a.config;
  const auto& cb = b.config;
  const bool cfg_eq = ca.k_known == cb.k_known && ca.k_novel == cb.k_novel &&
                      ca.feature_dim == cb.feature_dim && ca.min_angle_gamma == cb.min_angle_gamma &&
                      ca.intra_noise_eta == cb.intra_noise_eta &&
                      ca.labeled_per_known == cb.labeled_per_known &&
                      ca.unlabeled_per_known == cb.unlabeled_per_known &&
                      ca.unlabeled_per_novel == cb.unlabeled_per_novel && ca.mode == cb.mode &&
                      ca.image_side == cb.image_side && ca.seed == cb.seed;
  return cfg_eq && a.labeled == b.labeled && a.labeled_labels == b.labeled_labels &&
         a.unlabeled == b.unlabeled && a.unlabeled_truth == b.unlabeled_truth &&
         a.class_means == b.class_means && a.known_role == b.known_role;
}

double angle_between(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double c = dot / (norm(a) * norm(b));
  return std::acos(std::clamp(c, -1.0, 1.0));
}

std::vector<std::vector<std::size_t>> fingerprint_support(const SynthConfig& config) {
  const std::size_t side = static_cast<std::size_t>(config.image_side);
  std::vector<std::size_t> candidates;
  for (std::size_t u = 0; u < side; ++u)
    for (std::size_t v = 0; v < side; ++v)
      if (u + v >= kLowBand) candidates.push_back(u * side + v);
  SeededRng rng(config.seed, kMeanStream + 200);
  rng.shuffle(std::span<std::size_t>(candidates));
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(config.k_total()));
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c].assign(candidates.begin() + static_cast<std::ptrdiff_t>(c * kFingerprintSize),
                  candidates.begin() + static_cast<std::ptrdiff_t>((c + 1) * kFingerprintSize));
    std::sort(out[c].begin(), out[c].end());
  }
  return out;
}

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  SynthDataset ds;
  ds.config = config;
  const std::size_t k = static_cast<std::size_t>(config.k_total());
  const std::size_t dim = config.input_dim();
  ImageGeometry geo;
  if (config.mode == SampleMode::feature) {
    ds.class_means = place_class_means(config);
  } else {
    geo = image_geometry(config);
    ds.class_means = image_class_means(config, geo);
  }
  ds.known_role.assign(k, false);
  for (int c = 0; c < config.k_known; ++c) ds.known_role[static_cast<std::size_t>(c)] = true;

  for (int c = 0; c < config.k_known; ++c)
    for (int i = 0; i < config.labeled_per_known; ++i) ds.labeled_labels.push_back(c);
  for (int c = 0; c < config.k_total(); ++c) {
    const int n = c < config.k_known ? config.unlabeled_per_known : config.unlabeled_per_novel;
    for (int i = 0; i < n; ++i) ds.unlabeled_truth.push_back(c);
  }
  ds.labeled = Tensor({ds.labeled_labels.size(), dim});
  ds.unlabeled = Tensor({ds.unlabeled_truth.size(), dim});

  const SeededRng base(config.seed, kSampleStream);
  const std::size_t n_total = ds.n_labeled() + ds.n_unlabeled();
  const auto n_signed = static_cast<std::ptrdiff_t>(n_total);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < n_signed; ++si) {
    const auto id = static_cast<std::size_t>(si);
    const bool is_labeled = id < ds.n_labeled();
    const int cls = is_labeled ? ds.labeled_labels[id] : ds.unlabeled_truth[id - ds.n_labeled()];
    SeededRng rng = base.split(id);
    std::vector<double> x;
    if (config.mode == SampleMode::feature) {
      const double theta = config.intra_noise_eta * rng.uniform_open();
      x = rotate_random(ds.class_means.row(static_cast<std::size_t>(cls)), theta, rng);
    } else {
      x = render_image(config, geo, cls, rng);
    }
    auto dst = is_labeled ? ds.labeled.row(id) : ds.unlabeled.row(id - ds.n_labeled());
    std::copy(x.begin(), x.end(), dst.begin());
  }
  return ds;
}

std::vector<double> augment(std::span<const double> sample, const SynthConfig& geometry,
                            std::uint64_t sample_id, int epoch, std::uint64_t seed, Strength strength,
                            const AugmentConfig& aug) {
  SeededRng rng = SeededRng(seed, kAugmentStream)
                      .split(static_cast<std::uint64_t>(epoch))
                      .split(sample_id)
                      .split(strength == Strength::weak ? 0 : 1);
  if (geometry.mode == SampleMode::feature) {
    const double eta = geometry.intra_noise_eta;
    if (strength == Strength::weak) {
      const double angle = std::min(std::abs(rng.normal()) * eta / 8.0, eta / 4.0);
      return rotate_random(sample, angle, rng);
    }
    const double angle = std::min(std::abs(rng.normal()) * eta / 2.0, eta);
    auto out = rotate_random(sample, angle, rng);
    const auto n_drop = static_cast<std::size_t>(
        std::floor(aug.strong_dropout_fraction * static_cast<double>(out.size())));
    std::vector<std::size_t> idx(out.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < n_drop; ++i) out[idx[i]] = 0.0;
    if (norm(out) > 0.0) normalize(out);
    return out;
  }
  const std::size_t side = static_cast<std::size_t>(geometry.image_side);
  std::vector<double> img(sample.begin(), sample.end());
  if (strength == Strength::weak) {
    if (rng.bernoulli(aug.weak_flip_p)) img = flip_horizontal(img, side);
    return img;
  }
  if (rng.bernoulli(aug.strong_flip_p)) img = flip_horizontal(img, side);
  if (rng.bernoulli(aug.strong_crop_p)) img = crop_resize(img, side, rng);
  if (rng.bernoulli(aug.strong_brightness_p)) {
    const double factor = rng.uniform(0.8, 1.2);
    for (auto& p : img) p *= factor;
  }
  return img;
}

namespace {

nlohmann::json config_to_json(const SynthConfig& c) {
  return {{"k_known", c.k_known},
          {"k_novel", c.k_novel},
          {"feature_dim", c.feature_dim},
          {"min_angle_gamma", c.min_angle_gamma},
          {"intra_noise_eta", c.intra_noise_eta},
          {"labeled_per_known", c.labeled_per_known},
          {"unlabeled_per_known", c.unlabeled_per_known},
          {"unlabeled_per_novel", c.unlabeled_per_novel},
          {"mode", to_string(c.mode)},
          {"image_side", c.image_side},
          {"seed", c.seed}};
}

SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.k_known = j.at("k_known").get<int>();
  c.k_novel = j.at("k_novel").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.min_angle_gamma = j.at("min_angle_gamma").get<double>();
  c.intra_noise_eta = j.at("intra_noise_eta").get<double>();
  c.labeled_per_known = j.at("labeled_per_known").get<int>();
  c.unlabeled_per_known = j.at("unlabeled_per_known").get<int>();
  c.unlabeled_per_novel = j.at("unlabeled_per_novel").get<int>();
  c.mode = sample_mode_from_string(j.at("mode").get<std::string>());
  c.image_side = j.at("image_side").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_dataset(const SynthDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t dim = ds.config.input_dim();
  std::string csv = "id,split,true_class";
  for (std::size_t j = 0; j < dim; ++j) csv += (ds.config.mode == SampleMode::feature ? ",f" : ",px") + std::to_string(j);
  csv += "\n";
  auto emit = [&](std::size_t id, const char* split_name, int cls, std::span<const double> x) {
    csv += std::to_string(id);
    csv += ',';
    csv += split_name;
    csv += ',';
    csv += std::to_string(cls);
    for (double v : x) {
      csv += ',';
      csv += format_double(v);
    }
    csv += '\n';
  };
  for (std::size_t i = 0; i < ds.n_labeled(); ++i) emit(i, "labeled", ds.labeled_labels[i], ds.labeled.row(i));
  for (std::size_t i = 0; i < ds.n_unlabeled(); ++i)
    emit(ds.unlabeled_id(i), "unlabeled", ds.unlabeled_truth[i], ds.unlabeled.row(i));

  nlohmann::json roles = nlohmann::json::array();
  for (bool k : ds.known_role) roles.push_back(k ? "known" : "novel");
  nlohmann::json means = nlohmann::json::array();
  for (std::size_t c = 0; c < ds.class_means.rows(); ++c) {
    auto r = ds.class_means.row(c);
    means.push_back(std::vector<double>(r.begin(), r.end()));
  }
  nlohmann::json manifest = {{"schema_version", kDatasetSchemaVersion},
                             {"config", config_to_json(ds.config)},
                             {"class_roles", roles},
                             {"class_means", means},
                             {"n_labeled", ds.n_labeled()},
                             {"n_unlabeled", ds.n_unlabeled()},
                             {"samples_file", "samples.csv"},
                             {"checksum", fnv1a_hex(csv)}};
  write_file(dir / "samples.csv", csv);
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

SynthDataset load_dataset(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset manifest is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (manifest.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw DataError("dataset schema version " + manifest.at("schema_version").dump() + " is not supported");
    const std::string csv = read_file(dir / "samples.csv");
    if (fnv1a_hex(csv) != manifest.at("checksum").get<std::string>())
      throw DataError("samples.csv checksum does not match manifest");

    SynthDataset ds;
    ds.config = config_from_json(manifest.at("config"));
    const std::size_t dim = ds.config.input_dim();
    for (const auto& r : manifest.at("class_roles")) ds.known_role.push_back(r.get<std::string>() == "known");
    const auto& means = manifest.at("class_means");
    ds.class_means = Tensor({means.size(), dim});
    for (std::size_t c = 0; c < means.size(); ++c) {
      const auto row = means[c].get<std::vector<double>>();
      if (row.size() != dim) throw DataError("class mean has wrong dimension");
      std::copy(row.begin(), row.end(), ds.class_means.row(c).begin());
    }
    const std::size_t n_lab = manifest.at("n_labeled").get<std::size_t>();
    const std::size_t n_unl = manifest.at("n_unlabeled").get<std::size_t>();
    std::vector<double> lab, unl;
    lab.reserve(n_lab * dim);
    unl.reserve(n_unl * dim);
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);  // header
    std::size_t expected_id = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cols = split(line, ',');
      if (cols.size() != dim + 3) throw DataError("row " + std::to_string(expected_id) + " has wrong column count");
      if (static_cast<std::size_t>(parse_int(cols[0])) != expected_id)
        throw DataError("row ids are not consecutive at " + std::to_string(expected_id));
      const int cls = static_cast<int>(parse_int(cols[2]));
      auto& dst = cols[1] == "labeled" ? lab : unl;
      if (cols[1] == "labeled") {
        if (cls < 0 || cls >= ds.config.k_known) throw DataError("labeled sample with non-known class");
        ds.labeled_labels.push_back(cls);
      } else if (cols[1] == "unlabeled") {
        if (cls < 0 || cls >= ds.config.k_total()) throw DataError("unlabeled sample class out of range");
        ds.unlabeled_truth.push_back(cls);
      } else {
        throw DataError("unknown split '" + std::string(cols[1]) + "'");
      }
      for (std::size_t j = 0; j < dim; ++j) dst.push_back(parse_double(cols[3 + j]));
      ++expected_id;
    }
    if (ds.labeled_labels.size() != n_lab || ds.unlabeled_truth.size() != n_unl)
      throw DataError("sample counts do not match manifest");
    ds.labeled = Tensor({n_lab, dim}, std::move(lab));
    ds.unlabeled = Tensor({n_unl, dim}, std::move(unl));
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("dataset manifest is missing fields: " + std::string(e.what()));
  }
}

}  // namespace owattr
