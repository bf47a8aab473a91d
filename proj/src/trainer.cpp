#include "owattr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "owattr/prob.hpp"
#include "owattr/textio.hpp"

namespace owattr {

using nlohmann::json;

namespace {

constexpr std::uint64_t kBatchStream = 0x6261746368;
constexpr std::uint64_t kModelStream = 0x6d6f64656c;
constexpr std::uint64_t kGumbelStream = 0x67756d62;

const char* kMetricsFile = "metrics.csv";
const char* kEstimatesFile = "estimates.csv";
const char* kLossesFile = "losses.csv";
const char* kHistFile = "confidence_hist.csv";
const char* kDiagFile = "diagnostics.csv";

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::cal: return "cal";
    case Method::gumbel_baseline: return "gumbel-baseline";
    case Method::fixmatch_baseline: return "fixmatch-baseline";
  }
  return "cal";
}

Method method_from_string(const std::string& s) {
  if (s == "cal") return Method::cal;
  if (s == "gumbel-baseline") return Method::gumbel_baseline;
  if (s == "fixmatch-baseline") return Method::fixmatch_baseline;
  throw std::invalid_argument("unknown method '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (dpp.initial_k_multiplier < 2) throw std::invalid_argument("prototype multiplier must be >= 2");
  if (!(dpp.coverage_threshold > 0.0 && dpp.coverage_threshold <= 1.0))
    throw std::invalid_argument("coverage threshold must lie in (0, 1]");
  if (!(model.logit_scale > 0.0)) throw std::invalid_argument("logit scale must be positive");
  LossConfig l = loss;
  l.epochs_total = epochs;
  l.validate();
}

std::string config_to_json(const TrainConfig& c, const std::string& data_dir) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["adam"] = {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}};
  j["loss"] = {{"alpha", c.loss.alpha},
               {"gamma", c.loss.conf_threshold_gamma},
               {"delta", c.loss.delta},
               {"tau", c.loss.tau},
               {"warmup_epochs", c.loss.warmup_epochs},
               {"max_gap_ratio", c.loss.max_gap_ratio}};
  j["dpp"] = {{"coverage_threshold", c.dpp.coverage_threshold},
              {"initial_k_multiplier", c.dpp.initial_k_multiplier}};
  j["model"] = {{"hidden", c.model.hidden},
                {"feature_dim", c.model.feature_dim},
                {"logit_scale", c.model.logit_scale},
                {"ffe_enabled", c.model.ffe_enabled}};
  j["augment"] = {{"weak_flip_p", c.augment.weak_flip_p},
                  {"strong_flip_p", c.augment.strong_flip_p},
                  {"strong_crop_p", c.augment.strong_crop_p},
                  {"strong_brightness_p", c.augment.strong_brightness_p},
                  {"strong_dropout_fraction", c.augment.strong_dropout_fraction}};
  j["method"] = to_string(c.method);
  j["know_k_u"] = c.know_k_u;
  j["prune"] = c.prune;
  j["seed"] = c.seed;
  j["eval_every"] = c.eval_every;
  j["checkpoint_every"] = c.checkpoint_every;
  j["data_dir"] = data_dir;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text, std::string* data_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("config.json: ") + e.what());
  }
  TrainConfig c;
  auto get = [](const json& obj, const char* key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  try {
    get(j, "epochs", c.epochs);
    get(j, "batch_size", c.batch_size);
    get(j, "lr", c.lr);
    if (j.contains("adam")) {
      get(j["adam"], "beta1", c.adam_beta1);
      get(j["adam"], "beta2", c.adam_beta2);
      get(j["adam"], "eps", c.adam_eps);
    }
    if (j.contains("loss")) {
      const json& l = j["loss"];
      get(l, "alpha", c.loss.alpha);
      get(l, "gamma", c.loss.conf_threshold_gamma);
      get(l, "delta", c.loss.delta);
      get(l, "tau", c.loss.tau);
      get(l, "warmup_epochs", c.loss.warmup_epochs);
      get(l, "max_gap_ratio", c.loss.max_gap_ratio);
    }
    if (j.contains("dpp")) {
      get(j["dpp"], "coverage_threshold", c.dpp.coverage_threshold);
      get(j["dpp"], "initial_k_multiplier", c.dpp.initial_k_multiplier);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      get(m, "hidden", c.model.hidden);
      get(m, "feature_dim", c.model.feature_dim);
      get(m, "logit_scale", c.model.logit_scale);
      get(m, "ffe_enabled", c.model.ffe_enabled);
    }
    if (j.contains("augment")) {
      const json& a = j["augment"];
      get(a, "weak_flip_p", c.augment.weak_flip_p);
      get(a, "strong_flip_p", c.augment.strong_flip_p);
      get(a, "strong_crop_p", c.augment.strong_crop_p);
      get(a, "strong_brightness_p", c.augment.strong_brightness_p);
      get(a, "strong_dropout_fraction", c.augment.strong_dropout_fraction);
    }
    if (j.contains("method")) c.method = method_from_string(j["method"].get<std::string>());
    get(j, "know_k_u", c.know_k_u);
    get(j, "prune", c.prune);
    get(j, "seed", c.seed);
    get(j, "eval_every", c.eval_every);
    get(j, "checkpoint_every", c.checkpoint_every);
    if (data_dir) {
      *data_dir = "";
      get(j, "data_dir", *data_dir);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("config.json: ") + e.what());
  }
  c.loss.epochs_total = c.epochs;
  c.model.sharpen_tau = c.loss.tau;
  return c;
}

std::vector<Batch> make_batches(std::size_t n_labeled, std::size_t n_unlabeled, int batch_size, int epoch,
                                std::uint64_t seed) {
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2");
  if (n_labeled == 0 || n_unlabeled == 0) throw std::invalid_argument("both sample streams must be non-empty");
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  std::size_t nb = (n_labeled + n_unlabeled + bs - 1) / bs;
  nb = std::min({nb, n_labeled, n_unlabeled});

  std::vector<std::size_t> lab(n_labeled), unl(n_unlabeled);
  for (std::size_t i = 0; i < n_labeled; ++i) lab[i] = i;
  for (std::size_t i = 0; i < n_unlabeled; ++i) unl[i] = i;
  SeededRng rng = SeededRng(seed, kBatchStream).split(static_cast<std::uint64_t>(epoch));
  rng.shuffle(std::span<std::size_t>(lab));
  rng.shuffle(std::span<std::size_t>(unl));

  std::vector<Batch> out(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    out[b].labeled.assign(lab.begin() + static_cast<std::ptrdiff_t>(b * n_labeled / nb),
                          lab.begin() + static_cast<std::ptrdiff_t>((b + 1) * n_labeled / nb));
    out[b].unlabeled.assign(unl.begin() + static_cast<std::ptrdiff_t>(b * n_unlabeled / nb),
                            unl.begin() + static_cast<std::ptrdiff_t>((b + 1) * n_unlabeled / nb));
  }
  return out;
}

std::vector<std::string> param_names(const Model& model) {
  std::vector<std::string> names{"encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2", "prototypes"};
  if (model.ffe.enabled) {
    names.push_back("ffe.gain");
    names.push_back("ffe.bias");
  }
  return names;
}

namespace {

std::vector<Tensor*> param_tensors(Model& m) {
  std::vector<Tensor*> p{&m.w1, &m.b1, &m.w2, &m.b2, &m.bank.prototypes};
  if (m.ffe.enabled) {
    p.push_back(&m.ffe.gain);
    p.push_back(&m.ffe.bias);
  }
  return p;
}

std::vector<ad::Var> param_vars(const BoundModel& b, const Model& m) {
  std::vector<ad::Var> v{b.w1, b.b1, b.w2, b.b2, b.prototypes};
  if (m.ffe.enabled) {
    v.push_back(b.gain);
    v.push_back(b.bias);
  }
  return v;
}

constexpr std::size_t kPrototypeParam = 4;

Tensor views(const Tensor& samples, const std::vector<std::size_t>& rows, std::size_t id_offset,
             const SynthDataset& data, const TrainConfig& config, int epoch, Strength strength) {
  const std::size_t dim = samples.cols();
  Tensor out({rows.size(), dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto v = augment(samples.row(rows[i]), data.config, id_offset + rows[i], epoch, config.seed, strength,
                           config.augment);
    std::copy(v.begin(), v.end(), out.row(i).begin());
  }
  return out;
}

Tensor stack(const Tensor& top, const Tensor& bottom) {
  std::vector<double> d(top.raw());
  d.insert(d.end(), bottom.raw().begin(), bottom.raw().end());
  return Tensor({top.rows() + bottom.rows(), top.cols()}, std::move(d));
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

StepResult train_step(const Batch& batch, const SynthDataset& data, RunState& state, const TrainConfig& config,
                      int epoch, std::size_t batch_index) {
  const std::size_t nl = batch.labeled.size(), nu = batch.unlabeled.size(), n = nl + nu;
  if (nl == 0 || nu == 0) throw std::invalid_argument("train_step: batch needs labeled and unlabeled samples");
  Model& model = state.model;
  const int k_known = model.bank.k_known;

  const std::size_t n_lab = data.n_labeled();
  Tensor xw = stack(views(data.labeled, batch.labeled, 0, data, config, epoch, Strength::weak),
                    views(data.unlabeled, batch.unlabeled, n_lab, data, config, epoch, Strength::weak));
  Tensor xs = stack(views(data.labeled, batch.labeled, 0, data, config, epoch, Strength::strong),
                    views(data.unlabeled, batch.unlabeled, n_lab, data, config, epoch, Strength::strong));
  std::vector<int> labels(nl);
  for (std::size_t i = 0; i < nl; ++i) labels[i] = data.labeled_labels[batch.labeled[i]];

  ad::Tape tape;
  BoundModel bm = bind(tape, model);
  ad::Var sw = logits(bm, encode(bm, tape.constant(std::move(xw))));
  ad::Var ss = logits(bm, encode(bm, tape.constant(std::move(xs))));
  ad::Var pw = predict(bm, sw, false);
  ad::Var ps = predict(bm, ss, false);

  ad::Var l_ce = loss_supervised(ad::slice_rows(pw, 0, nl), ad::slice_rows(ps, 0, nl), labels, k_known);
  ad::Var r = loss_entropy_reg(pw, ps);

  ad::Var ps_u = ad::slice_rows(ps, nl, n);
  const Tensor weak_u = ad::slice_rows(pw, nl, n).value();
  const Tensor sharp_u = predict(bm, ad::slice_rows(sw, nl, n), true).value();

  StepResult out;
  LossBundle& lb = out.losses;
  lb.gap_ratio = state.gap_ratio;
  ad::Var zero = tape.constant(Tensor::scalar(0.0));
  ad::Var l_ccr = zero, l_acr = zero, l_pseudo = zero;
  switch (config.method) {
    case Method::cal:
      l_ccr = loss_ccr(ps_u, sharp_u, epoch, config.epochs, &lb.ccr_weights);
      l_acr = loss_acr(ps_u, weak_u, k_known, state.gap_ratio, config.loss.conf_threshold_gamma, epoch,
                       config.loss.warmup_epochs, &lb.acr_mask);
      break;
    case Method::fixmatch_baseline:
      l_ccr = loss_ws(ps_u, sharp_u, config.loss.delta);
      l_acr = loss_acr(ps_u, weak_u, k_known, state.gap_ratio, config.loss.conf_threshold_gamma, epoch,
                       config.loss.warmup_epochs, &lb.acr_mask);
      break;
    case Method::gumbel_baseline: {
      SeededRng rng = SeededRng(config.seed, kGumbelStream).split(static_cast<std::uint64_t>(epoch)).split(batch_index);
      l_pseudo = loss_cpl_gumbel(ps_u, weak_u, rng);
      break;
    }
  }
  ad::Var total = ad::add(loss_total(l_ce, r, l_acr, l_ccr, config.loss.alpha), l_pseudo);

  lb.l_ce = l_ce.value().item();
  lb.r_reg = r.value().item();
  lb.l_ccr = l_ccr.value().item();
  lb.l_acr = l_acr.value().item();
  lb.l_pseudo = l_pseudo.value().item();
  lb.total = total.value().item();
  if (!finite(lb.total)) {
    std::ostringstream msg;
    msg << "non-finite loss at epoch " << epoch << " batch " << batch_index << ": l_ce=" << lb.l_ce
        << " r=" << lb.r_reg << " l_ccr=" << lb.l_ccr << " l_acr=" << lb.l_acr << " l_pseudo=" << lb.l_pseudo
        << "; labeled ids:";
    for (auto i : batch.labeled) msg << ' ' << i;
    msg << "; unlabeled ids:";
    for (auto i : batch.unlabeled) msg << ' ' << data.unlabeled_id(i);
    throw std::runtime_error(msg.str());
  }

  const auto live = model.bank.live_indices();
  out.unlabeled_argmax.resize(nu);
  for (std::size_t i = 0; i < nu; ++i) {
    out.unlabeled_argmax[i] = live[argmax(weak_u.row(i))];
    state.usage.record(out.unlabeled_argmax[i]);
  }

  const ad::Gradients grads = tape.backward(total);
  const auto vars = param_vars(bm, model);
  auto params = param_tensors(model);
  AdamState& adam = state.adam;
  ++adam.t;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor g = grads.of(vars[p]);
    auto w = params[p]->data();
    auto m = adam.m[p].data();
    auto v = adam.v[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
    }
  }
  model.bank.renormalize_live();
  ++state.step;
  return out;
}

RunState initial_state(const TrainConfig& config, const SynthDataset& data) {
  config.validate();
  const int k_known = data.config.k_known;
  const int k_total = config.know_k_u ? data.config.k_total() : config.dpp.initial_k_multiplier * k_known;
  ModelConfig mc = config.model;
  mc.sharpen_tau = config.loss.tau;
  const std::size_t side = data.config.mode == SampleMode::image ? static_cast<std::size_t>(data.config.image_side) : 0;
  SeededRng rng(config.seed, kModelStream);
  RunState st;
  st.model = Model::create(mc, data.config.input_dim(), side, k_known, k_total, rng);
  st.model.init_known_prototypes(data.labeled, data.labeled_labels);
  for (Tensor* p : param_tensors(st.model)) {
    st.adam.m.emplace_back(p->shape());
    st.adam.v.emplace_back(p->shape());
  }
  st.usage = UsageCounter(static_cast<std::size_t>(k_total));
  return st;
}

EvalPass evaluate_model(const Model& model, const SynthDataset& data) {
  EvalPass e;
  e.inference = infer(model, data.unlabeled);
  std::vector<int> pred(e.inference.argmax.begin(), e.inference.argmax.end());
  e.report = evaluate_predictions(pred, e.inference.confidence, data.unlabeled_truth, data.known_role);
  return e;
}

ConfidenceHistogram confidence_histogram(const std::vector<double>& confidence, const std::vector<int>& truth,
                                         const std::vector<bool>& known_role) {
  ConfidenceHistogram h;
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    auto bin = static_cast<std::size_t>(std::floor(confidence[i] / kHistBinWidth));
    bin = std::min(bin, kHistBins - 1);
    (known_role.at(static_cast<std::size_t>(truth[i])) ? h.known : h.novel)[bin] += 1;
  }
  return h;
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch) {
  char name[32];
  std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
  return run_dir / "checkpoints" / name;
}

std::optional<int> latest_checkpoint(const std::filesystem::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!std::filesystem::is_directory(dir)) return std::nullopt;
  std::optional<int> best;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() < 12 || name.rfind("epoch_", 0) != 0 || !name.ends_with(".ckpt")) continue;
    try {
      const int e = static_cast<int>(parse_int(std::string_view(name).substr(6, name.size() - 11)));
      if (!best || e > *best) best = e;
    } catch (const DataError&) {
    }
  }
  return best;
}

namespace {

std::string shape_token(const Tensor& t) {
  std::string s;
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += 'x';
    s += std::to_string(t.dim(i));
  }
  return s;
}

std::string tensor_line(const std::string& name, const Tensor& t) {
  std::string line = name + "," + shape_token(t);
  for (double v : t.raw()) {
    line += ',';
    line += format_double(v);
  }
  return line + "\n";
}

}  // namespace

void checkpoint_save(const RunState& state, const std::filesystem::path& path) {
  const Model& m = state.model;
  std::string body;
  const auto names = param_names(m);
  const std::vector<const Tensor*> tensors{&m.w1, &m.b1, &m.w2, &m.b2, &m.bank.prototypes, &m.ffe.gain, &m.ffe.bias};
  const std::vector<std::string> all{"encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2",
                                     "prototypes", "ffe.gain",   "ffe.bias"};
  for (std::size_t i = 0; i < all.size(); ++i) body += tensor_line(all[i], *tensors[i]);
  for (std::size_t i = 0; i < names.size(); ++i) {
    body += tensor_line("adam.m." + names[i], state.adam.m.at(i));
    body += tensor_line("adam.v." + names[i], state.adam.v.at(i));
  }

  json h;
  h["schema_version"] = kCheckpointSchemaVersion;
  h["epoch"] = state.epoch;
  h["step"] = state.step;
  h["gap_ratio"] = format_double(state.gap_ratio);
  h["adam_t"] = state.adam.t;
  h["k_known"] = m.bank.k_known;
  h["live"] = m.bank.live;
  h["usage"] = state.usage.counts();
  h["input_dim"] = m.input_dim;
  h["ffe_side"] = m.ffe.side;
  h["ffe_enabled"] = m.ffe.enabled;
  h["model"] = {{"hidden", m.config.hidden},
                {"feature_dim", m.config.feature_dim},
                {"logit_scale", format_double(m.config.logit_scale)},
                {"sharpen_tau", format_double(m.config.sharpen_tau)},
                {"ffe_enabled", m.config.ffe_enabled}};
  h["checksum"] = fnv1a_hex(body);
  std::filesystem::create_directories(path.parent_path());
  write_file(path, h.dump() + "\n" + body);
}

RunState checkpoint_resume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  const std::string text = read_file(path);
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw DataError("checkpoint truncated: " + path.string());
  const std::string body = text.substr(nl + 1);
  json h;
  try {
    h = json::parse(text.substr(0, nl));
  } catch (const json::exception& e) {
    throw DataError("checkpoint header unreadable: " + std::string(e.what()));
  }
  try {
    if (h.at("schema_version").get<int>() != kCheckpointSchemaVersion)
      throw DataError("checkpoint schema version mismatch");
    if (h.at("checksum").get<std::string>() != fnv1a_hex(body))
      throw DataError("checkpoint checksum mismatch: " + path.string());

    RunState st;
    st.epoch = h.at("epoch").get<int>();
    st.step = h.at("step").get<std::uint64_t>();
    st.gap_ratio = parse_double(h.at("gap_ratio").get<std::string>());
    st.adam.t = h.at("adam_t").get<std::uint64_t>();
    Model& m = st.model;
    const json& mc = h.at("model");
    m.config.hidden = mc.at("hidden").get<int>();
    m.config.feature_dim = mc.at("feature_dim").get<int>();
    m.config.logit_scale = parse_double(mc.at("logit_scale").get<std::string>());
    m.config.sharpen_tau = parse_double(mc.at("sharpen_tau").get<std::string>());
    m.config.ffe_enabled = mc.at("ffe_enabled").get<bool>();
    m.input_dim = h.at("input_dim").get<std::size_t>();
    m.ffe.side = h.at("ffe_side").get<std::size_t>();
    m.ffe.enabled = h.at("ffe_enabled").get<bool>();
    m.bank.k_known = h.at("k_known").get<int>();
    m.bank.live = h.at("live").get<std::vector<bool>>();
    st.usage = UsageCounter(m.bank.live.size());
    const auto usage = h.at("usage").get<std::vector<std::size_t>>();
    if (usage.size() != m.bank.live.size()) throw DataError("checkpoint usage length mismatch");
    st.usage.counts() = usage;

    std::map<std::string, Tensor> tensors;
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto fields = split(line, ',');
      if (fields.size() < 2) throw DataError("checkpoint row malformed");
      std::vector<std::size_t> shape;
      for (auto d : split(fields[1], 'x')) shape.push_back(static_cast<std::size_t>(parse_int(d)));
      if (shape_numel(shape) != fields.size() - 2)
        throw DataError("checkpoint tensor " + std::string(fields[0]) + " has the wrong value count");
      std::vector<double> values;
      values.reserve(fields.size() - 2);
      for (std::size_t i = 2; i < fields.size(); ++i) values.push_back(parse_double(fields[i]));
      tensors[std::string(fields[0])] = Tensor(std::move(shape), std::move(values));
    }
    auto take = [&](const std::string& name) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw DataError("checkpoint is missing tensor " + name);
      return it->second;
    };
    m.w1 = take("encoder.w1");
    m.b1 = take("encoder.b1");
    m.w2 = take("encoder.w2");
    m.b2 = take("encoder.b2");
    m.bank.prototypes = take("prototypes");
    m.ffe.gain = take("ffe.gain");
    m.ffe.bias = take("ffe.bias");
    if (m.bank.prototypes.rows() != m.bank.live.size()) throw DataError("checkpoint prototype count mismatch");
    for (const auto& name : param_names(m)) {
      st.adam.m.push_back(take("adam.m." + name));
      st.adam.v.push_back(take("adam.v." + name));
    }
    return st;
  } catch (const json::exception& e) {
    throw DataError("checkpoint header incomplete: " + std::string(e.what()));
  }
}

void truncate_logs(const std::filesystem::path& run_dir, int epoch) {
  for (const char* file : {kMetricsFile, kEstimatesFile, kLossesFile, kHistFile, kDiagFile}) {
    const auto path = run_dir / file;
    if (!std::filesystem::exists(path)) continue;
    std::istringstream in(read_file(path));
    std::string line, kept;
    bool header = true;
    while (std::getline(in, line)) {
      if (header) {
        kept += line + "\n";
        header = false;
        continue;
      }
      std::string_view key = split(line, ',').at(0);
      if (std::string(file) == kDiagFile) key = key.substr(key.rfind('@') + 1);
      if (parse_int(key) <= epoch) kept += line + "\n";
    }
    write_file(path, kept);
  }
}

namespace {

std::string num(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

struct RunLog {
  std::filesystem::path dir;

  bool enabled() const { return !dir.empty(); }

  void start(const TrainConfig& config, const std::string& data_dir) const {
    std::filesystem::create_directories(dir / "checkpoints");
    write_file(dir / "config.json", config_to_json(config, data_dir));
    write_file(dir / kMetricsFile, metrics_csv_header() + "\n");
    write_file(dir / kEstimatesFile, "epoch,k_star,n_low,estimated_K\n");
    write_file(dir / kLossesFile, "epoch,batch,l_ce,r_reg,l_ccr,l_acr,l_pseudo,total,gap_ratio,n_selected\n");
    write_file(dir / kHistFile, "epoch,group,bin_lo,bin_hi,count\n");
    write_file(dir / kDiagFile, "op,analytic,empirical,tolerance,status\n");
  }

  void epoch(const EpochRecord& rec, const ConfidenceHistogram* hist, double alpha, std::size_t prev_k,
             const PrototypeBank& bank) const {
    const std::string e = std::to_string(rec.epoch);
    if (rec.report) append_file(dir / kMetricsFile, metrics_csv_row(rec.epoch, *rec.report) + "\n");
    append_file(dir / kEstimatesFile, e + "," + std::to_string(rec.prune.k_star) + "," +
                                          std::to_string(rec.prune.low.size()) + "," +
                                          std::to_string(rec.estimated_k) + "\n");
    std::string losses;
    double worst = 0.0;
    for (std::size_t b = 0; b < rec.steps.size(); ++b) {
      const LossBundle& l = rec.steps[b];
      std::size_t selected = 0;
      for (int m : l.acr_mask) selected += static_cast<std::size_t>(m);
      losses += e + "," + std::to_string(b) + "," + num(l.l_ce) + "," + num(l.r_reg) + "," + num(l.l_ccr) + "," +
                num(l.l_acr) + "," + num(l.l_pseudo) + "," + num(l.total) + "," + num(l.gap_ratio) + "," +
                std::to_string(selected) + "\n";
      worst = std::max(worst, std::abs(l.total - (loss_total(l.l_ce, l.r_reg, l.l_acr, l.l_ccr, alpha) + l.l_pseudo)));
    }
    append_file(dir / kLossesFile, losses);
    if (hist) {
      std::string rows;
      for (std::size_t b = 0; b < kHistBins; ++b) {
        const std::string edges = format_double(static_cast<double>(b) * kHistBinWidth) + "," +
                                  format_double(static_cast<double>(b + 1) * kHistBinWidth);
        rows += e + ",known," + edges + "," + std::to_string(hist->known[b]) + "\n";
        rows += e + ",novel," + edges + "," + std::to_string(hist->novel[b]) + "\n";
      }
      append_file(dir / kHistFile, rows);
    }
    double norm_err = 0.0;
    for (auto k : bank.live_indices()) {
      double s = 0.0;
      for (double v : bank.prototypes.row(k)) s += v * v;
      norm_err = std::max(norm_err, std::abs(std::sqrt(s) - 1.0));
    }
    auto diag = [&](const std::string& op, double analytic, double empirical, double tol, bool ok) {
      return op + "@" + e + "," + num(analytic) + "," + num(empirical) + "," + num(tol) + "," +
             (ok ? "PASS" : "FAIL") + "\n";
    };
    std::string d;
    d += diag("loss_additivity", 0.0, worst, 1e-12, worst <= 1e-12);
    d += diag("estimate_non_increasing", static_cast<double>(prev_k), static_cast<double>(rec.estimated_k), 0.0,
              rec.estimated_k <= prev_k);
    d += diag("prototype_unit_norm", 1.0, 1.0 + norm_err, 1e-9, norm_err <= 1e-9);
    append_file(dir / kDiagFile, d);
  }
};

}  // namespace

RunResult run(const TrainConfig& config, const SynthDataset& data, const RunOptions& options) {
  config.validate();
  RunResult result;
  RunState& st = result.state;
  st = options.resume ? *options.resume : initial_state(config, data);
  if (st.model.input_dim != data.config.input_dim()) throw std::invalid_argument("run state does not match dataset");

  const RunLog log{options.out_dir};
  if (log.enabled()) {
    if (options.resume) {
      std::filesystem::create_directories(log.dir / "checkpoints");
      truncate_logs(log.dir, st.epoch);
    } else {
      log.start(config, options.data_dir);
    }
  }

  const int last = options.stop_after > 0 ? std::min(options.stop_after, config.epochs) : config.epochs;
  const int k_known = st.model.bank.k_known;
  for (int e = st.epoch + 1; e <= last; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    const std::size_t prev_k = st.model.bank.live_count();

    const auto batches = make_batches(data.n_labeled(), data.n_unlabeled(), config.batch_size, e, config.seed);
    rec.steps.reserve(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b)
      rec.steps.push_back(train_step(batches[b], data, st, config, e, b).losses);
    rec.usage = st.usage.counts();

    if (e >= config.loss.warmup_epochs) {
      std::vector<std::size_t> all(data.n_unlabeled());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const Tensor weak = views(data.unlabeled, all, data.n_labeled(), data, config, e, Strength::weak);
      rec.gap = acr_gap(infer(st.model, weak).probs, k_known, config.loss.max_gap_ratio);
      st.gap_ratio = rec.gap.ratio;
    }

    if (!config.know_k_u && config.prune) {
      rec.prune = run_epoch(st.usage, st.model.bank, config.dpp);
      rec.prune.epoch = e;
      const std::size_t d = st.model.bank.prototypes.cols();
      for (auto [low, anchor] : rec.prune.merges) {
        (void)anchor;
        for (Tensor* t : {&st.adam.m[kPrototypeParam], &st.adam.v[kPrototypeParam]})
          std::fill_n(t->raw().begin() + static_cast<std::ptrdiff_t>(low * d), d, 0.0);
      }
    } else {
      st.usage.reset();
    }
    rec.estimated_k = st.model.bank.live_count();
    rec.prune.estimated_k = rec.estimated_k;

    std::optional<ConfidenceHistogram> hist;
    if (e % config.eval_every == 0 || e == last) {
      EvalPass pass = evaluate_model(st.model, data);
      hist = confidence_histogram(pass.inference.confidence, data.unlabeled_truth, data.known_role);
      rec.report = std::move(pass.report);
    }
    st.epoch = e;

    if (log.enabled()) {
      log.epoch(rec, hist ? &*hist : nullptr, config.loss.alpha, prev_k, st.model.bank);
      if ((config.checkpoint_every > 0 && e % config.checkpoint_every == 0) || e == last)
        checkpoint_save(st, checkpoint_path(log.dir, e));
    }
    if (options.on_epoch) options.on_epoch(rec);
    result.history.push_back(std::move(rec));
  }
  return result;
}

}  // namespace owattr
