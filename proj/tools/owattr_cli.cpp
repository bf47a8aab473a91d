// owattr: generate synthetic attribution data, train, evaluate and export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "owattr/kernels.hpp"
#include "owattr/metrics.hpp"
#include "owattr/skewlab.hpp"
#include "owattr/synthdata.hpp"
#include "owattr/textio.hpp"
#include "owattr/trainer.hpp"

namespace fs = std::filesystem;
using namespace owattr;

namespace {

struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw CommandError("expected true or false, got '" + s + "'");
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing " + path.string());
  std::istringstream in(read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    for (auto f : split(line, ',')) fields.emplace_back(f);
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw DataError("empty " + path.string());
  return rows;
}

struct LoadedRun {
  TrainConfig config;
  std::string data_dir;
};

LoadedRun load_run(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw DataError("run directory not found: " + run_dir.string());
  LoadedRun r;
  r.config = config_from_json(read_file(run_dir / "config.json"), &r.data_dir);
  return r;
}

struct GenArgs {
  std::string out, preset = "default";
  std::uint64_t seed = 0;
  std::optional<int> k_known, k_novel, dim, labeled_per_known, unlabeled_per_known, unlabeled_per_novel, image_side;
  std::optional<double> gamma, eta;
};

int cmd_gen_data(const GenArgs& a) {
  SynthConfig c;
  if (a.preset == "image") c = SynthConfig::image_preset();
  else if (a.preset != "default") throw CommandError("unknown preset '" + a.preset + "'");
  c.seed = a.seed;
  if (a.k_known) c.k_known = *a.k_known;
  if (a.k_novel) c.k_novel = *a.k_novel;
  if (a.dim) c.feature_dim = *a.dim;
  if (a.gamma) c.min_angle_gamma = *a.gamma;
  if (a.eta) c.intra_noise_eta = *a.eta;
  if (a.labeled_per_known) c.labeled_per_known = *a.labeled_per_known;
  if (a.unlabeled_per_known) c.unlabeled_per_known = *a.unlabeled_per_known;
  if (a.unlabeled_per_novel) c.unlabeled_per_novel = *a.unlabeled_per_novel;
  if (a.image_side) c.image_side = *a.image_side;
  const SynthDataset ds = generate(c);
  save_dataset(ds, a.out);
  std::cout << "wrote " << ds.n_labeled() << " labeled and " << ds.n_unlabeled() << " unlabeled samples ("
            << c.k_known << " known, " << c.k_novel << " novel classes) to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string data, out, method = "cal", know_ku = "false";
  double alpha = 0.2, gamma = 0.9;
  std::uint64_t seed = 0;
  std::optional<int> epochs, batch_size, warmup, checkpoint_every;
  std::optional<double> lr, logit_scale;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  TrainConfig c;
  c.method = method_from_string(a.method);
  c.know_k_u = parse_bool(a.know_ku);
  c.loss.alpha = a.alpha;
  c.loss.conf_threshold_gamma = a.gamma;
  c.seed = a.seed;
  if (a.epochs) c.epochs = *a.epochs;
  if (a.batch_size) c.batch_size = *a.batch_size;
  if (a.warmup) c.loss.warmup_epochs = *a.warmup;
  if (a.checkpoint_every) c.checkpoint_every = *a.checkpoint_every;
  if (a.lr) c.lr = *a.lr;
  if (a.logit_scale) c.model.logit_scale = *a.logit_scale;
  c.loss.epochs_total = c.epochs;
  c.validate();

  const SynthDataset ds = load_dataset(a.data);
  RunOptions opt;
  opt.out_dir = a.out;
  opt.data_dir = fs::absolute(a.data).string();
  if (a.resume) {
    const auto last = latest_checkpoint(a.out);
    if (!last) throw CommandError("--resume: no checkpoint in " + a.out);
    opt.resume = checkpoint_resume(checkpoint_path(a.out, *last));
    std::cout << "resuming after epoch " << *last << "\n";
  }
  opt.on_epoch = [](const EpochRecord& rec) {
    std::cout << "epoch " << rec.epoch << "  K=" << rec.estimated_k;
    if (rec.report)
      std::cout << "  all_acc=" << format_double(rec.report->all_acc)
                << "  novel_acc=" << format_double(rec.report->novel_acc);
    std::cout << "\n";
  };
  run(c, ds, opt);
  return 0;
}

int cmd_eval(const std::string& run_dir, std::optional<int> epoch, bool check) {
  const LoadedRun r = load_run(run_dir);
  if (r.data_dir.empty()) throw DataError("config.json does not name a dataset");
  const int e = epoch ? *epoch : latest_checkpoint(run_dir).value_or(-1);
  if (e < 0) throw DataError("no checkpoint in " + run_dir);
  const RunState st = checkpoint_resume(checkpoint_path(run_dir, e));
  const SynthDataset ds = load_dataset(r.data_dir);
  const std::string row = metrics_csv_row(e, evaluate_model(st.model, ds).report);
  std::cout << metrics_csv_header() << "\n" << row << "\n";
  if (check) {
    for (const auto& fields : read_csv(fs::path(run_dir) / "metrics.csv")) {
      if (fields.front() != std::to_string(e)) continue;
      std::string logged;
      for (std::size_t i = 0; i < fields.size(); ++i) logged += (i ? "," : "") + fields[i];
      if (logged != row) {
        std::cerr << "logged row differs:\n" << logged << "\n";
        return 1;
      }
      std::cerr << "matches logged row\n";
      return 0;
    }
    std::cerr << "epoch " << e << " has no logged metrics row\n";
    return 1;
  }
  return 0;
}

int cmd_estimate_k(const std::string& run_dir) {
  load_run(run_dir);
  const auto rows = read_csv(fs::path(run_dir) / "estimates.csv");
  std::cout << "epoch,estimated_K\n";
  for (std::size_t i = 1; i < rows.size(); ++i) std::cout << rows[i].at(0) << "," << rows[i].at(3) << "\n";
  if (rows.size() > 1) std::cout << "final estimate: " << rows.back().at(3) << "\n";
  return 0;
}

int cmd_diagnose(const std::string& out, std::size_t budget, std::uint64_t seed) {
  SkewLabConfig c;
  c.budget = budget;
  c.seed = seed;
  const auto rows = run_diagnostics(c);
  fs::create_directories(out);
  write_file(fs::path(out) / "diagnostics.csv", diagnostics_csv(rows));
  std::size_t pass = 0, warn = 0, fail = 0;
  for (const auto& r : rows) {
    if (r.status == "PASS") ++pass;
    else if (r.status == "WARN") ++warn;
    else ++fail;
  }
  std::cout << pass << " pass, " << warn << " warn (budget below " << SkewLabConfig::kMinBudget << "), " << fail
            << " fail\n";
  return fail ? 1 : 0;
}

int cmd_export(const std::string& run_dir, const std::string& out) {
  load_run(run_dir);
  const fs::path run(run_dir), dst(out);
  fs::create_directories(dst);

  std::string hist = "epoch,group,bin_lo,bin_hi,count\n";
  const auto h = read_csv(run / "confidence_hist.csv");
  for (std::size_t i = 1; i < h.size(); ++i)
    hist += h[i].at(0) + "," + h[i].at(1) + "," + h[i].at(2) + "," + h[i].at(3) + "," + h[i].at(4) + "\n";
  write_file(dst / "confidence_histogram.csv", hist);

  const auto m = read_csv(run / "metrics.csv");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < m[0].size(); ++i) col[m[0][i]] = i;
  std::string noise = "epoch,series,value\n";
  for (std::size_t i = 1; i < m.size(); ++i)
    for (const char* series : {"lowconf_noise", "skew_delta"})
      noise += m[i].at(0) + "," + series + "," + m[i].at(col.at(series)) + "\n";
  write_file(dst / "lowconf_noise.csv", noise);

  std::string est = "epoch,series,value\n";
  const auto e = read_csv(run / "estimates.csv");
  for (std::size_t i = 1; i < e.size(); ++i) est += e[i].at(0) + ",estimated_K," + e[i].at(3) + "\n";
  write_file(dst / "estimated_k.csv", est);
  std::cout << "wrote plot data to " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  CLI::App app{"Open-world attribution lab on synthetic data"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--preset", gen.preset, "default or image")->check(CLI::IsMember({"default", "image"}));
  g->add_option("--seed", gen.seed);
  g->add_option("--k-known", gen.k_known);
  g->add_option("--k-novel", gen.k_novel);
  g->add_option("--dim", gen.dim);
  g->add_option("--gamma", gen.gamma, "Minimum angle between class means (radians)");
  g->add_option("--eta", gen.eta, "Maximum angular spread around a mean (radians)");
  g->add_option("--labeled-per-known", gen.labeled_per_known);
  g->add_option("--unlabeled-per-known", gen.unlabeled_per_known);
  g->add_option("--unlabeled-per-novel", gen.unlabeled_per_novel);
  g->add_option("--image-side", gen.image_side);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a run directory");
  t->add_option("--data", tr.data)->required();
  t->add_option("--out", tr.out)->required();
  t->add_option("--method", tr.method)->check(CLI::IsMember({"cal", "gumbel-baseline", "fixmatch-baseline"}));
  t->add_option("--know-ku", tr.know_ku, "true if the novel class count is given");
  t->add_option("--alpha", tr.alpha);
  t->add_option("--gamma", tr.gamma);
  t->add_option("--seed", tr.seed);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--lr", tr.lr);
  t->add_option("--warmup", tr.warmup);
  t->add_option("--logit-scale", tr.logit_scale);
  t->add_option("--checkpoint-every", tr.checkpoint_every);
  t->add_flag("--resume", tr.resume, "Continue from the latest checkpoint in --out");

  std::string eval_run;
  std::optional<int> eval_epoch;
  bool eval_check = false;
  auto* ev = app.add_subcommand("eval", "Re-evaluate a checkpoint");
  ev->add_option("--run", eval_run)->required();
  ev->add_option("--epoch", eval_epoch);
  ev->add_flag("--check", eval_check, "Compare against the logged metrics row");

  std::string est_run;
  auto* ek = app.add_subcommand("estimate-k", "Print the estimated class count trajectory");
  ek->add_option("--run", est_run)->required();

  std::string diag_out;
  std::size_t diag_budget = 100000;
  std::uint64_t diag_seed = 0;
  auto* ds = app.add_subcommand("diagnose-skew", "Check the pseudo-labeling skew identities");
  ds->add_option("--out", diag_out)->required();
  ds->add_option("--budget", diag_budget);
  ds->add_option("--seed", diag_seed);

  std::string exp_run, exp_out;
  auto* ex = app.add_subcommand("export-plots", "Export tidy CSVs for plotting");
  ex->add_option("--run", exp_run)->required();
  ex->add_option("--out", exp_out)->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*ev) return cmd_eval(eval_run, eval_epoch, eval_check);
    if (*ek) return cmd_estimate_k(est_run);
    if (*ds) return cmd_diagnose(diag_out, diag_budget, diag_seed);
    if (*ex) return cmd_export(exp_run, exp_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
