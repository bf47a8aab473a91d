#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "owattr/dpp.hpp"
#include "owattr/losses.hpp"
#include "owattr/metrics.hpp"
#include "owattr/model.hpp"
#include "owattr/synthdata.hpp"

namespace owattr {

enum class Method { cal, gumbel_baseline, fixmatch_baseline };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 128;
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  LossConfig loss;
  DppConfig dpp;
  ModelConfig model;
  AugmentConfig augment;
  Method method = Method::cal;
  bool know_k_u = false;
  /// When false, usage is still counted but prototypes are never merged.
  bool prune = true;
  std::uint64_t seed = 0;
  int eval_every = 1;
  /// 0 keeps only the final checkpoint.
  int checkpoint_every = 5;

  void validate() const;
};

std::string config_to_json(const TrainConfig& c, const std::string& data_dir = "");
/// Fields missing from the document keep their defaults.
TrainConfig config_from_json(const std::string& text, std::string* data_dir = nullptr);

/// Indices into the labeled and unlabeled arrays of a dataset.
struct Batch {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// ceil((L + U) / batch_size) stratified batches; each holds a near-equal
/// share of both shuffled streams, so every sample appears exactly once.
std::vector<Batch> make_batches(std::size_t n_labeled, std::size_t n_unlabeled, int batch_size, int epoch,
                                std::uint64_t seed);

struct AdamState {
  std::vector<Tensor> m, v;  // one per trainable tensor, in param_names() order
  std::uint64_t t = 0;
};

/// Everything needed to continue a run. Randomness is derived from
/// (seed, epoch, batch, sample id), so there is no generator state to carry.
struct RunState {
  int epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  Model model;
  AdamState adam;
  double gap_ratio = 1.0;
  UsageCounter usage;
};

/// Trainable tensor names in optimizer order.
std::vector<std::string> param_names(const Model& model);

struct StepResult {
  LossBundle losses;
  std::vector<std::size_t> unlabeled_argmax;  // prototype index per unlabeled row, weak view
};

/// One optimizer step. Throws std::runtime_error (with a dump of the batch
/// ids and loss terms) when the loss is not finite.
StepResult train_step(const Batch& batch, const SynthDataset& data, RunState& state, const TrainConfig& config,
                      int epoch, std::size_t batch_index);

struct EpochRecord {
  int epoch = 0;
  std::optional<EvalReport> report;
  GapStats gap;
  PruneReport prune;
  std::vector<std::size_t> usage;  // per prototype, before the DPP reset
  std::size_t estimated_k = 0;
  std::vector<LossBundle> steps;
};

struct RunOptions {
  /// Run directory; empty disables all file output.
  std::filesystem::path out_dir;
  std::string data_dir;  // recorded in config.json
  /// Stop after this epoch (0 = config.epochs). The schedule still uses config.epochs.
  int stop_after = 0;
  std::optional<RunState> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct RunResult {
  RunState state;
  std::vector<EpochRecord> history;
};

RunState initial_state(const TrainConfig& config, const SynthDataset& data);

RunResult run(const TrainConfig& config, const SynthDataset& data, const RunOptions& options = {});

inline constexpr int kCheckpointSchemaVersion = 1;

void checkpoint_save(const RunState& state, const std::filesystem::path& path);
/// Throws DataError for a missing, truncated or tampered file.
RunState checkpoint_resume(const std::filesystem::path& path);
std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, int epoch);
/// Highest-epoch checkpoint in a run directory, if any.
std::optional<int> latest_checkpoint(const std::filesystem::path& run_dir);

/// Drops rows for epochs after `epoch` from the run's CSV logs so a resumed
/// run appends cleanly.
void truncate_logs(const std::filesystem::path& run_dir, int epoch);

/// Clean-input inference plus the evaluation protocol.
struct EvalPass {
  Inference inference;
  EvalReport report;
};
EvalPass evaluate_model(const Model& model, const SynthDataset& data);

inline constexpr double kHistBinWidth = 0.05;
inline constexpr std::size_t kHistBins = 20;
/// Counts of top-1 confidence per bin, split by truth group.
struct ConfidenceHistogram {
  std::vector<std::size_t> known = std::vector<std::size_t>(kHistBins, 0);
  std::vector<std::size_t> novel = std::vector<std::size_t>(kHistBins, 0);
};
ConfidenceHistogram confidence_histogram(const std::vector<double>& confidence, const std::vector<int>& truth,
                                         const std::vector<bool>& known_role);

}  // namespace owattr
