#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "owattr/textio.hpp"
#include "owattr/trainer.hpp"

using namespace owattr;
namespace fs = std::filesystem;

namespace {

SynthDataset small_data() {
  SynthConfig c;
  c.k_known = 2;
  c.k_novel = 3;
  c.feature_dim = 12;
  c.labeled_per_known = 30;
  c.unlabeled_per_known = 10;
  c.unlabeled_per_novel = 30;
  c.seed = 4;
  return generate(c);
}

TrainConfig small_config() {
  TrainConfig t;
  t.epochs = 8;
  t.batch_size = 32;
  t.lr = 5e-3;
  t.loss.warmup_epochs = 2;
  t.loss.epochs_total = 8;
  t.model.hidden = 16;
  t.model.feature_dim = 8;
  t.seed = 11;
  return t;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("owattr_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("batches cover every sample once with a stable ratio") {
  for (auto [nl, nu, bs] : std::vector<std::tuple<std::size_t, std::size_t, int>>{
           {750, 1750, 128}, {60, 110, 32}, {5, 300, 64}, {13, 7, 4}}) {
    const auto a = make_batches(nl, nu, bs, 3, 9);
    CHECK(a.size() == std::min({(nl + nu + static_cast<std::size_t>(bs) - 1) / static_cast<std::size_t>(bs), nl, nu}));
    std::set<std::size_t> sl, su;
    std::size_t min_l = nl, max_l = 0;
    for (const auto& b : a) {
      CHECK_FALSE(b.labeled.empty());
      CHECK_FALSE(b.unlabeled.empty());
      sl.insert(b.labeled.begin(), b.labeled.end());
      su.insert(b.unlabeled.begin(), b.unlabeled.end());
      min_l = std::min(min_l, b.labeled.size());
      max_l = std::max(max_l, b.labeled.size());
    }
    CHECK(sl.size() == nl);
    CHECK(su.size() == nu);
    CHECK(max_l - min_l <= 1);
    const auto again = make_batches(nl, nu, bs, 3, 9);
    CHECK(again.front().labeled == a.front().labeled);
    CHECK_FALSE(make_batches(nl, nu, bs, 4, 9).front().unlabeled == a.front().unlabeled);
  }
}

TEST_CASE("logged losses add up and warmup disables asymmetric reinforcement") {
  const SynthDataset data = small_data();
  TrainConfig cfg = small_config();
  const RunResult r = run(cfg, data);
  REQUIRE(r.history.size() == 8);
  std::size_t prev_k = r.state.model.bank.size();
  for (const auto& rec : r.history) {
    for (const auto& s : rec.steps) {
      REQUIRE(std::abs(s.total - (loss_total(s.l_ce, s.r_reg, s.l_acr, s.l_ccr, cfg.loss.alpha) + s.l_pseudo)) <=
              1e-12);
      REQUIRE(s.l_pseudo == 0.0);
      if (rec.epoch <= cfg.loss.warmup_epochs) REQUIRE(s.l_acr == 0.0);
    }
    CHECK(rec.estimated_k <= prev_k);
    prev_k = rec.estimated_k;
    REQUIRE(rec.report);
  }
  for (auto j : r.state.model.bank.live_indices()) {
    double n = 0;
    for (double v : r.state.model.bank.prototypes.row(j)) n += v * v;
    CHECK(std::sqrt(n) == doctest::Approx(1.0));
  }
}

TEST_CASE("baselines fill their own loss slots") {
  const SynthDataset data = small_data();
  TrainConfig cfg = small_config();
  cfg.method = Method::gumbel_baseline;
  cfg.know_k_u = true;
  const RunResult g = run(cfg, data, {.stop_after = 3});
  bool pseudo = false;
  for (const auto& rec : g.history)
    for (const auto& s : rec.steps) {
      pseudo = pseudo || s.l_pseudo > 0;
      REQUIRE(s.l_acr == 0.0);
      REQUIRE(s.l_ccr == 0.0);
    }
  CHECK(pseudo);
  CHECK(g.state.model.bank.live_count() == 5);

  cfg.method = Method::fixmatch_baseline;
  const RunResult f = run(cfg, data, {.stop_after = 3});
  for (const auto& rec : f.history)
    for (const auto& s : rec.steps) {
      if (rec.epoch <= cfg.loss.warmup_epochs) REQUIRE(s.l_acr == 0.0);
      REQUIRE(s.l_pseudo == 0.0);
    }
  CHECK(method_from_string(to_string(Method::fixmatch_baseline)) == Method::fixmatch_baseline);
  CHECK_THROWS(method_from_string("mixmatch"));
}

TEST_CASE("repeated steps on a frozen batch reduce the loss") {
  const SynthDataset data = small_data();
  TrainConfig cfg = small_config();
  cfg.know_k_u = true;
  RunState st = initial_state(cfg, data);
  const auto batches = make_batches(data.n_labeled(), data.n_unlabeled(), cfg.batch_size, 1, cfg.seed);
  const double first = train_step(batches[0], data, st, cfg, 1, 0).losses.total;
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_step(batches[0], data, st, cfg, 1, 0).losses.total;
  CHECK(last < first);
}

TEST_CASE("identical runs write identical logs") {
  const SynthDataset data = small_data();
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.loss.epochs_total = 4;
  const fs::path a = scratch("a"), b = scratch("b");
  run(cfg, data, {.out_dir = a});
  run(cfg, data, {.out_dir = b});
  for (const char* f : {"metrics.csv", "losses.csv", "estimates.csv", "config.json"})
    CHECK(read_file(a / f) == read_file(b / f));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("checkpoint round trip and resume") {
  const SynthDataset data = small_data();
  TrainConfig cfg = small_config();
  cfg.epochs = 4;
  cfg.loss.epochs_total = 4;
  cfg.checkpoint_every = 1;
  const fs::path full = scratch("full"), part = scratch("part");
  const RunResult whole = run(cfg, data, {.out_dir = full});
  run(cfg, data, {.out_dir = part, .stop_after = 1});
  REQUIRE(latest_checkpoint(part) == 1);

  const RunState s1 = checkpoint_resume(checkpoint_path(part, 1));
  const fs::path copy = scratch("copy.ckpt");
  checkpoint_save(s1, copy);
  CHECK(read_file(copy) == read_file(checkpoint_path(part, 1)));

  const RunResult resumed = run(cfg, data, {.out_dir = part, .resume = s1});
  CHECK(resumed.state.model.bank.prototypes == whole.state.model.bank.prototypes);
  CHECK(resumed.state.model.w1 == whole.state.model.w1);
  CHECK(resumed.state.step == whole.state.step);
  for (const char* f : {"metrics.csv", "losses.csv", "estimates.csv"}) CHECK(read_file(part / f) == read_file(full / f));

  std::string text = read_file(copy);
  const auto pos = text.rfind(",0.");
  REQUIRE(pos != std::string::npos);
  text[pos + 1] = '1';
  write_file(copy, text);
  CHECK_THROWS_AS(checkpoint_resume(copy), DataError);
  write_file(copy, read_file(checkpoint_path(part, 1)).substr(0, 200));
  CHECK_THROWS_AS(checkpoint_resume(copy), DataError);
  CHECK_THROWS_AS(checkpoint_resume(scratch("nope.ckpt")), DataError);
  fs::remove_all(full);
  fs::remove_all(part);
  fs::remove(copy);
}

TEST_CASE("config json round trip") {
  TrainConfig c = small_config();
  c.method = Method::gumbel_baseline;
  c.loss.alpha = 0.35;
  c.model.logit_scale = 7.5;
  std::string dir;
  const TrainConfig back = config_from_json(config_to_json(c, "/data/x"), &dir);
  CHECK(dir == "/data/x");
  CHECK(back.method == c.method);
  CHECK(back.loss.alpha == 0.35);
  CHECK(back.model.logit_scale == 7.5);
  CHECK(back.epochs == c.epochs);
  CHECK(config_to_json(back, "/data/x") == config_to_json(c, "/data/x"));
  TrainConfig bad = c;
  bad.loss.warmup_epochs = 20;
  CHECK_THROWS(bad.validate());
}
