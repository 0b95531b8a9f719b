#include "doctest.h"

#include <algorithm>

#include "climemu/errors.hpp"
#include "climemu/rollout.hpp"
#include "climemu/toyesm.hpp"

using namespace climemu;

namespace {

struct Fixture {
  ScenarioDataset train_ds, holdout;
  NormStats stats;
  TrainConfig cfg;
  TrainResult det;
  FlowTrainResult flow;

  Fixture() {
    ToyEsmConfig ecfg;
    ecfg.n_lat = 4;
    ecfg.n_lon = 8;
    ecfg.levels = {850, 500};
    ecfg.ozone_levels = {500};
    train_ds = simulate(ecfg, "mid", 72, 2, 7);
    holdout = simulate(ecfg, "overshoot", 48, 1, 8);
    stats = compute_norm_stats({&train_ds});
    cfg.width = 16;
    cfg.total_steps = 150;
    cfg.warmup_steps = 10;
    cfg.batch_size = 4;
    det = train_deterministic({&train_ds}, stats, cfg, 5);
    flow = train_generative({det.params}, {&train_ds}, cfg);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("euler sampling is reproducible and seed-sensitive") {
  const Fixture& f = fixture();
  Rng rng1(3), rng2(3), rng3(4);
  TrainConfig sample_cfg = f.cfg;
  Rng srng(1);
  const TrainingItem item = sample_training_item(f.train_ds, sample_cfg, srng);
  const NormalizedItem n = normalize_item(f.det.params, item);
  const auto a = euler_sample(f.det.params, f.flow.params, n, 12, rng1);
  const auto b = euler_sample(f.det.params, f.flow.params, n, 12, rng2);
  const auto c = euler_sample(f.det.params, f.flow.params, n, 12, rng3);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("rollout reproduces exactly under the same seed") {
  const Fixture& f = fixture();
  RolloutConfig rc;
  rc.n_members = 2;
  rc.seed = 21;
  const ScenarioDataset a = rollout({f.det.params}, f.flow.params, f.holdout, rc);
  const ScenarioDataset b = rollout({f.det.params}, f.flow.params, f.holdout, rc);
  CHECK(a.members == b.members);
  rc.seed = 22;
  const ScenarioDataset c = rollout({f.det.params}, f.flow.params, f.holdout, rc);
  CHECK(a.members != c.members);
}

TEST_CASE("rollout preserves the initial months and scenario shape") {
  const Fixture& f = fixture();
  RolloutConfig rc;
  const ScenarioDataset out = rollout({f.det.params}, std::nullopt, f.holdout, rc);
  CHECK(out.n_months == f.holdout.n_months);
  CHECK(out.members[0].size() == f.holdout.n_months);
  CHECK(out.members[0][0] == f.holdout.members[0][0]);
  CHECK(out.members[0][1] == f.holdout.members[0][1]);
  CHECK(out.variables == f.holdout.variables);
}

TEST_CASE("members differ when sampling, agree when deterministic") {
  const Fixture& f = fixture();
  RolloutConfig rc;
  rc.n_members = 2;
  const ScenarioDataset gen = rollout({f.det.params}, f.flow.params, f.holdout, rc);
  CHECK(gen.members[0][10] != gen.members[1][10]);
  const ScenarioDataset det = rollout({f.det.params}, std::nullopt, f.holdout, rc);
  CHECK(det.members[0] == det.members[1]);
}

TEST_CASE("a blown-up model raises RolloutDiverged with a month index") {
  const Fixture& f = fixture();
  EmulatorParams bad = f.det.params;
  for (double& w : bad.w_out.v) w = 50.0;
  for (double& b : bad.b_out.v) b = 200.0;
  RolloutConfig rc;
  try {
    rollout({bad}, std::nullopt, f.holdout, rc);
    FAIL("expected RolloutDiverged");
  } catch (const RolloutDiverged& e) {
    CHECK(std::string(e.what()).find("month") != std::string::npos);
  }
}

TEST_CASE("checkpoint selection ranks corrupted checkpoints strictly last") {
  const Fixture& f = fixture();
  std::vector<Checkpoint> cks;
  cks.push_back({100, f.det.params});
  cks.push_back({200, f.det.params});
  EmulatorParams corrupt = f.det.params;
  for (double& b : corrupt.b_out.v) b = 1000.0;
  cks.push_back({300, corrupt});

  RolloutConfig rc;
  const SelectionResult sel = select_checkpoint(cks, std::nullopt, f.holdout, false, rc);
  CHECK(sel.best != 2);
  CHECK(sel.scores[2].nrmse > sel.scores[0].nrmse);
  CHECK(sel.scores[2].nrmse > sel.scores[1].nrmse);
}

TEST_CASE("checkpoint selection is permutation invariant") {
  const Fixture& f = fixture();
  // Perturb copies by different amounts so the ranking is strict.
  std::vector<Checkpoint> cks;
  for (std::size_t k = 0; k < 4; ++k) {
    Checkpoint c{100 * (k + 1), f.det.params};
    for (double& b : c.params.b_out.v) b += 0.05 * double(k);
    cks.push_back(std::move(c));
  }
  RolloutConfig rc;
  const SelectionResult forward = select_checkpoint(cks, std::nullopt, f.holdout, false, rc);
  std::vector<Checkpoint> reversed(cks.rbegin(), cks.rend());
  const SelectionResult backward =
      select_checkpoint(reversed, std::nullopt, f.holdout, false, rc);
  CHECK(forward.scores[forward.best].step == backward.scores[backward.best].step);
  for (std::size_t k = 0; k < cks.size(); ++k)
    CHECK(forward.scores[k].nrmse ==
          doctest::Approx(backward.scores[cks.size() - 1 - k].nrmse).epsilon(1e-14));
}

TEST_CASE("selection fails loudly when every checkpoint diverges") {
  const Fixture& f = fixture();
  EmulatorParams corrupt = f.det.params;
  for (double& b : corrupt.b_out.v) b = 1e6;
  std::vector<Checkpoint> cks{{1, corrupt}, {2, corrupt}};
  RolloutConfig rc;
  CHECK_THROWS_AS(select_checkpoint(cks, std::nullopt, f.holdout, false, rc),
                  SelectionFailure);
}
