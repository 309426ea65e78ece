// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "doctest.h"
#include "sharedworld/error.hpp"
#include "sharedworld/grpo.hpp"
#include "sharedworld/random.hpp"

using namespace sharedworld;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  auto dir = fs::temp_directory_path() / "sharedworld_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<TrainingWorld> tiny_dataset(int count, PolicyConfig pc = {}) {
  return make_dataset(WorldConfig{}, RenderSettings{}, pc, count, 42);
}

}  // namespace

TEST_CASE("advantages: degenerate group and the {1,2,3} case") {
  const std::vector<double> same(5, 0.7);
  for (double a : compute_advantages(same, 1e-8)) CHECK(a == 0.0);
  const std::vector<double> r{1, 2, 3};
  const auto a = compute_advantages(r, 1e-8);
  const double s = std::sqrt(2.0 / 3.0);  // population std
  CHECK(std::abs(a[0] - (-1.0 / s)) < 1e-12);
  CHECK(std::abs(a[0] - (-1.2247)) < 1e-4);
  CHECK(a[1] == 0.0);
  CHECK(std::abs(a[2] - 1.2247) < 1e-4);
  CHECK_THROWS_AS(compute_advantages(std::vector<double>{1.0}, 1e-8), Error);
}

TEST_CASE("advantages are standardized and match a two-pass oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = 2 + rng.below(30);
    std::vector<double> r;
    for (std::uint64_t i = 0; i < m; ++i) r.push_back(rng.uniform());
    const auto a = compute_advantages(r, 1e-8);
    double mean = 0.0, sq = 0.0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(m);
    for (double x : a) sq += (x - mean) * (x - mean);
    CHECK(std::abs(mean) < 1e-12);
    CHECK(std::abs(std::sqrt(sq / static_cast<double>(m)) - 1.0) < 1e-9);

    double rm = 0.0;
    for (double x : r) rm += x;
    rm /= static_cast<double>(m);
    double rv = 0.0;
    for (double x : r) rv += (x - rm) * (x - rm);
    const double sd = std::sqrt(rv / static_cast<double>(m));
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double want = (r[i] - rm) / sd;
      CHECK(std::abs(a[i] - want) <= 1e-9 * std::max(1.0, std::abs(want)));
    }
  }
}

TEST_CASE("advantage divisor is floored at adv_epsilon") {
  const std::vector<double> r{1.0, 1.0 + 1e-12};
  const auto a = compute_advantages(r, 1e-8);
  const double half_gap = (r[1] - r[0]) / 2.0;
  CHECK(a[1] == doctest::Approx(half_gap / 1e-8).epsilon(1e-9));
}

TEST_CASE("clipped objective examples") {
  CHECK(clipped_objective(1.0, 0.5, 0.2) == 0.5);
  CHECK(clipped_objective(2.0, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(clipped_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8).epsilon(1e-15));
}

TEST_CASE("clipped objective matches the min oracle and stays bounded") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const double rho = std::exp(rng.normal());
    const double a = rng.normal() * 2.0;
    const double eps = rng.uniform(0.01, 0.99);
    const double lo = 1.0 - eps, hi = 1.0 + eps;
    const double clipped = rho < lo ? lo : (rho > hi ? hi : rho);
    const double want = std::min(rho * a, clipped * a);
    const double got = clipped_objective(rho, a, eps);
    CHECK(got == want);
    if (rho <= hi) CHECK(std::abs(got) <= std::abs(a) * (1.0 + eps) + 1e-15);
    // gradient flag: the unclipped branch is active
    if (clip_passes_gradient(rho, a, eps)) CHECK(got == rho * a);
  }
}

TEST_CASE("policy ratio: identical parameters, closed form, clamping") {
  Rng rng(3);
  const PolicyConfig cfg;
  const auto p = PolicyParams::initialize(cfg, 4);
  Conditioning c;
  for (int i = 0; i < cfg.cond_dim; ++i) c.values.push_back(rng.normal());
  std::vector<double> z(14), prev(14);
  for (auto& v : z) v = rng.normal();
  for (auto& v : prev) v = rng.normal();
  const Transition tr{z, prev, 2, &c};
  CHECK(std::abs(policy_ratio(p, p, tr, 0.3).ratio - 1.0) < 1e-12);

  // Shift one output bias: only the first mean coordinate moves.
  PolicyParams q = p;
  const double shift = 0.05;
  q.weights()[p.size() - 14] += shift;
  const auto mu = predict_mean(p, z, 2, c);
  const double sigma = 0.3;
  const double a = prev[0] - mu[0];
  const double b = prev[0] - (mu[0] + shift);
  const double want = std::exp((a * a - b * b) / (2.0 * sigma * sigma));
  CHECK(policy_ratio(q, p, tr, sigma).ratio == doctest::Approx(want).epsilon(1e-10));

  const auto big = ratio_from_log_probs(50.0, 0.0, 30.0);
  CHECK(big.clamped);
  CHECK(big.ratio == std::exp(30.0));
  CHECK(big.log_ratio == 50.0);
  const auto small = ratio_from_log_probs(-50.0, 0.0, 30.0);
  CHECK(small.clamped);
  CHECK(small.ratio == std::exp(-30.0));
  CHECK_FALSE(ratio_from_log_probs(1.0, 0.5).clamped);
}

TEST_CASE("subsample_timesteps draws ceil(tau T) distinct steps") {
  for (int steps : {1, 4, 10}) {
    for (double tau : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      const auto idx = subsample_timesteps(steps, tau, 9);
      CHECK(static_cast<int>(idx.size()) == std::max(1, static_cast<int>(std::ceil(tau * steps - 1e-12))));
      CHECK(std::set<int>(idx.begin(), idx.end()).size() == idx.size());
      for (int k : idx) {
        CHECK(k >= 0);
        CHECK(k < steps);
      }
      CHECK(idx == subsample_timesteps(steps, tau, 9));
    }
  }
  // every index appears under some seed
  std::set<int> seen;
  for (std::uint64_t s = 0; s < 200; ++s) {
    for (int k : subsample_timesteps(4, 0.25, s)) seen.insert(k);
  }
  CHECK(seen.size() == 4);
}

TEST_CASE("AdamW first step matches the closed form") {
  TrainerConfig cfg;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.1;
  std::vector<double> params{1.0, -2.0, 0.5};
  const std::vector<double> grad{0.3, -0.1, 0.0};
  AdamState st;
  st.ascend(params, grad, cfg);
  // m_hat = g, v_hat = g^2 on the first step
  const double orig[3] = {1.0, -2.0, 0.5};
  for (int i = 0; i < 3; ++i) {
    const double g = grad[static_cast<std::size_t>(i)];
    const double want = orig[i] + 0.01 * g / (std::abs(g) + cfg.adam_epsilon) - 0.01 * 0.1 * orig[i];
    CHECK(params[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-14));
  }
  CHECK(st.t == 1);
}

TEST_CASE("first iterate after refreshing the old policy is on-policy") {
  const auto ds = tiny_dataset(1);
  const auto p = PolicyParams::initialize(PolicyConfig{}, 5);
  TrainerConfig cfg;
  cfg.group_size = 4;
  const DenoiseSchedule sched;
  const GeometryRewardConfig gc;
  const RolloutContext ctx{&sched, &gc, 1};
  const auto g = rollout_group(p, ds[0], cfg, ctx, 6);
  for (const auto& traj : g.trajectories) {
    for (std::size_t k = 0; k < traj.logps.size(); ++k) {
      const auto tr = traj.transition(k, ds[0].cond);
      const double sigma = sched.sigma(tr.t);
      const auto r = ratio_from_log_probs(log_prob(p, tr, sigma), traj.logps[k]);
      CHECK(std::abs(r.ratio - 1.0) < 1e-9);
    }
  }
  CHECK(g.advantages.size() == 4);
  CHECK(g.observations.size() == 4);
}

TEST_CASE("degenerate registration scores zero instead of aborting") {
  const auto ds = tiny_dataset(1);
  const auto p = PolicyParams::initialize(PolicyConfig{}, 7);
  TrainerConfig cfg;
  cfg.group_size = 3;
  const DenoiseSchedule sched;
  GeometryRewardConfig gc;
  gc.confidence_threshold = 1.0;  // noisy points never reach full confidence
  const RolloutContext ctx{&sched, &gc, 1};
  const auto g = rollout_group(p, ds[0], cfg, ctx, 8);
  CHECK(g.failed == 3);
  for (double r : g.combined) CHECK(r == 0.0);
  for (double a : g.advantages) CHECK(a == 0.0);
}

TEST_CASE("all-equal rewards leave the parameters bit-identical") {
  PolicyConfig pc;
  pc.decode_gain = 0.0;  // every latent decodes to the unperturbed views
  const auto ds = tiny_dataset(2, pc);
  TrainerConfig cfg;
  cfg.group_size = 4;
  const DenoiseSchedule sched;
  const GeometryRewardConfig gc;
  const RolloutContext ctx{&sched, &gc, 1};
  TrainerState st{PolicyParams::initialize(pc, 9), {}, 0};
  const PolicyParams before = st.params;
  const auto rec = train_step(st, ds, cfg, ctx, 10);
  CHECK(st.params == before);
  CHECK(rec.grad_norm == 0.0);
  CHECK(st.step == 1);
}

TEST_CASE("M=2 handcrafted rewards: update follows the finite-difference gradient") {
  const auto ds = tiny_dataset(1);
  const PolicyConfig pc;
  const auto p = PolicyParams::initialize(pc, 11);
  TrainerConfig cfg;
  cfg.group_size = 2;
  const DenoiseSchedule sched;
  const GeometryRewardConfig gc;
  const RolloutContext ctx{&sched, &gc, 1};
  GroupRollout g = rollout_group(p, ds[0], cfg, ctx, 12);
  g.combined = {0.0, 1.0};
  g.advantages = compute_advantages(g.combined, cfg.adv_epsilon);
  CHECK(g.advantages[0] == -1.0);
  CHECK(g.advantages[1] == 1.0);

  const int k = 3;  // t = 1
  const auto sg = surrogate_gradient(p, g, ds[0].cond, k, sched, cfg);
  const auto objective = [&](const PolicyParams& q) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto tr = g.trajectories[i].transition(k, ds[0].cond);
      const double rho = policy_ratio(q, p, tr, sched.sigma(tr.t)).ratio;
      sum += clipped_objective(rho, g.advantages[i], cfg.clip_epsilon);
    }
    return sum / 2.0;
  };
  const double h = 1e-6;
  PolicyParams q = p;
  PolicyParams stepped = p;
  AdamState adam;
  adam.ascend(stepped.weights(), sg.grad, cfg);
  int checked = 0;
  for (std::size_t i = 0; i < p.size(); i += 7) {
    const double orig = q.weights()[i];
    q.weights()[i] = orig + h;
    const double up = objective(q);
    q.weights()[i] = orig - h;
    const double down = objective(q);
    q.weights()[i] = orig;
    const double fd = (up - down) / (2.0 * h);
    CHECK(std::abs(fd - sg.grad[i]) <= 1e-4 * std::max({std::abs(fd), std::abs(sg.grad[i]), 1e-3}));
    if (std::abs(fd) > 1e-6) {
      const double move = stepped.weights()[i] - p.weights()[i];
      CHECK((move > 0.0) == (fd > 0.0));
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("train_step is deterministic for a seed") {
  const auto ds = tiny_dataset(3);
  TrainerConfig cfg;
  cfg.group_size = 4;
  const DenoiseSchedule sched;
  const GeometryRewardConfig gc;
  const RolloutContext ctx{&sched, &gc, 1};
  TrainerState a{PolicyParams::initialize(PolicyConfig{}, 13), {}, 0};
  TrainerState b = a;
  const auto ra = train_step(a, ds, cfg, ctx, 14);
  const auto rb = train_step(b, ds, cfg, ctx, 14);
  CHECK(a.params == b.params);
  CHECK(a.optimizer == b.optimizer);
  CHECK(ra.reward_mean == rb.reward_mean);
  CHECK_FALSE(a.params == PolicyParams::initialize(PolicyConfig{}, 13));

  // threads do not change the numbers
  TrainerState c{PolicyParams::initialize(PolicyConfig{}, 13), {}, 0};
  const RolloutContext par{&sched, &gc, 3};
  train_step(c, ds, cfg, par, 14);
  CHECK(c.params == a.params);
}

TEST_CASE("train rejects zero steps and an empty dataset") {
  const auto ds = tiny_dataset(1);
  TrainerConfig cfg;
  cfg.steps = 0;
  const auto p = PolicyParams::initialize(PolicyConfig{}, 1);
  CHECK_THROWS_AS(train(p, ds, cfg, DenoiseSchedule{}, GeometryRewardConfig{}, 1), Error);
  cfg.steps = 1;
  CHECK_THROWS_AS(train(p, std::span<const TrainingWorld>{}, cfg, DenoiseSchedule{},
                        GeometryRewardConfig{}, 1),
                  Error);
}

TEST_CASE("train writes one log line per step and resumes to the same parameters") {
  const auto ds = tiny_dataset(2);
  TrainerConfig cfg;
  cfg.group_size = 4;
  cfg.steps = 6;
  cfg.checkpoint_interval = 3;
  const auto p0 = PolicyParams::initialize(PolicyConfig{}, 15);
  const DenoiseSchedule sched;
  const GeometryRewardConfig gc;

  const auto full_dir = temp_dir("train_full");
  TrainOptions opt;
  opt.out_dir = full_dir;
  const auto full = train(p0, ds, cfg, sched, gc, 16, opt);
  CHECK(full.log.size() == 6);
  std::ifstream log(full_dir / "run_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "reward_mean", "reward_std", "rg_mean", "rm_mean", "objective",
                            "grad_norm", "clamped_ratios", "wall_ms"}) {
      CHECK(j.contains(key));
    }
    CHECK(j.at("step").get<int>() == ++lines);
  }
  CHECK(lines == 6);
  CHECK(fs::exists(full_dir / "reward_curve.csv"));
  CHECK(fs::exists(full_dir / "checkpoints" / "step_000003"));

  const auto part_dir = temp_dir("train_resume");
  TrainOptions first;
  first.out_dir = part_dir;
  first.stop_after = 4;  // killed after step 4; last checkpoint is step 3
  train(p0, ds, cfg, sched, gc, 16, first);
  TrainOptions again;
  again.out_dir = part_dir;
  again.resume = true;
  const auto resumed = train(p0, ds, cfg, sched, gc, 16, again);
  CHECK(resumed.params == full.params);
  CHECK(resumed.log.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(resumed.log[i].reward_mean == full.log[i].reward_mean);
}

TEST_CASE("trainer state round-trips") {
  const auto dir = temp_dir("trainer_state");
  TrainerState st{PolicyParams::initialize(PolicyConfig{}, 17), {}, 7};
  std::vector<double> g(st.params.size(), 0.1);
  st.optimizer.ascend(st.params.weights(), g, TrainerConfig{});
  save_trainer_state(dir / "s", st, {{"k", 1}});
  const auto back = load_trainer_state(dir / "s");
  CHECK(back.params == st.params);
  CHECK(back.optimizer == st.optimizer);
  CHECK(back.step == 7);
}

TEST_CASE("trainer config validation and JSON round trip") {
  TrainerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  for (auto mutate : std::vector<void (*)(TrainerConfig&)>{
           [](TrainerConfig& c) { c.group_size = 1; }, [](TrainerConfig& c) { c.clip_epsilon = 1.0; },
           [](TrainerConfig& c) { c.learning_rate = 0.0; }, [](TrainerConfig& c) { c.timestep_ratio = 0.0; },
           [](TrainerConfig& c) { c.steps = 0; }}) {
    TrainerConfig bad;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), Error);
  }
  cfg.group_size = 8;
  cfg.learning_rate = 3e-4;
  const auto back = nlohmann::json(cfg).get<TrainerConfig>();
  CHECK(back.group_size == 8);
  CHECK(back.learning_rate == 3e-4);
}

TEST_CASE("ICW_THREADS overrides the thread count") {
  ::setenv("ICW_THREADS", "3", 1);
  CHECK(resolve_threads(1) == 3);
  ::unsetenv("ICW_THREADS");
  CHECK(resolve_threads(2) == 2);
}

TEST_CASE("50-step default run with seed 11 ends above where it started") {
  TrainerConfig cfg;
  cfg.steps = 50;
  const PolicyConfig pc;
  const auto ds = make_dataset(WorldConfig{}, RenderSettings{}, pc, 8, 11);
  const auto res = train(PolicyParams::initialize(pc, 11), ds, cfg, DenoiseSchedule{}, GeometryRewardConfig{}, 11);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += res.log[static_cast<std::size_t>(i)].reward_mean / 10.0;
    last += res.log[static_cast<std::size_t>(40 + i)].reward_mean / 10.0;
  }
  MESSAGE("steps 1-10 mean " << first << ", steps 41-50 mean " << last);
  CHECK(last > first);
}
