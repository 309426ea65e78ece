// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "sharedworld/policy.hpp"
#include "sharedworld/rewards.hpp"
#include "sharedworld/world.hpp"

namespace sharedworld {

struct TrainerConfig {
  int group_size = 16;          // M
  double clip_epsilon = 0.2;
  double timestep_ratio = 0.5;  // tau
  double learning_rate = 1e-5;
  double lambda_g = 0.5;
  double lambda_m = 0.5;
  int steps = 200;
  double adv_epsilon = 1e-8;
  int batch_size = 1;  // conditionings drawn per step
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;
  double log_ratio_clamp = 30.0;
  int checkpoint_interval = 25;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainerConfig& c);
void from_json(const nlohmann::json& j, TrainerConfig& c);

/// One conditioning of the training set: a world, its camera rig, the
/// unperturbed renders that decode perturbs, and the coupled conditioning.
struct TrainingWorld {
  std::uint64_t id = 0;
  SharedWorld world;
  std::vector<CameraPath> cameras;
  std::vector<ViewObservation> rendered;
  Conditioning cond;
};

TrainingWorld make_training_world(std::uint64_t id, const WorldConfig& wc,
                                  const RenderSettings& render, const PolicyConfig& pc,
                                  std::uint64_t seed);
std::vector<TrainingWorld> make_dataset(const WorldConfig& wc, const RenderSettings& render,
                                        const PolicyConfig& pc, int count, std::uint64_t seed);

/// Group-normalized advantages with the population std floored at adv_epsilon.
/// Throws kGroupTooSmall for fewer than two rewards.
std::vector<double> compute_advantages(std::span<const double> rewards, double adv_epsilon);

/// min(rho * A, clip(rho, 1 - eps, 1 + eps) * A).
double clipped_objective(double ratio, double advantage, double epsilon);

/// True where the clipped objective's gradient flows through rho, i.e. the
/// unclipped term attains the minimum.
bool clip_passes_gradient(double ratio, double advantage, double epsilon);

struct PolicyRatio {
  double ratio = 1.0;
  double log_ratio = 0.0;  // before clamping
  bool clamped = false;
};

/// exp(logp_new - logp_old) with the log-ratio clamped to +-max_log_ratio.
PolicyRatio ratio_from_log_probs(double logp_new, double logp_old, double max_log_ratio = 30.0);

PolicyRatio policy_ratio(const PolicyParams& current, const PolicyParams& previous,
                         const Transition& tr, double sigma, double max_log_ratio = 30.0);

/// Decoupled-weight-decay Adam state, ascending the objective.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;

  void ascend(std::span<double> params, std::span<const double> grad, const TrainerConfig& cfg);
  bool operator==(const AdamState&) const = default;
};

struct GroupRollout {
  std::vector<DenoiseTrajectory> trajectories;
  std::vector<std::vector<ViewObservation>> observations;
  std::vector<RewardBreakdown> rewards;
  std::vector<double> combined;
  std::vector<double> advantages;
  int failed = 0;  // rewards forced to 0 by a degenerate registration
};

struct RolloutContext {
  const DenoiseSchedule* schedule = nullptr;
  const GeometryRewardConfig* geometry = nullptr;
  int threads = 1;
};

/// Samples group_size trajectories under `policy`, decodes and scores them.
GroupRollout rollout_group(const PolicyParams& policy, const TrainingWorld& world,
                           const TrainerConfig& cfg, const RolloutContext& ctx,
                           std::uint64_t seed);

struct SurrogateGradient {
  std::vector<double> grad;  // d/dtheta of the mean clipped objective
  double objective = 0.0;
  int clamped = 0;
};

/// Clipped surrogate over the group at trajectory transition k (k = 0 is
/// t = T), ratios taken against the log-probs stored at sampling time.
SurrogateGradient surrogate_gradient(const PolicyParams& params, const GroupRollout& g,
                                     const Conditioning& cond, int k, const DenoiseSchedule& sched,
                                     const TrainerConfig& cfg, int threads = 1);

struct StepRecord {
  int step = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;
  double rg_mean = 0.0;
  double rm_mean = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  int clamped_ratios = 0;
  double wall_ms = 0.0;
};

void to_json(nlohmann::json& j, const StepRecord& r);
void from_json(const nlohmann::json& j, StepRecord& r);

struct TrainerState {
  PolicyParams params;
  AdamState optimizer;
  int step = 0;  // completed steps
};

/// One outer iteration: refresh the old policy, roll out each sampled
/// conditioning, standardize, then one ascent update per subsampled timestep.
StepRecord train_step(TrainerState& state, std::span<const TrainingWorld> dataset,
                      const TrainerConfig& cfg, const RolloutContext& ctx, std::uint64_t seed);

/// Indices in [0, steps) of the ceil(tau * T) transitions to update.
std::vector<int> subsample_timesteps(int steps, double ratio, std::uint64_t seed);

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // log + checkpoints when set
  bool resume = false;
  int threads = 1;
  /// Called after every step (for progress output).
  std::function<void(const StepRecord&)> on_step;
  /// Stops after this many total steps (for interruption tests); 0 = no limit.
  int stop_after = 0;
};

struct TrainResult {
  PolicyParams params;
  std::vector<StepRecord> log;
};

/// Runs cfg.steps training steps from `initial` (or the last checkpoint in
/// out_dir when resuming). Throws kInvalidConfig for steps < 1; I/O errors
/// carry the step index.
TrainResult train(const PolicyParams& initial, std::span<const TrainingWorld> dataset,
                  const TrainerConfig& cfg, const DenoiseSchedule& schedule,
                  const GeometryRewardConfig& geometry, std::uint64_t seed,
                  const TrainOptions& options = {});

void save_trainer_state(const std::filesystem::path& path, const TrainerState& state,
                        const nlohmann::json& metadata);
TrainerState load_trainer_state(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Threads from ICW_THREADS if set, else `fallback`.
int resolve_threads(int fallback);

}  // namespace sharedworld
