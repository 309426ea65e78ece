// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/grpo.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "sharedworld/cloud_io.hpp"
#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"

namespace sharedworld {

using nlohmann::json;

void TrainerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (group_size < 2) fail("trainer.group_size must be >= 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) fail("trainer.clip_epsilon must be in (0,1)");
  if (!(timestep_ratio > 0.0 && timestep_ratio <= 1.0)) {
    fail("trainer.timestep_ratio must be in (0,1]");
  }
  if (!(learning_rate > 0.0)) fail("trainer.learning_rate must be > 0");
  if (!(lambda_g >= 0.0) || !(lambda_m >= 0.0)) fail("trainer reward scales must be >= 0");
  if (steps < 1) fail("trainer.steps must be >= 1");
  if (!(adv_epsilon > 0.0)) fail("trainer.adv_epsilon must be > 0");
  if (batch_size < 1) fail("trainer.batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail("trainer betas must be in [0,1)");
  }
  if (!(adam_epsilon > 0.0) || !(weight_decay >= 0.0)) fail("trainer adam parameters invalid");
  if (!(log_ratio_clamp > 0.0)) fail("trainer.log_ratio_clamp must be > 0");
  if (checkpoint_interval < 1) fail("trainer.checkpoint_interval must be >= 1");
}

void to_json(json& j, const TrainerConfig& c) {
  j = json{{"group_size", c.group_size},
           {"clip_epsilon", c.clip_epsilon},
           {"timestep_ratio", c.timestep_ratio},
           {"learning_rate", c.learning_rate},
           {"lambda_g", c.lambda_g},
           {"lambda_m", c.lambda_m},
           {"steps", c.steps},
           {"adv_epsilon", c.adv_epsilon},
           {"batch_size", c.batch_size},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"weight_decay", c.weight_decay},
           {"log_ratio_clamp", c.log_ratio_clamp},
           {"checkpoint_interval", c.checkpoint_interval}};
}

void from_json(const json& j, TrainerConfig& c) {
  config::require_object(j, "trainer");
  config::check_keys(j, "trainer",
                     {"group_size", "clip_epsilon", "timestep_ratio", "learning_rate", "lambda_g",
                      "lambda_m", "steps", "adv_epsilon", "batch_size", "beta1", "beta2",
                      "adam_epsilon", "weight_decay", "log_ratio_clamp", "checkpoint_interval"});
  config::read(j, "trainer", "group_size", c.group_size);
  config::read(j, "trainer", "clip_epsilon", c.clip_epsilon);
  config::read(j, "trainer", "timestep_ratio", c.timestep_ratio);
  config::read(j, "trainer", "learning_rate", c.learning_rate);
  config::read(j, "trainer", "lambda_g", c.lambda_g);
  config::read(j, "trainer", "lambda_m", c.lambda_m);
  config::read(j, "trainer", "steps", c.steps);
  config::read(j, "trainer", "adv_epsilon", c.adv_epsilon);
  config::read(j, "trainer", "batch_size", c.batch_size);
  config::read(j, "trainer", "beta1", c.beta1);
  config::read(j, "trainer", "beta2", c.beta2);
  config::read(j, "trainer", "adam_epsilon", c.adam_epsilon);
  config::read(j, "trainer", "weight_decay", c.weight_decay);
  config::read(j, "trainer", "log_ratio_clamp", c.log_ratio_clamp);
  config::read(j, "trainer", "checkpoint_interval", c.checkpoint_interval);
}

TrainingWorld make_training_world(std::uint64_t id, const WorldConfig& wc,
                                  const RenderSettings& render, const PolicyConfig& pc,
                                  std::uint64_t seed) {
  if (wc.views != pc.views) {
    throw Error(ErrorCode::kInvalidConfig, "world.views and policy.views differ");
  }
  TrainingWorld tw;
  tw.id = id;
  tw.world = generate_world(wc, derive_seed(seed, {id, 0x574f}));
  tw.cameras = make_camera_rig(wc);
  tw.rendered = render_views(tw.world, tw.cameras, render, derive_seed(seed, {id, 0x524e}));
  std::vector<PointCloud> snapshots;
  for (const auto& v : tw.rendered) snapshots.push_back(v.frames.front());
  tw.cond = couple_inputs(snapshots, pc.views, pc.cond_dim);
  return tw;
}

std::vector<TrainingWorld> make_dataset(const WorldConfig& wc, const RenderSettings& render,
                                        const PolicyConfig& pc, int count, std::uint64_t seed) {
  std::vector<TrainingWorld> out;
  for (int i = 0; i < count; ++i) {
    out.push_back(make_training_world(static_cast<std::uint64_t>(i), wc, render, pc, seed));
  }
  return out;
}

std::vector<double> compute_advantages(std::span<const double> rewards, double adv_epsilon) {
  if (rewards.size() < 2) {
    throw Error(ErrorCode::kGroupTooSmall, "advantages need at least two rewards");
  }
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);
  std::vector<double> adv(rewards.size(), 0.0);
  if (std == 0.0) return adv;
  const double denom = std::max(std, adv_epsilon);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

double clipped_objective(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

bool clip_passes_gradient(double ratio, double advantage, double epsilon) {
  if (advantage > 0.0) return ratio <= 1.0 + epsilon;
  if (advantage < 0.0) return ratio >= 1.0 - epsilon;
  return false;
}

PolicyRatio ratio_from_log_probs(double logp_new, double logp_old, double max_log_ratio) {
  PolicyRatio r;
  r.log_ratio = logp_new - logp_old;
  double lr = r.log_ratio;
  if (lr > max_log_ratio || lr < -max_log_ratio) {
    r.clamped = true;
    lr = std::clamp(lr, -max_log_ratio, max_log_ratio);
  }
  r.ratio = std::exp(lr);
  return r;
}

PolicyRatio policy_ratio(const PolicyParams& current, const PolicyParams& previous,
                         const Transition& tr, double sigma, double max_log_ratio) {
  return ratio_from_log_probs(log_prob(current, tr, sigma), log_prob(previous, tr, sigma),
                              max_log_ratio);
}

void AdamState::ascend(std::span<double> params, std::span<const double> grad,
                       const TrainerConfig& cfg) {
  if (m.empty()) {
    m.assign(params.size(), 0.0);
    v.assign(params.size(), 0.0);
  }
  ++t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double step = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_epsilon);
    params[i] += cfg.learning_rate * step - cfg.learning_rate * cfg.weight_decay * params[i];
  }
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

int resolve_threads(int fallback) {
  if (const char* env = std::getenv("ICW_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return std::max(1, fallback);
}

GroupRollout rollout_group(const PolicyParams& policy, const TrainingWorld& world,
                           const TrainerConfig& cfg, const RolloutContext& ctx,
                           std::uint64_t seed) {
  const auto m = static_cast<std::size_t>(cfg.group_size);
  GroupRollout g;
  g.trajectories.resize(m);
  g.observations.resize(m);
  g.rewards.resize(m);
  g.combined.resize(m);
  std::vector<char> failed(m, 0);
  parallel_for(m, ctx.threads, [&](std::size_t i) {
    g.trajectories[i] = sample_trajectory(policy, world.cond, *ctx.schedule, derive_seed(seed, {i}));
    g.observations[i] = decode_views(g.trajectories[i].final_latent(), world.rendered, policy.config());
    try {
      g.rewards[i] = combined_reward(std::span<const ViewObservation>(g.observations[i]),
                                     cfg.lambda_g, cfg.lambda_m, *ctx.geometry);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kDegenerateCloud) throw;
      g.rewards[i] = RewardBreakdown{};  // a failed generation scores the minimum
      failed[i] = 1;
    }
    g.combined[i] = g.rewards[i].combined;
  });
  g.failed = static_cast<int>(std::count(failed.begin(), failed.end(), 1));
  g.advantages = compute_advantages(g.combined, cfg.adv_epsilon);
  return g;
}

std::vector<int> subsample_timesteps(int steps, double ratio, std::uint64_t seed) {
  const int k = std::clamp(static_cast<int>(std::ceil(ratio * steps - 1e-12)), 1, steps);
  std::vector<int> idx(static_cast<std::size_t>(steps));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first k entries are a uniform sample without replacement.
  for (int i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(steps - i));
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

void to_json(json& j, const StepRecord& r) {
  j = json{{"step", r.step},
           {"reward_mean", r.reward_mean},
           {"reward_std", r.reward_std},
           {"rg_mean", r.rg_mean},
           {"rm_mean", r.rm_mean},
           {"objective", r.objective},
           {"grad_norm", r.grad_norm},
           {"clamped_ratios", r.clamped_ratios},
           {"wall_ms", r.wall_ms}};
}

void from_json(const json& j, StepRecord& r) {
  r.step = j.at("step").get<int>();
  r.reward_mean = j.at("reward_mean").get<double>();
  r.reward_std = j.at("reward_std").get<double>();
  r.rg_mean = j.at("rg_mean").get<double>();
  r.rm_mean = j.at("rm_mean").get<double>();
  r.objective = j.at("objective").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.clamped_ratios = j.at("clamped_ratios").get<int>();
  r.wall_ms = j.at("wall_ms").get<double>();
}

SurrogateGradient surrogate_gradient(const PolicyParams& params, const GroupRollout& g,
                                     const Conditioning& cond, int k, const DenoiseSchedule& sched,
                                     const TrainerConfig& cfg, int threads) {
  const std::size_t m = g.trajectories.size();
  if (m == 0 || g.advantages.size() != m) {
    throw Error(ErrorCode::kInvalidArgument, "group rollout needs one advantage per trajectory");
  }
  const auto kk = static_cast<std::size_t>(k);
  const double sigma = sched.sigma(sched.steps - k);
  const double inv_m = 1.0 / static_cast<double>(m);
  std::vector<double> logp(m);
  std::vector<std::vector<double>> per_sample(m, std::vector<double>(params.size()));
  parallel_for(m, threads, [&](std::size_t i) {
    logp[i] = log_prob_and_grad(params, g.trajectories[i].transition(kk, cond), sigma, per_sample[i]);
  });
  SurrogateGradient out;
  out.grad.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const PolicyRatio r = ratio_from_log_probs(logp[i], g.trajectories[i].logps[kk], cfg.log_ratio_clamp);
    if (r.clamped) ++out.clamped;
    const double a = g.advantages[i];
    out.objective += clipped_objective(r.ratio, a, cfg.clip_epsilon) * inv_m;
    if (a == 0.0 || r.clamped || !clip_passes_gradient(r.ratio, a, cfg.clip_epsilon)) continue;
    // d(rho A)/d theta = A rho d logp / d theta
    const double w = a * r.ratio * inv_m;
    for (std::size_t p = 0; p < out.grad.size(); ++p) out.grad[p] += w * per_sample[i][p];
  }
  return out;
}

StepRecord train_step(TrainerState& state, std::span<const TrainingWorld> dataset,
                      const TrainerConfig& cfg, const RolloutContext& ctx, std::uint64_t seed) {
  if (dataset.empty()) throw Error(ErrorCode::kInvalidArgument, "training batch is empty");
  const auto start = std::chrono::steady_clock::now();
  const DenoiseSchedule& sched = *ctx.schedule;

  // Subsample the conditionings for this step.
  Rng pick(derive_seed(seed, {0x4253}));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min(order.size(), static_cast<std::size_t>(cfg.batch_size));
  for (std::size_t i = 0; i < batch; ++i) {
    std::swap(order[i], order[i + pick.below(order.size() - i)]);
  }

  const PolicyParams old_policy = state.params;  // pi_old <- pi_theta
  const std::size_t m = static_cast<std::size_t>(cfg.group_size);

  StepRecord rec;
  rec.step = state.step + 1;
  double reward_sum = 0.0, reward_sq = 0.0, rg_sum = 0.0, rm_sum = 0.0;
  double objective_sum = 0.0, grad_norm_sum = 0.0;
  int updates = 0;

  for (std::size_t b = 0; b < batch; ++b) {
    const TrainingWorld& tw = dataset[order[b]];
    const GroupRollout g = rollout_group(old_policy, tw, cfg, ctx, derive_seed(seed, {tw.id, 0x524f}));
    for (std::size_t i = 0; i < m; ++i) {
      reward_sum += g.combined[i];
      reward_sq += g.combined[i] * g.combined[i];
      rg_sum += g.rewards[i].r_g;
      rm_sum += g.rewards[i].r_m;
    }

    const auto selected = subsample_timesteps(sched.steps, cfg.timestep_ratio,
                                              derive_seed(seed, {tw.id, 0x5453}));
    for (int k : selected) {
      const SurrogateGradient sg = surrogate_gradient(state.params, g, tw.cond, k, sched, cfg, ctx.threads);
      rec.clamped_ratios += sg.clamped;
      double norm2 = 0.0;
      for (double v : sg.grad) norm2 += v * v;
      state.optimizer.ascend(state.params.weights(), sg.grad, cfg);
      objective_sum += sg.objective;
      grad_norm_sum += std::sqrt(norm2);
      ++updates;
    }
  }

  const double n = static_cast<double>(batch * m);
  rec.reward_mean = reward_sum / n;
  rec.reward_std = std::sqrt(std::max(0.0, reward_sq / n - rec.reward_mean * rec.reward_mean));
  rec.rg_mean = rg_sum / n;
  rec.rm_mean = rm_sum / n;
  rec.objective = updates > 0 ? objective_sum / updates : 0.0;
  rec.grad_norm = updates > 0 ? grad_norm_sum / updates : 0.0;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  state.step += 1;
  return rec;
}

namespace {

constexpr char kStateMagic[4] = {'I', 'C', 'W', 'S'};

std::string step_name(int step) {
  std::ostringstream ss;
  ss << "step_" << std::setw(6) << std::setfill('0') << step;
  return ss.str();
}

std::string record_line(const StepRecord& r) { return json(r).dump() + "\n"; }

void write_reward_curve(const std::filesystem::path& path, std::span<const StepRecord> log) {
  std::ostringstream ss;
  ss << "step,reward_mean,reward_std,rg_mean,rm_mean\n";
  ss << std::setprecision(17);
  for (const auto& r : log) {
    ss << r.step << ',' << r.reward_mean << ',' << r.reward_std << ',' << r.rg_mean << ','
       << r.rm_mean << '\n';
  }
  io::write_file_atomic(path, ss.str());
}

}  // namespace

void save_trainer_state(const std::filesystem::path& path, const TrainerState& state,
                        const json& metadata) {
  json meta = metadata;
  meta["step"] = state.step;
  save_policy(path, state.params, meta);
  std::ostringstream bin;
  bin.write(kStateMagic, 4);
  io::write_u32(bin, static_cast<std::uint32_t>(state.step));
  io::write_u64(bin, static_cast<std::uint64_t>(state.optimizer.t));
  io::write_u32(bin, static_cast<std::uint32_t>(state.optimizer.m.size()));
  for (double v : state.optimizer.m) io::write_f64(bin, v);
  for (double v : state.optimizer.v) io::write_f64(bin, v);
  auto state_path = path;
  state_path += ".state";
  io::write_file_atomic(state_path, bin.str());
}

TrainerState load_trainer_state(const std::filesystem::path& path) {
  TrainerState st;
  st.params = load_policy(path);
  auto state_path = path;
  state_path += ".state";
  std::ifstream in(state_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + state_path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw Error(ErrorCode::kIo, "bad trainer state magic in " + state_path.string());
  }
  st.step = static_cast<int>(io::read_u32(in));
  st.optimizer.t = static_cast<std::int64_t>(io::read_u64(in));
  const std::uint32_t n = io::read_u32(in);
  if (n != 0 && n != st.params.size()) {
    throw Error(ErrorCode::kIo, "optimizer state size does not match policy");
  }
  st.optimizer.m.resize(n);
  st.optimizer.v.resize(n);
  for (auto& v : st.optimizer.m) v = io::read_f64(in);
  for (auto& v : st.optimizer.v) v = io::read_f64(in);
  return st;
}

TrainResult train(const PolicyParams& initial, std::span<const TrainingWorld> dataset,
                  const TrainerConfig& cfg, const DenoiseSchedule& schedule,
                  const GeometryRewardConfig& geometry, std::uint64_t seed,
                  const TrainOptions& options) {
  cfg.validate();
  schedule.validate();
  geometry.validate();
  if (dataset.empty()) throw Error(ErrorCode::kInvalidArgument, "training dataset is empty");

  TrainerState state{initial, {}, 0};
  std::vector<StepRecord> log;
  std::filesystem::path log_path;
  std::filesystem::path ckpt_dir;
  const json metadata{{"schedule", schedule}, {"trainer", cfg}, {"train_seed", seed}};

  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    ckpt_dir = *options.out_dir / "checkpoints";
    std::filesystem::create_directories(ckpt_dir);
    log_path = *options.out_dir / "run_log.jsonl";
    const auto latest = ckpt_dir / "latest.json";
    if (options.resume && std::filesystem::exists(latest)) {
      const json pointer = json::parse(io::read_file(latest));
      state = load_trainer_state(ckpt_dir / pointer.at("checkpoint").get<std::string>());
      // Keep exactly the log lines covered by the checkpoint.
      std::ifstream in(log_path);
      std::string line;
      while (static_cast<int>(log.size()) < state.step && std::getline(in, line)) {
        log.push_back(json::parse(line).get<StepRecord>());
      }
      if (static_cast<int>(log.size()) != state.step) {
        throw Error(ErrorCode::kIo, "run log shorter than checkpoint step " +
                                        std::to_string(state.step));
      }
    }
    std::string prefix;
    for (const auto& r : log) prefix += record_line(r);
    io::write_file_atomic(log_path, prefix);
  }

  std::ofstream log_out;
  if (options.out_dir) log_out.open(log_path, std::ios::app);

  const RolloutContext ctx{&schedule, &geometry, options.threads};
  while (state.step < cfg.steps) {
    if (options.stop_after > 0 && state.step >= options.stop_after) break;
    const StepRecord rec =
        train_step(state, dataset, cfg, ctx, derive_seed(seed, {static_cast<std::uint64_t>(state.step)}));
    log.push_back(rec);
    if (options.out_dir) {
      log_out << record_line(rec);
      log_out.flush();
      if (!log_out) throw Error(ErrorCode::kIo, "writing run log at step " + std::to_string(rec.step));
      if (state.step % cfg.checkpoint_interval == 0 || state.step == cfg.steps) {
        try {
          const std::string name = step_name(state.step);
          save_trainer_state(ckpt_dir / name, state, metadata);
          io::write_file_atomic(ckpt_dir / "latest.json",
                                json{{"checkpoint", name}, {"step", state.step}}.dump() + "\n");
        } catch (const Error& e) {
          throw Error(ErrorCode::kIo, "checkpoint at step " + std::to_string(state.step) + ": " +
                                          e.what());
        }
      }
    }
    if (options.on_step) options.on_step(rec);
  }
  if (options.out_dir) write_reward_curve(*options.out_dir / "reward_curve.csv", log);
  return {state.params, std::move(log)};
}

}  // namespace sharedworld
