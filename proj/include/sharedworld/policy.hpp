// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sharedworld/geometry.hpp"
#include "sharedworld/world.hpp"

namespace sharedworld {

/// Shape of the denoising network mu(z_t, t, c): one tanh hidden layer.
struct PolicyConfig {
  int views = 2;       // N
  int view_dim = 7;    // latent width per view: 3 rotation, 3 translation, 1 skew
  int cond_dim = 16;
  int time_dim = 8;    // sinusoidal timestep features
  int hidden = 32;
  double init_scale = 1.0;
  double decode_gain = 0.3;

  int latent_dim() const { return views * view_dim; }
  int input_dim() const { return latent_dim() + time_dim + cond_dim; }
  std::size_t parameter_count() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);

struct DenoiseSchedule {
  int steps = 4;              // T
  std::vector<double> sigmas = std::vector<double>(4, 0.3);  // sigma_t for t = 1..T

  static DenoiseSchedule constant(int steps, double sigma) {
    return {steps, std::vector<double>(static_cast<std::size_t>(steps), sigma)};
  }
  double sigma(int t) const { return sigmas.at(static_cast<std::size_t>(t - 1)); }
  void validate() const;
};

void to_json(nlohmann::json& j, const DenoiseSchedule& s);
void from_json(const nlohmann::json& j, DenoiseSchedule& s);

struct Conditioning {
  std::vector<double> values;
  bool operator==(const Conditioning&) const = default;
};

/// Flat parameter vector laid out as W1 (hidden x input, row-major), b1,
/// W2 (latent x hidden, row-major), b2.
class PolicyParams {
 public:
  PolicyParams() = default;
  PolicyParams(PolicyConfig config, std::vector<double> weights);

  /// Seeded Gaussian init with fan-in scaling times config.init_scale.
  static PolicyParams initialize(const PolicyConfig& config, std::uint64_t seed);

  const PolicyConfig& config() const { return config_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  std::size_t size() const { return weights_.size(); }

  bool operator==(const PolicyParams& o) const { return weights_ == o.weights_; }

 private:
  PolicyConfig config_;
  std::vector<double> weights_;
};

/// Sinusoidal embedding of the integer timestep.
std::vector<double> timestep_embedding(int t, int dim);

/// mu_theta(z_t, t, c).
std::vector<double> predict_mean(const PolicyParams& params, std::span<const double> z_t, int t,
                                 const Conditioning& c);

/// Isotropic Gaussian log-density of x under N(mean, sigma^2 I).
double gaussian_log_density(std::span<const double> x, std::span<const double> mean, double sigma);

struct Transition {
  std::span<const double> z_t;
  std::span<const double> z_prev;  // the sampled lower-noise latent z_{t-1}
  int t = 0;
  const Conditioning* cond = nullptr;
};

double log_prob(const PolicyParams& params, const Transition& tr, double sigma);

/// Returns log pi(z_{t-1} | z_t, t, c) and adds scale * d logp / d theta into `grad`.
double log_prob_and_grad(const PolicyParams& params, const Transition& tr, double sigma,
                         std::span<double> grad, double scale = 1.0);

/// Latents z_T ... z_0 with the means and log-probs used to sample them.
struct DenoiseTrajectory {
  std::vector<std::vector<double>> states;  // states[k] = z_{T-k}
  std::vector<std::vector<double>> means;   // means[k] predicted from states[k]
  std::vector<double> logps;                // logps[k] of states[k+1]
  int steps = 0;

  /// The k-th transition, k = 0 is t = T.
  Transition transition(std::size_t k, const Conditioning& c) const {
    return {states[k], states[k + 1], steps - static_cast<int>(k), &c};
  }
  const std::vector<double>& final_latent() const { return states.back(); }
};

/// z_T ~ N(0, I); z_{t-1} ~ N(mu(z_t, t, c), sigma_t^2 I). Deterministic for a seed.
DenoiseTrajectory sample_trajectory(const PolicyParams& params, const Conditioning& c,
                                    const DenoiseSchedule& sched, std::uint64_t seed);

/// Hashes the N first-frame snapshots into a cond_dim vector. Throws
/// kWrongViewCount unless exactly `views` snapshots are given.
Conditioning couple_inputs(std::span<const PointCloud> snapshots, int views, int cond_dim);

struct ViewPerturbation {
  RigidTransform misalignment;
  double motion_skew = 0.0;
};

/// Splits z0 into per-view slices: gain * (axis-angle, translation, skew).
std::vector<ViewPerturbation> decode_perturbations(std::span<const double> z0,
                                                   const PolicyConfig& config);

/// Applies the decoded perturbations to already rendered views.
std::vector<ViewObservation> decode_views(std::span<const double> z0,
                                          std::span<const ViewObservation> rendered,
                                          const PolicyConfig& config);

struct RenderSettings {
  double noise_sigma = 0.01;
  double dropout = 0.1;
};

void to_json(nlohmann::json& j, const RenderSettings& r);
void from_json(const nlohmann::json& j, RenderSettings& r);

/// Renders each camera with render_view (seed derived per view) and applies
/// the decoded perturbations. Throws kDimensionMismatch.
std::vector<ViewObservation> decode(std::span<const double> z0, const SharedWorld& world,
                                    std::span<const CameraPath> cams, const PolicyConfig& config,
                                    const RenderSettings& render, std::uint64_t render_seed);

/// Renders unperturbed views for a world; shared by decode and the trainer.
std::vector<ViewObservation> render_views(const SharedWorld& world,
                                          std::span<const CameraPath> cams,
                                          const RenderSettings& render, std::uint64_t render_seed);

// Checkpoint: "ICWP", u32 dim count, u32 dims (input, hidden, output), then
// the f64 LE weights. The JSON sidecar carries the full config.
void write_policy(std::ostream& out, const PolicyParams& params);
PolicyParams read_policy(std::istream& in, const PolicyConfig& config);
void save_policy(const std::filesystem::path& path, const PolicyParams& params,
                 const nlohmann::json& metadata);
PolicyParams load_policy(const std::filesystem::path& path);

}  // namespace sharedworld
