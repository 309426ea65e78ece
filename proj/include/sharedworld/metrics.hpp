// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sharedworld/grpo.hpp"
#include "sharedworld/policy.hpp"
#include "sharedworld/rewards.hpp"
#include "sharedworld/world.hpp"

namespace sharedworld {

/// Mean over all view pairs of exp(-D_g) after dropping points below `level`.
/// Throws kDegenerateCloud when filtering empties a view.
double geometry_score(std::span<const ViewObservation> views, double level,
                      const GeometryRewardConfig& cfg);

/// Keeps every frame_interval-th frame and the `density` lowest-index tracks;
/// points of dropped tracks stay in the frames as untracked (-1).
/// Throws kInsufficientTracks.
ViewObservation subsample_view(const ViewObservation& view, int density, int frame_interval);

/// Pairwise mean of the motion reward on subsampled views.
double motion_score(std::span<const ViewObservation> views, int density, int frame_interval);

/// Variance of the first differences r[k+1] - r[k] of a reward curve.
double step_to_step_variance(std::span<const double> curve);

struct MetricReport {
  std::map<double, double> geometry;  // confidence level -> score
  std::map<int, double> motion;       // track density -> score
  int pair_count = 0;  // view pairs scored, summed over worlds
  int world_count = 0;
  int failures = 0;  // cells scored 0 because a component threw

  bool operator==(const MetricReport&) const = default;
};

void to_json(nlohmann::json& j, const MetricReport& r);
void from_json(const nlohmann::json& j, MetricReport& r);

/// "geometry_0.1", "motion_10", ...
std::string geometry_key(double level);
std::string motion_key(int density);

struct PairDetail {
  std::uint64_t world_id = 0;
  std::string pair;  // "a-b"
  double d_g = 0.0;
  double r_g = 0.0;
  double d_m = 0.0;
  double r_m = 0.0;
};

void write_detail_csv(std::ostream& out, std::span<const PairDetail> rows);

struct EvalConfig {
  std::vector<double> levels{0.1, 0.5, 0.7};
  std::vector<int> densities{10, 20, 30};
  int frame_interval = 5;
  /// Sampling std of every denoising step; near zero for greedy decoding.
  double greedy_sigma = 1e-8;
  int threads = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

struct EvalResult {
  MetricReport report;
  std::vector<PairDetail> details;  // geometry at the first level, motion at the first density
};

/// Decodes one greedy rollout per world and averages each metric cell over
/// worlds. Component errors score 0 for the affected cell and are counted.
EvalResult evaluate_run(const PolicyParams& params, std::span<const TrainingWorld> worlds,
                        int schedule_steps, const GeometryRewardConfig& geometry,
                        const EvalConfig& cfg, std::uint64_t seed);

}  // namespace sharedworld
