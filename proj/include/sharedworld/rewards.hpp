// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "sharedworld/geometry.hpp"
#include "sharedworld/world.hpp"

namespace sharedworld {

struct GeometryRewardConfig {
  double confidence_threshold = 0.1;
  int icp_max_iters = 60;
  double icp_tolerance = 1e-10;  // on the change of the trimmed mean residual
  double trim_fraction = 0.1;
  int multi_start = 4;
  bool principal_axis_starts = true;  // four extra starts from PCA frames
  int coarse_iters = 8;  // iterations every start gets before the best is refined
  std::size_t max_source_points = 512;
  std::uint64_t seed = 0x1C9;

  void validate() const;
};

void to_json(nlohmann::json& j, const GeometryRewardConfig& c);
void from_json(const nlohmann::json& j, GeometryRewardConfig& c);

struct RegistrationResult {
  RigidTransform transform;  // maps source into target coordinates
  double residual = 0.0;     // trimmed mean nearest-neighbour distance
  int iterations = 0;
  bool converged = false;
};

/// Least-squares rigid fit of `source` onto `target` (paired by index), via
/// the quaternion eigenvector of the 4x4 cross-covariance form.
RigidTransform fit_rigid(std::span<const Point3> source, std::span<const Point3> target);

/// Trimmed point-to-point ICP with a seeded multi-start over initial
/// rotations. Throws kDegenerateCloud when either cloud has fewer than three
/// non-collinear points after confidence filtering.
RegistrationResult register_clouds(const PointCloud& source, const PointCloud& target,
                                   const GeometryRewardConfig& cfg);

/// Symmetric Chamfer distance: mean of the two directed mean nearest distances.
double chamfer_distance(const PointCloud& p1, const PointCloud& p2);

struct GeometryScore {
  double r_g = 0.0;
  double d_g = 0.0;
  RegistrationResult registration;
};

/// Confidence filter, per-video union, register v1 onto v2, Chamfer, exp(-D).
GeometryScore geometry_reward(const ViewObservation& v1, const ViewObservation& v2,
                              const GeometryRewardConfig& cfg);

/// Maps every track point by c1 * c2^-1.
TrackSet align_tracks(const TrackSet& tracks, const RigidTransform& c1, const RigidTransform& c2);

/// For each track i of t1, the j minimising the distance between temporal
/// averages (lowest j on ties). Many-to-one is allowed.
std::vector<std::pair<std::size_t, std::size_t>> match_tracks(const TrackSet& t1,
                                                              const TrackSet& t2);

struct MotionScore {
  double r_m = 0.0;
  double d_m = 0.0;
};

/// Mean Euclidean distance between already-aligned tracks and their matches.
MotionScore motion_distance(const TrackSet& aligned1, const TrackSet& t2);

/// Carries v1's tracks into v2's camera frame using the first-frame
/// extrinsics, matches by temporal average, and scores exp(-D_m).
MotionScore motion_reward(const ViewObservation& v1, const ViewObservation& v2);

struct RewardBreakdown {
  double r_g = 0.0;
  double r_m = 0.0;
  double combined = 0.0;
  double d_g = 0.0;
  double d_m = 0.0;
};

void to_json(nlohmann::json& j, const RewardBreakdown& r);

RewardBreakdown combined_reward(const ViewObservation& v1, const ViewObservation& v2,
                                double lambda_g, double lambda_m, const GeometryRewardConfig& cfg);

/// Pairwise mean over all unordered view pairs; reduces to combined_reward for two views.
RewardBreakdown combined_reward(std::span<const ViewObservation> views, double lambda_g,
                                double lambda_m, const GeometryRewardConfig& cfg);

}  // namespace sharedworld
