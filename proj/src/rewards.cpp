// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/rewards.hpp"

#include <cmath>

#include "sharedworld/error.hpp"

namespace sharedworld {

namespace {

double directed_mean_distance(const PointCloud& from, const NearestIndex& to) {
  double sum = 0.0;
  for (const auto& p : from.points) sum += to.nearest(p).distance;
  return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer_distance(const PointCloud& p1, const PointCloud& p2) {
  if (p1.empty() || p2.empty()) throw Error(ErrorCode::kEmptyCloud, "chamfer of an empty cloud");
  const NearestIndex i1(p1);
  const NearestIndex i2(p2);
  return 0.5 * (directed_mean_distance(p1, i2) + directed_mean_distance(p2, i1));
}

GeometryScore geometry_reward(const ViewObservation& v1, const ViewObservation& v2,
                              const GeometryRewardConfig& cfg) {
  const PointCloud a = v1.aggregate().filtered(cfg.confidence_threshold);
  const PointCloud b = v2.aggregate().filtered(cfg.confidence_threshold);
  GeometryScore out;
  out.registration = register_clouds(a, b, cfg);
  out.d_g = chamfer_distance(a.transformed(out.registration.transform), b);
  out.r_g = std::exp(-out.d_g);
  return out;
}

TrackSet align_tracks(const TrackSet& tracks, const RigidTransform& c1, const RigidTransform& c2) {
  const RigidTransform align = compose(c1, inverse(c2));
  TrackSet out = tracks;
  for (auto& p : out.positions) p = align.apply(p);
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> match_tracks(const TrackSet& t1,
                                                              const TrackSet& t2) {
  t1.validate();
  t2.validate();
  if (t1.frames != t2.frames) {
    throw Error(ErrorCode::kMismatchedFrameCount, std::to_string(t1.frames) + " vs " +
                                                      std::to_string(t2.frames) + " frames");
  }
  std::vector<Point3> averages;
  averages.reserve(t2.tracks);
  for (std::size_t j = 0; j < t2.tracks; ++j) averages.push_back(t2.temporal_average(j));
  const NearestIndex index(averages);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(t1.tracks);
  for (std::size_t i = 0; i < t1.tracks; ++i) {
    out.emplace_back(i, index.nearest(t1.temporal_average(i)).index);
  }
  return out;
}

MotionScore motion_distance(const TrackSet& aligned1, const TrackSet& t2) {
  const auto delta = match_tracks(aligned1, t2);
  double sum = 0.0;
  for (const auto& [i, j] : delta) {
    for (std::size_t t = 0; t < aligned1.frames; ++t) {
      sum += distance(aligned1.at(i, t), t2.at(j, t));
    }
  }
  MotionScore out;
  out.d_m = sum / static_cast<double>(aligned1.tracks * aligned1.frames);
  out.r_m = std::exp(-out.d_m);
  return out;
}

MotionScore motion_reward(const ViewObservation& v1, const ViewObservation& v2) {
  if (v1.tracks.tracks == 0 || v2.tracks.tracks == 0) {
    throw Error(ErrorCode::kEmptyTracks, "motion reward needs tracks in both views");
  }
  if (v1.tracks.frames != v2.tracks.frames) {
    throw Error(ErrorCode::kMismatchedFrameCount,
                std::to_string(v1.tracks.frames) + " vs " + std::to_string(v2.tracks.frames) +
                    " track frames");
  }
  if (v1.camera.extrinsics.empty() || v2.camera.extrinsics.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "motion reward needs camera extrinsics");
  }
  // With world-to-camera extrinsics, C2 * C1^-1 carries view-1 camera
  // coordinates into view 2's frame.
  const TrackSet aligned =
      align_tracks(v1.tracks, v2.camera.extrinsics.front(), v1.camera.extrinsics.front());
  return motion_distance(aligned, v2.tracks);
}

void to_json(nlohmann::json& j, const RewardBreakdown& r) {
  j = nlohmann::json{{"r_g", r.r_g}, {"r_m", r.r_m}, {"combined", r.combined},
                     {"d_g", r.d_g}, {"d_m", r.d_m}};
}

RewardBreakdown combined_reward(const ViewObservation& v1, const ViewObservation& v2,
                                double lambda_g, double lambda_m, const GeometryRewardConfig& cfg) {
  if (!(lambda_g >= 0.0) || !(lambda_m >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "reward scales must be >= 0");
  }
  const GeometryScore g = geometry_reward(v1, v2, cfg);
  const MotionScore m = motion_reward(v1, v2);
  RewardBreakdown out;
  out.r_g = g.r_g;
  out.d_g = g.d_g;
  out.r_m = m.r_m;
  out.d_m = m.d_m;
  out.combined = lambda_g * out.r_g + lambda_m * out.r_m;
  return out;
}

RewardBreakdown combined_reward(std::span<const ViewObservation> views, double lambda_g,
                                double lambda_m, const GeometryRewardConfig& cfg) {
  if (views.size() < 2) throw Error(ErrorCode::kWrongViewCount, "need at least two views");
  if (views.size() == 2) return combined_reward(views[0], views[1], lambda_g, lambda_m, cfg);
  RewardBreakdown sum;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = a + 1; b < views.size(); ++b) {
      const RewardBreakdown r = combined_reward(views[a], views[b], lambda_g, lambda_m, cfg);
      sum.r_g += r.r_g;
      sum.r_m += r.r_m;
      sum.d_g += r.d_g;
      sum.d_m += r.d_m;
      sum.combined += r.combined;
      ++pairs;
    }
  }
  const double n = static_cast<double>(pairs);
  return {sum.r_g / n, sum.r_m / n, sum.combined / n, sum.d_g / n, sum.d_m / n};
}

}  // namespace sharedworld
