// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "sharedworld/geometry.hpp"

namespace sharedworld {

/// Knobs for procedural world generation and the camera rig.
struct WorldConfig {
  int static_points = 160;
  int object_count = 2;
  int points_per_object = 16;
  int frames = 13;  // T_p
  int keyframes = 3;
  double scene_half_extent = 1.0;
  double scene_height = 0.6;
  double object_radius = 0.15;
  double object_travel = 0.5;        // max translation per keyframe segment
  double object_max_rotation = 0.5;  // rad per keyframe segment

  int views = 2;
  double camera_distance = 3.0;
  double camera_height = 1.0;
  double camera_spread_deg = 20.0;  // yaw between neighbouring cameras

  /// Throws kInvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

/// A rigid object following a piecewise-linear keyframed trajectory.
struct DynamicObject {
  PointCloud base_points;  // object-local coordinates
  std::vector<double> key_times;  // strictly increasing, in frame units [1, T_p]
  std::vector<RigidTransform> key_poses;

  /// Pose at continuous time t (clamped to the keyframe range). Translation is
  /// interpolated linearly, rotation along the geodesic between keyframes.
  RigidTransform pose_at(double t) const;
};

struct SharedWorld {
  PointCloud static_points;
  std::vector<DynamicObject> objects;
  std::uint64_t seed = 0;
  int frames = 0;

  std::size_t dynamic_point_count() const;
  /// World-frame points at 1-based frame t_p: static points first, then each
  /// object's posed points in order.
  std::vector<Point3> points_at(int t_p) const;
};

/// Deterministic for (config, seed). Throws kInvalidConfig on zero static points.
SharedWorld generate_world(const WorldConfig& config, std::uint64_t seed);

/// World-to-camera extrinsics, one per frame.
struct CameraPath {
  std::vector<RigidTransform> extrinsics;

  static CameraPath fixed(const RigidTransform& extrinsic, int frames) {
    return {std::vector<RigidTransform>(static_cast<std::size_t>(frames), extrinsic)};
  }
  std::size_t size() const { return extrinsics.size(); }
  bool is_static() const;

  bool operator==(const CameraPath&) const = default;
};

/// World-to-camera transform for a camera at `position` looking at `target`
/// (x right, y down, z forward; world y is up).
RigidTransform look_at(const Point3& position, const Point3& target);

/// Static cameras on a circle around the scene, spread by camera_spread_deg.
std::vector<CameraPath> make_camera_rig(const WorldConfig& config);

/// B tracks over T_p frames, stored track-major.
struct TrackSet {
  std::size_t tracks = 0;
  std::size_t frames = 0;
  std::vector<Point3> positions;

  TrackSet() = default;
  TrackSet(std::size_t b, std::size_t t) : tracks(b), frames(t), positions(b * t) {}

  Point3& at(std::size_t i, std::size_t t) { return positions[i * frames + t]; }
  const Point3& at(std::size_t i, std::size_t t) const { return positions[i * frames + t]; }
  Point3 temporal_average(std::size_t i) const;
  /// Throws kEmptyTracks / kInvalidArgument.
  void validate() const;

  bool operator==(const TrackSet&) const = default;
};

struct ViewObservation {
  std::vector<PointCloud> frames;  // camera coordinates
  /// Per frame, per point: the track index of a dynamic point, -1 for static.
  std::vector<std::vector<std::int32_t>> frame_track_ids;
  TrackSet tracks;
  CameraPath camera;

  /// Union of all frame clouds.
  PointCloud aggregate() const;

  bool operator==(const ViewObservation&) const = default;
};

/// Renders one camera's reconstruction: posed world points, isotropic noise,
/// independent dropout, confidence exp(-|noise|/sigma). Tracks reuse the
/// frame noise so every track point is present in its frame before dropout.
ViewObservation render_view(const SharedWorld& world, const CameraPath& cam, double noise_sigma,
                            double dropout, std::uint64_t seed);

/// Scales track displacements from the first frame by (1 + motion_skew), in
/// tracks and in the dynamic frame points, then applies `misalignment`.
ViewObservation perturb_view(const ViewObservation& obs, const RigidTransform& misalignment,
                             double motion_skew);

// Serialization: "<stem>.icw" holds concatenated binary cloud blocks and
// "<stem>.json" is the sidecar.
void save_observation(const std::filesystem::path& stem, const ViewObservation& obs);
ViewObservation load_observation(const std::filesystem::path& stem);
void save_world(const std::filesystem::path& stem, const SharedWorld& world);
SharedWorld load_world(const std::filesystem::path& stem);

nlohmann::json transform_to_json(const RigidTransform& t);
RigidTransform transform_from_json(const nlohmann::json& j);

}  // namespace sharedworld
