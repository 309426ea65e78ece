// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sharedworld/cloud_io.hpp"
#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"

namespace sharedworld {

using nlohmann::json;

void WorldConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (static_points < 1) fail("world.static_points must be >= 1");
  if (object_count < 0) fail("world.object_count must be >= 0");
  if (object_count > 0 && points_per_object < 1) fail("world.points_per_object must be >= 1");
  if (frames < 2) fail("world.frames must be >= 2");
  if (keyframes < 2) fail("world.keyframes must be >= 2");
  if (!(scene_half_extent > 0.0) || !(scene_height > 0.0)) fail("world scene extents must be > 0");
  if (object_radius < 0.0 || object_travel < 0.0 || object_max_rotation < 0.0) {
    fail("world object motion parameters must be >= 0");
  }
  if (views < 1) fail("world.views must be >= 1");
  if (!(camera_distance > 0.0)) fail("world.camera_distance must be > 0");
  if (!std::isfinite(camera_height) || !std::isfinite(camera_spread_deg)) {
    fail("world camera parameters must be finite");
  }
}

void to_json(json& j, const WorldConfig& c) {
  j = json{{"static_points", c.static_points},
           {"object_count", c.object_count},
           {"points_per_object", c.points_per_object},
           {"frames", c.frames},
           {"keyframes", c.keyframes},
           {"scene_half_extent", c.scene_half_extent},
           {"scene_height", c.scene_height},
           {"object_radius", c.object_radius},
           {"object_travel", c.object_travel},
           {"object_max_rotation", c.object_max_rotation},
           {"views", c.views},
           {"camera_distance", c.camera_distance},
           {"camera_height", c.camera_height},
           {"camera_spread_deg", c.camera_spread_deg}};
}

void from_json(const json& j, WorldConfig& c) {
  config::require_object(j, "world");
  config::check_keys(j, "world",
                     {"static_points", "object_count", "points_per_object", "frames", "keyframes",
                      "scene_half_extent", "scene_height", "object_radius", "object_travel",
                      "object_max_rotation", "views", "camera_distance", "camera_height",
                      "camera_spread_deg"});
  config::read(j, "world", "static_points", c.static_points);
  config::read(j, "world", "object_count", c.object_count);
  config::read(j, "world", "points_per_object", c.points_per_object);
  config::read(j, "world", "frames", c.frames);
  config::read(j, "world", "keyframes", c.keyframes);
  config::read(j, "world", "scene_half_extent", c.scene_half_extent);
  config::read(j, "world", "scene_height", c.scene_height);
  config::read(j, "world", "object_radius", c.object_radius);
  config::read(j, "world", "object_travel", c.object_travel);
  config::read(j, "world", "object_max_rotation", c.object_max_rotation);
  config::read(j, "world", "views", c.views);
  config::read(j, "world", "camera_distance", c.camera_distance);
  config::read(j, "world", "camera_height", c.camera_height);
  config::read(j, "world", "camera_spread_deg", c.camera_spread_deg);
}

RigidTransform DynamicObject::pose_at(double t) const {
  if (key_times.empty()) return RigidTransform::identity();
  if (t <= key_times.front()) return key_poses.front();
  if (t >= key_times.back()) return key_poses.back();
  const auto it = std::upper_bound(key_times.begin(), key_times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - key_times.begin()) - 1;
  const double alpha = (t - key_times[k]) / (key_times[k + 1] - key_times[k]);
  const RigidTransform& a = key_poses[k];
  const RigidTransform& b = key_poses[k + 1];
  const Mat3 delta = a.rotation().transposed() * b.rotation();
  const Mat3 rot = a.rotation() * Mat3::from_axis_angle(to_axis_angle(delta) * alpha);
  const Vec3 trans = a.translation() * (1.0 - alpha) + b.translation() * alpha;
  return RigidTransform(rot, trans).orthonormalized();
}

std::size_t SharedWorld::dynamic_point_count() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.base_points.size();
  return n;
}

std::vector<Point3> SharedWorld::points_at(int t_p) const {
  std::vector<Point3> out = static_points.points;
  out.reserve(out.size() + dynamic_point_count());
  for (const auto& o : objects) {
    const RigidTransform pose = o.pose_at(static_cast<double>(t_p));
    for (const auto& p : o.base_points.points) out.push_back(pose.apply(p));
  }
  return out;
}

namespace {

Vec3 random_unit(Rng& rng) {
  while (true) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(v);
    if (n > 1e-9) return v / n;
  }
}

}  // namespace

SharedWorld generate_world(const WorldConfig& config, std::uint64_t seed) {
  config.validate();
  SharedWorld world;
  world.seed = seed;
  world.frames = config.frames;

  Rng rng(derive_seed(seed, {0x5743}));
  const double e = config.scene_half_extent;
  for (int i = 0; i < config.static_points; ++i) {
    world.static_points.push_back(
        {rng.uniform(-e, e), rng.uniform(0.0, config.scene_height), rng.uniform(-e, e)});
  }

  for (int k = 0; k < config.object_count; ++k) {
    DynamicObject obj;
    for (int i = 0; i < config.points_per_object; ++i) {
      // Uniform in a ball of radius object_radius.
      const double r = config.object_radius * std::cbrt(rng.uniform());
      obj.base_points.push_back(random_unit(rng) * r);
    }
    Vec3 pos{rng.uniform(-0.6 * e, 0.6 * e), rng.uniform(0.2, 0.8) * config.scene_height,
             rng.uniform(-0.6 * e, 0.6 * e)};
    RigidTransform pose(Mat3::from_axis_angle(random_unit(rng) * rng.uniform(0.0, 3.0)), pos);
    for (int f = 0; f < config.keyframes; ++f) {
      const double t = 1.0 + (config.frames - 1.0) * f / (config.keyframes - 1.0);
      obj.key_times.push_back(t);
      obj.key_poses.push_back(pose);
      const Vec3 step = random_unit(rng) * (config.object_travel * rng.uniform(0.5, 1.0));
      const Mat3 spin = Mat3::from_axis_angle(random_unit(rng) *
                                              (config.object_max_rotation * rng.uniform()));
      pose = RigidTransform(spin * pose.rotation(), pose.translation() + step).orthonormalized();
    }
    world.objects.push_back(std::move(obj));
  }
  return world;
}

bool CameraPath::is_static() const {
  return std::all_of(extrinsics.begin(), extrinsics.end(),
                     [&](const RigidTransform& t) { return t == extrinsics.front(); });
}

RigidTransform look_at(const Point3& position, const Point3& target) {
  const Vec3 f = (target - position) / norm(target - position);
  Vec3 r = cross(f, Vec3{0.0, 1.0, 0.0});
  r = r / norm(r);
  const Vec3 d = cross(f, r);
  const Mat3 rot{{r.x, r.y, r.z, d.x, d.y, d.z, f.x, f.y, f.z}};
  return RigidTransform(rot, -(rot * position));
}

std::vector<CameraPath> make_camera_rig(const WorldConfig& config) {
  std::vector<CameraPath> rig;
  const Point3 target{0.0, 0.5 * config.scene_height, 0.0};
  for (int k = 0; k < config.views; ++k) {
    const double yaw = (k - (config.views - 1) / 2.0) * config.camera_spread_deg *
                       std::numbers::pi / 180.0;
    const Point3 pos{config.camera_distance * std::sin(yaw), config.camera_height,
                     config.camera_distance * std::cos(yaw)};
    rig.push_back(CameraPath::fixed(look_at(pos, target), config.frames));
  }
  return rig;
}

Point3 TrackSet::temporal_average(std::size_t i) const {
  Vec3 sum{};
  for (std::size_t t = 0; t < frames; ++t) sum += at(i, t);
  return sum / static_cast<double>(frames);
}

void TrackSet::validate() const {
  if (tracks == 0) throw Error(ErrorCode::kEmptyTracks, "track set has no tracks");
  if (frames < 2) throw Error(ErrorCode::kInvalidArgument, "tracks need at least 2 frames");
  if (positions.size() != tracks * frames) {
    throw Error(ErrorCode::kInvalidArgument, "track storage does not match B x T_p");
  }
  for (const auto& p : positions) {
    if (!is_finite(p)) throw Error(ErrorCode::kInvalidArgument, "non-finite track position");
  }
}

PointCloud ViewObservation::aggregate() const {
  PointCloud out;
  std::size_t n = 0;
  for (const auto& f : frames) n += f.size();
  out.points.reserve(n);
  out.confidence.reserve(n);
  for (const auto& f : frames) out.append(f);
  return out;
}

ViewObservation render_view(const SharedWorld& world, const CameraPath& cam, double noise_sigma,
                            double dropout, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "noise_sigma must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "dropout must be in [0, 1)");
  }
  if (cam.size() != static_cast<std::size_t>(world.frames)) {
    throw Error(ErrorCode::kMismatchedFrameCount, "camera path length " +
                                                      std::to_string(cam.size()) +
                                                      " != world frames " +
                                                      std::to_string(world.frames));
  }
  const std::size_t n_static = world.static_points.size();
  const std::size_t n_dynamic = world.dynamic_point_count();
  const std::size_t n_frames = static_cast<std::size_t>(world.frames);

  ViewObservation obs;
  obs.camera = cam;
  obs.tracks = TrackSet(n_dynamic, n_frames);
  obs.frames.resize(n_frames);
  obs.frame_track_ids.resize(n_frames);

  Rng rng(derive_seed(seed, {0x52454e44}));
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::vector<Point3> pts = world.points_at(static_cast<int>(f) + 1);
    const RigidTransform& ext = cam.extrinsics[f];
    PointCloud& frame = obs.frames[f];
    auto& ids = obs.frame_track_ids[f];
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec3 noise{};
      double conf = 1.0;
      if (noise_sigma > 0.0) {
        noise = Vec3{rng.normal(), rng.normal(), rng.normal()} * noise_sigma;
        conf = std::clamp(std::exp(-norm(noise) / noise_sigma), 0.0, 1.0);
      }
      const bool dropped = dropout > 0.0 && rng.uniform() < dropout;
      const Point3 p = ext.apply(pts[i]) + noise;
      const auto track = static_cast<std::int32_t>(i) - static_cast<std::int32_t>(n_static);
      if (i >= n_static) obs.tracks.at(i - n_static, f) = p;
      if (!dropped) {
        frame.push_back(p, conf);
        ids.push_back(i >= n_static ? track : -1);
      }
    }
  }
  return obs;
}

ViewObservation perturb_view(const ViewObservation& obs, const RigidTransform& misalignment,
                             double motion_skew) {
  ViewObservation out = obs;
  const TrackSet& base = obs.tracks;
  for (std::size_t f = 0; f < out.frames.size(); ++f) {
    auto& pts = out.frames[f].points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::int32_t id = out.frame_track_ids[f][i];
      if (id >= 0 && motion_skew != 0.0) {
        const auto k = static_cast<std::size_t>(id);
        pts[i] += (base.at(k, f) - base.at(k, 0)) * motion_skew;
      }
      pts[i] = misalignment.apply(pts[i]);
    }
  }
  for (std::size_t k = 0; k < base.tracks; ++k) {
    for (std::size_t t = 0; t < base.frames; ++t) {
      if (motion_skew == 0.0) {
        out.tracks.at(k, t) = misalignment.apply(base.at(k, t));
        continue;
      }
      const Point3 skewed = base.at(k, 0) + (base.at(k, t) - base.at(k, 0)) * (1.0 + motion_skew);
      out.tracks.at(k, t) = misalignment.apply(skewed);
    }
  }
  return out;
}

json transform_to_json(const RigidTransform& t) {
  return json{{"rotation", t.rotation().m},
              {"translation", {t.translation().x, t.translation().y, t.translation().z}}};
}

RigidTransform transform_from_json(const json& j) {
  const auto r = j.at("rotation").get<std::array<double, 9>>();
  const auto tr = j.at("translation").get<std::array<double, 3>>();
  RigidTransform t(Mat3{r}, Vec3{tr[0], tr[1], tr[2]});
  if (!t.is_valid(1e-6)) throw Error(ErrorCode::kIo, "transform rotation is not orthonormal");
  return t;
}

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  auto p = stem;
  p += ext;
  return p;
}

json parse_sidecar(const std::filesystem::path& stem) {
  const auto path = with_ext(stem, ".json");
  try {
    return json::parse(io::read_file(path));
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kIo, path.string() + ": " + ex.what());
  }
}

}  // namespace

void save_observation(const std::filesystem::path& stem, const ViewObservation& obs) {
  std::ostringstream bin;
  for (const auto& f : obs.frames) write_cloud(bin, f);
  write_cloud(bin, PointCloud(obs.tracks.positions));

  json side;
  side["frames"] = obs.frames.size();
  std::vector<std::size_t> sizes;
  for (const auto& f : obs.frames) sizes.push_back(f.size());
  side["frame_sizes"] = sizes;
  side["tracks"] = {{"B", obs.tracks.tracks}, {"T_p", obs.tracks.frames}};
  json cams = json::array();
  for (const auto& e : obs.camera.extrinsics) cams.push_back(transform_to_json(e));
  side["camera"] = cams;
  side["frame_track_ids"] = obs.frame_track_ids;

  io::write_file_atomic(with_ext(stem, ".icw"), bin.str());
  io::write_file_atomic(with_ext(stem, ".json"), side.dump(1) + "\n");
}

ViewObservation load_observation(const std::filesystem::path& stem) {
  const json side = parse_sidecar(stem);
  std::ifstream in(with_ext(stem, ".icw"), std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + with_ext(stem, ".icw").string());
  try {
    ViewObservation obs;
    const auto n_frames = side.at("frames").get<std::size_t>();
    for (std::size_t f = 0; f < n_frames; ++f) obs.frames.push_back(read_cloud(in));
    const PointCloud track_pts = read_cloud(in);
    obs.tracks.tracks = side.at("tracks").at("B").get<std::size_t>();
    obs.tracks.frames = side.at("tracks").at("T_p").get<std::size_t>();
    obs.tracks.positions = track_pts.points;
    if (obs.tracks.positions.size() != obs.tracks.tracks * obs.tracks.frames) {
      throw Error(ErrorCode::kIo, "track block size does not match sidecar shape");
    }
    for (const auto& e : side.at("camera")) obs.camera.extrinsics.push_back(transform_from_json(e));
    obs.frame_track_ids = side.at("frame_track_ids").get<std::vector<std::vector<std::int32_t>>>();
    if (obs.frame_track_ids.size() != obs.frames.size()) {
      throw Error(ErrorCode::kIo, "frame_track_ids frame count mismatch");
    }
    for (std::size_t f = 0; f < obs.frames.size(); ++f) {
      if (obs.frame_track_ids[f].size() != obs.frames[f].size()) {
        throw Error(ErrorCode::kIo, "frame_track_ids size mismatch in frame " + std::to_string(f));
      }
    }
    return obs;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kIo, stem.string() + ": " + ex.what());
  }
}

void save_world(const std::filesystem::path& stem, const SharedWorld& world) {
  std::ostringstream bin;
  write_cloud(bin, world.static_points);
  json objects = json::array();
  for (const auto& o : world.objects) {
    write_cloud(bin, o.base_points);
    json poses = json::array();
    for (const auto& p : o.key_poses) poses.push_back(transform_to_json(p));
    objects.push_back({{"key_times", o.key_times}, {"key_poses", poses}});
  }
  const json side{{"seed", world.seed}, {"frames", world.frames}, {"objects", objects}};
  io::write_file_atomic(with_ext(stem, ".icw"), bin.str());
  io::write_file_atomic(with_ext(stem, ".json"), side.dump(1) + "\n");
}

SharedWorld load_world(const std::filesystem::path& stem) {
  const json side = parse_sidecar(stem);
  std::ifstream in(with_ext(stem, ".icw"), std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + with_ext(stem, ".icw").string());
  try {
    SharedWorld world;
    world.seed = side.at("seed").get<std::uint64_t>();
    world.frames = side.at("frames").get<int>();
    world.static_points = read_cloud(in);
    for (const auto& o : side.at("objects")) {
      DynamicObject obj;
      obj.base_points = read_cloud(in);
      obj.key_times = o.at("key_times").get<std::vector<double>>();
      for (const auto& p : o.at("key_poses")) obj.key_poses.push_back(transform_from_json(p));
      world.objects.push_back(std::move(obj));
    }
    return world;
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kIo, stem.string() + ": " + ex.what());
  }
}

}  // namespace sharedworld
