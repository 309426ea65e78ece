// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/metrics.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>

#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"

namespace sharedworld {

using nlohmann::json;

namespace {

template <typename Fn>
double pairwise_mean(std::span<const ViewObservation> views, Fn&& score) {
  if (views.size() < 2) {
    throw Error(ErrorCode::kWrongViewCount, "metrics need at least two views");
  }
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < views.size(); ++a) {
    for (std::size_t b = a + 1; b < views.size(); ++b) {
      sum += score(views[a], views[b]);
      ++pairs;
    }
  }
  return sum / pairs;
}

GeometryScore level_score(const ViewObservation& a, const ViewObservation& b, double level,
                          const GeometryRewardConfig& cfg) {
  GeometryRewardConfig at = cfg;
  at.confidence_threshold = level;
  if (a.aggregate().filtered(level).empty() || b.aggregate().filtered(level).empty()) {
    throw Error(ErrorCode::kDegenerateCloud, "confidence level empties a view");
  }
  return geometry_reward(a, b, at);
}

}  // namespace

double geometry_score(std::span<const ViewObservation> views, double level,
                      const GeometryRewardConfig& cfg) {
  return pairwise_mean(views, [&](const ViewObservation& a, const ViewObservation& b) {
    return level_score(a, b, level, cfg).r_g;
  });
}

ViewObservation subsample_view(const ViewObservation& view, int density, int frame_interval) {
  if (density < 1 || frame_interval < 1) {
    throw Error(ErrorCode::kInvalidArgument, "density and frame interval must be >= 1");
  }
  const auto keep = static_cast<std::size_t>(density);
  if (view.tracks.tracks < keep) {
    throw Error(ErrorCode::kInsufficientTracks,
                "view has " + std::to_string(view.tracks.tracks) + " tracks, density " +
                    std::to_string(density));
  }
  const auto step = static_cast<std::size_t>(frame_interval);
  std::vector<std::size_t> frames;
  for (std::size_t f = 0; f < view.tracks.frames; f += step) frames.push_back(f);

  ViewObservation out;
  out.tracks = TrackSet(keep, frames.size());
  for (std::size_t i = 0; i < keep; ++i) {
    for (std::size_t k = 0; k < frames.size(); ++k) out.tracks.at(i, k) = view.tracks.at(i, frames[k]);
  }
  for (std::size_t f : frames) {
    if (f < view.frames.size()) out.frames.push_back(view.frames[f]);
    if (f < view.frame_track_ids.size()) {
      auto ids = view.frame_track_ids[f];
      for (auto& id : ids) {
        if (id >= 0 && static_cast<std::size_t>(id) >= keep) id = -1;
      }
      out.frame_track_ids.push_back(std::move(ids));
    }
    if (f < view.camera.extrinsics.size()) out.camera.extrinsics.push_back(view.camera.extrinsics[f]);
  }
  if (out.camera.extrinsics.empty()) out.camera = view.camera;
  return out;
}

double motion_score(std::span<const ViewObservation> views, int density, int frame_interval) {
  return pairwise_mean(views, [&](const ViewObservation& a, const ViewObservation& b) {
    return motion_reward(subsample_view(a, density, frame_interval),
                         subsample_view(b, density, frame_interval))
        .r_m;
  });
}

double step_to_step_variance(std::span<const double> curve) {
  if (curve.size() < 3) throw Error(ErrorCode::kInvalidArgument, "curve needs at least three points");
  const double n = static_cast<double>(curve.size() - 1);
  double mean = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) mean += curve[k] - curve[k - 1];
  mean /= n;
  double var = 0.0;
  for (std::size_t k = 1; k < curve.size(); ++k) {
    const double d = curve[k] - curve[k - 1] - mean;
    var += d * d;
  }
  return var / n;
}

std::string geometry_key(double level) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, level);
  return "geometry_" + std::string(buf, res.ptr);
}

std::string motion_key(int density) { return "motion_" + std::to_string(density); }

void to_json(json& j, const MetricReport& r) {
  j = json::object();
  for (const auto& [level, score] : r.geometry) j[geometry_key(level)] = score;
  for (const auto& [density, score] : r.motion) j[motion_key(density)] = score;
  j["pair_count"] = r.pair_count;
  j["world_count"] = r.world_count;
  j["failures"] = r.failures;
}

void from_json(const json& j, MetricReport& r) {
  r = {};
  for (const auto& [key, value] : j.items()) {
    if (key.starts_with("geometry_")) {
      const std::string num = key.substr(9);
      double level = 0.0;
      const auto res = std::from_chars(num.data(), num.data() + num.size(), level);
      if (res.ec != std::errc{} || res.ptr != num.data() + num.size()) {
        throw Error(ErrorCode::kInvalidArgument, "bad metric key " + key);
      }
      r.geometry[level] = value.get<double>();
    } else if (key.starts_with("motion_")) {
      r.motion[std::stoi(key.substr(7))] = value.get<double>();
    }
  }
  r.pair_count = j.at("pair_count").get<int>();
  r.world_count = j.value("world_count", 0);
  r.failures = j.value("failures", 0);
}

void write_detail_csv(std::ostream& out, std::span<const PairDetail> rows) {
  out << "world_id,pair,d_g,r_g,d_m,r_m\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.world_id << ',' << r.pair << ',' << r.d_g << ',' << r.r_g << ',' << r.d_m << ','
        << r.r_m << '\n';
  }
}

void EvalConfig::validate() const {
  if (levels.empty() || densities.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "eval.levels and eval.densities must be non-empty");
  }
  for (double l : levels) {
    if (!(l >= 0.0 && l <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "eval.levels must be in [0, 1]");
  }
  for (int d : densities) {
    if (d < 1) throw Error(ErrorCode::kInvalidConfig, "eval.densities must be >= 1");
  }
  if (frame_interval < 1) throw Error(ErrorCode::kInvalidConfig, "eval.frame_interval must be >= 1");
  if (!(greedy_sigma > 0.0)) throw Error(ErrorCode::kInvalidConfig, "eval.greedy_sigma must be > 0");
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"levels", c.levels},
       {"densities", c.densities},
       {"frame_interval", c.frame_interval},
       {"greedy_sigma", c.greedy_sigma}};
}

void from_json(const json& j, EvalConfig& c) {
  config::require_object(j, "eval");
  config::check_keys(j, "eval", {"levels", "densities", "frame_interval", "greedy_sigma"});
  config::read(j, "eval", "levels", c.levels);
  config::read(j, "eval", "densities", c.densities);
  config::read(j, "eval", "frame_interval", c.frame_interval);
  config::read(j, "eval", "greedy_sigma", c.greedy_sigma);
  c.validate();
}

EvalResult evaluate_run(const PolicyParams& params, std::span<const TrainingWorld> worlds,
                        int schedule_steps, const GeometryRewardConfig& geometry,
                        const EvalConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (worlds.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluation set is empty");
  const DenoiseSchedule greedy = DenoiseSchedule::constant(schedule_steps, cfg.greedy_sigma);
  greedy.validate();

  struct WorldOutcome {
    std::vector<double> geometry, motion;
    std::vector<PairDetail> details;
    int pairs = 0;
    int failures = 0;
  };
  std::vector<WorldOutcome> outcomes(worlds.size());

  parallel_for(worlds.size(), cfg.threads, [&](std::size_t w) {
    const TrainingWorld& tw = worlds[w];
    WorldOutcome& o = outcomes[w];
    o.geometry.assign(cfg.levels.size(), 0.0);
    o.motion.assign(cfg.densities.size(), 0.0);
    std::vector<ViewObservation> views;
    try {
      const auto traj = sample_trajectory(params, tw.cond, greedy, derive_seed(seed, {tw.id}));
      views = decode_views(traj.final_latent(), tw.rendered, params.config());
    } catch (const Error&) {
      o.failures += static_cast<int>(cfg.levels.size() + cfg.densities.size());
      return;
    }
    const std::size_t n = views.size();
    o.pairs = static_cast<int>(n * (n - 1) / 2);
    for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
      try {
        o.geometry[l] = geometry_score(views, cfg.levels[l], geometry);
      } catch (const Error&) {
        ++o.failures;
      }
    }
    for (std::size_t d = 0; d < cfg.densities.size(); ++d) {
      try {
        o.motion[d] = motion_score(views, cfg.densities[d], cfg.frame_interval);
      } catch (const Error&) {
        ++o.failures;
      }
    }
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        PairDetail row;
        row.world_id = tw.id;
        row.pair = std::to_string(a) + "-" + std::to_string(b);
        try {
          const auto g = level_score(views[a], views[b], cfg.levels.front(), geometry);
          row.d_g = g.d_g;
          row.r_g = g.r_g;
        } catch (const Error&) {
          row.d_g = std::numeric_limits<double>::infinity();
        }
        try {
          const auto m = motion_reward(subsample_view(views[a], cfg.densities.front(), cfg.frame_interval),
                                       subsample_view(views[b], cfg.densities.front(), cfg.frame_interval));
          row.d_m = m.d_m;
          row.r_m = m.r_m;
        } catch (const Error&) {
          row.d_m = std::numeric_limits<double>::infinity();
        }
        o.details.push_back(row);
      }
    }
  });

  EvalResult result;
  MetricReport& rep = result.report;
  const double inv = 1.0 / static_cast<double>(worlds.size());
  for (double l : cfg.levels) rep.geometry[l] = 0.0;
  for (int d : cfg.densities) rep.motion[d] = 0.0;
  for (const auto& o : outcomes) {
    for (std::size_t l = 0; l < cfg.levels.size(); ++l) rep.geometry[cfg.levels[l]] += o.geometry[l] * inv;
    for (std::size_t d = 0; d < cfg.densities.size(); ++d) rep.motion[cfg.densities[d]] += o.motion[d] * inv;
    rep.pair_count += o.pairs;
    rep.failures += o.failures;
    result.details.insert(result.details.end(), o.details.begin(), o.details.end());
  }
  rep.world_count = static_cast<int>(worlds.size());
  return result;
}

}  // namespace sharedworld
