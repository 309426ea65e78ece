// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/policy.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sharedworld/cloud_io.hpp"
#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"

namespace sharedworld {

using nlohmann::json;

std::size_t PolicyConfig::parameter_count() const {
  const auto in = static_cast<std::size_t>(input_dim());
  const auto h = static_cast<std::size_t>(hidden);
  const auto out = static_cast<std::size_t>(latent_dim());
  return h * in + h + out * h + out;
}

void PolicyConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (views < 1) fail("policy.views must be >= 1");
  if (view_dim < 7) fail("policy.view_dim must be >= 7 (rotation, translation, skew)");
  if (cond_dim < 1 || time_dim < 2 || time_dim % 2 != 0) {
    fail("policy.cond_dim must be >= 1 and policy.time_dim even and >= 2");
  }
  if (hidden < 1) fail("policy.hidden must be >= 1");
  if (!(init_scale >= 0.0) || !(decode_gain >= 0.0)) fail("policy scales must be >= 0");
  if (parameter_count() > 10000) {
    fail("policy has " + std::to_string(parameter_count()) + " parameters; limit is 10000");
  }
}

void to_json(json& j, const PolicyConfig& c) {
  j = json{{"views", c.views},           {"view_dim", c.view_dim},
           {"cond_dim", c.cond_dim},     {"time_dim", c.time_dim},
           {"hidden", c.hidden},         {"init_scale", c.init_scale},
           {"decode_gain", c.decode_gain}};
}

void from_json(const json& j, PolicyConfig& c) {
  config::require_object(j, "policy");
  config::check_keys(j, "policy",
                     {"views", "view_dim", "cond_dim", "time_dim", "hidden", "init_scale",
                      "decode_gain"});
  config::read(j, "policy", "views", c.views);
  config::read(j, "policy", "view_dim", c.view_dim);
  config::read(j, "policy", "cond_dim", c.cond_dim);
  config::read(j, "policy", "time_dim", c.time_dim);
  config::read(j, "policy", "hidden", c.hidden);
  config::read(j, "policy", "init_scale", c.init_scale);
  config::read(j, "policy", "decode_gain", c.decode_gain);
}

void DenoiseSchedule::validate() const {
  if (steps < 1) throw Error(ErrorCode::kInvalidConfig, "schedule.steps must be >= 1");
  if (sigmas.size() != static_cast<std::size_t>(steps)) {
    throw Error(ErrorCode::kInvalidConfig, "schedule.sigmas must have one entry per step");
  }
  for (double s : sigmas) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorCode::kInvalidConfig, "schedule.sigmas must be positive");
    }
  }
}

void to_json(json& j, const DenoiseSchedule& s) {
  j = json{{"steps", s.steps}, {"sigmas", s.sigmas}};
}

void from_json(const json& j, DenoiseSchedule& s) {
  config::require_object(j, "schedule");
  config::check_keys(j, "schedule", {"steps", "sigma", "sigmas"});
  config::read(j, "schedule", "steps", s.steps);
  if (j.contains("sigmas")) {
    config::read(j, "schedule", "sigmas", s.sigmas);
  } else {
    double sigma = s.sigmas.empty() ? 0.3 : s.sigmas.front();
    config::read(j, "schedule", "sigma", sigma);
    s.sigmas.assign(static_cast<std::size_t>(std::max(s.steps, 0)), sigma);
  }
}

void to_json(json& j, const RenderSettings& r) {
  j = json{{"noise_sigma", r.noise_sigma}, {"dropout", r.dropout}};
}

void from_json(const json& j, RenderSettings& r) {
  config::require_object(j, "render");
  config::check_keys(j, "render", {"noise_sigma", "dropout"});
  config::read(j, "render", "noise_sigma", r.noise_sigma);
  config::read(j, "render", "dropout", r.dropout);
  if (!(r.noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "render.noise_sigma must be >= 0");
  if (!(r.dropout >= 0.0 && r.dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "render.dropout must be in [0, 1)");
  }
}

PolicyParams::PolicyParams(PolicyConfig config, std::vector<double> weights)
    : config_(config), weights_(std::move(weights)) {
  config_.validate();
  if (weights_.size() != config_.parameter_count()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "expected " + std::to_string(config_.parameter_count()) + " weights, got " +
                    std::to_string(weights_.size()));
  }
}

PolicyParams PolicyParams::initialize(const PolicyConfig& config, std::uint64_t seed) {
  config.validate();
  const auto in = static_cast<std::size_t>(config.input_dim());
  const auto h = static_cast<std::size_t>(config.hidden);
  const auto out = static_cast<std::size_t>(config.latent_dim());
  std::vector<double> w(config.parameter_count(), 0.0);
  Rng rng(derive_seed(seed, {0x504f4c}));
  const double s1 = config.init_scale / std::sqrt(static_cast<double>(in));
  const double s2 = config.init_scale / std::sqrt(static_cast<double>(h));
  std::size_t k = 0;
  for (std::size_t i = 0; i < h * in; ++i) w[k++] = s1 * rng.normal();
  k += h;  // b1 = 0
  for (std::size_t i = 0; i < out * h; ++i) w[k++] = s2 * rng.normal();
  return PolicyParams(config, std::move(w));
}

std::vector<double> timestep_embedding(int t, int dim) {
  const int half = dim / 2;
  std::vector<double> e(static_cast<std::size_t>(dim));
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / half);
    e[static_cast<std::size_t>(k)] = std::sin(t * freq);
    e[static_cast<std::size_t>(k + half)] = std::cos(t * freq);
  }
  return e;
}

namespace {

struct Forward {
  std::vector<double> input;
  std::vector<double> hidden;
  std::vector<double> mean;
};

Forward forward(const PolicyParams& params, std::span<const double> z_t, int t,
                const Conditioning& c) {
  const PolicyConfig& cfg = params.config();
  const auto L = static_cast<std::size_t>(cfg.latent_dim());
  const auto in = static_cast<std::size_t>(cfg.input_dim());
  const auto H = static_cast<std::size_t>(cfg.hidden);
  if (z_t.size() != L) {
    throw Error(ErrorCode::kDimensionMismatch, "latent has " + std::to_string(z_t.size()) +
                                                   " entries, policy expects " +
                                                   std::to_string(L));
  }
  if (c.values.size() != static_cast<std::size_t>(cfg.cond_dim)) {
    throw Error(ErrorCode::kDimensionMismatch, "conditioning dimension mismatch");
  }
  Forward f;
  f.input.reserve(in);
  f.input.insert(f.input.end(), z_t.begin(), z_t.end());
  const auto emb = timestep_embedding(t, cfg.time_dim);
  f.input.insert(f.input.end(), emb.begin(), emb.end());
  f.input.insert(f.input.end(), c.values.begin(), c.values.end());

  const auto w = params.weights();
  const double* w1 = w.data();
  const double* b1 = w1 + H * in;
  const double* w2 = b1 + H;
  const double* b2 = w2 + L * H;
  f.hidden.resize(H);
  for (std::size_t j = 0; j < H; ++j) {
    double a = b1[j];
    const double* row = w1 + j * in;
    for (std::size_t k = 0; k < in; ++k) a += row[k] * f.input[k];
    f.hidden[j] = std::tanh(a);
  }
  f.mean.resize(L);
  for (std::size_t o = 0; o < L; ++o) {
    double m = b2[o];
    const double* row = w2 + o * H;
    for (std::size_t j = 0; j < H; ++j) m += row[j] * f.hidden[j];
    f.mean[o] = m;
  }
  return f;
}

}  // namespace

std::vector<double> predict_mean(const PolicyParams& params, std::span<const double> z_t, int t,
                                 const Conditioning& c) {
  return forward(params, z_t, t, c).mean;
}

double gaussian_log_density(std::span<const double> x, std::span<const double> mean,
                            double sigma) {
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    sq += d * d;
  }
  const double var = sigma * sigma;
  return -0.5 * sq / var -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * var);
}

double log_prob(const PolicyParams& params, const Transition& tr, double sigma) {
  const Forward f = forward(params, tr.z_t, tr.t, *tr.cond);
  if (tr.z_prev.size() != f.mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "transition latents differ in size");
  }
  return gaussian_log_density(tr.z_prev, f.mean, sigma);
}

double log_prob_and_grad(const PolicyParams& params, const Transition& tr, double sigma,
                         std::span<double> grad, double scale) {
  const Forward f = forward(params, tr.z_t, tr.t, *tr.cond);
  if (tr.z_prev.size() != f.mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "transition latents differ in size");
  }
  if (grad.size() != params.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "gradient buffer size mismatch");
  }
  const PolicyConfig& cfg = params.config();
  const auto L = static_cast<std::size_t>(cfg.latent_dim());
  const auto in = static_cast<std::size_t>(cfg.input_dim());
  const auto H = static_cast<std::size_t>(cfg.hidden);
  const double inv_var = 1.0 / (sigma * sigma);

  std::vector<double> g_mean(L);
  for (std::size_t o = 0; o < L; ++o) g_mean[o] = (tr.z_prev[o] - f.mean[o]) * inv_var;

  const auto w = params.weights();
  const double* w2 = w.data() + H * in + H;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + H * in;
  double* g_w2 = g_b1 + H;
  double* g_b2 = g_w2 + L * H;

  std::vector<double> g_pre(H, 0.0);
  for (std::size_t o = 0; o < L; ++o) {
    const double go = g_mean[o];
    g_b2[o] += scale * go;
    for (std::size_t j = 0; j < H; ++j) {
      g_w2[o * H + j] += scale * go * f.hidden[j];
      g_pre[j] += w2[o * H + j] * go;
    }
  }
  for (std::size_t j = 0; j < H; ++j) {
    const double gj = g_pre[j] * (1.0 - f.hidden[j] * f.hidden[j]);
    g_b1[j] += scale * gj;
    for (std::size_t k = 0; k < in; ++k) g_w1[j * in + k] += scale * gj * f.input[k];
  }
  return gaussian_log_density(tr.z_prev, f.mean, sigma);
}

DenoiseTrajectory sample_trajectory(const PolicyParams& params, const Conditioning& c,
                                    const DenoiseSchedule& sched, std::uint64_t seed) {
  sched.validate();
  const auto L = static_cast<std::size_t>(params.config().latent_dim());
  Rng rng(derive_seed(seed, {0x5341}));
  DenoiseTrajectory traj;
  traj.steps = sched.steps;
  std::vector<double> z(L);
  for (auto& v : z) v = rng.normal();
  traj.states.push_back(z);
  for (int t = sched.steps; t >= 1; --t) {
    const double sigma = sched.sigma(t);
    std::vector<double> mean = predict_mean(params, traj.states.back(), t, c);
    std::vector<double> next(L);
    for (std::size_t i = 0; i < L; ++i) next[i] = mean[i] + sigma * rng.normal();
    traj.logps.push_back(gaussian_log_density(next, mean, sigma));
    traj.means.push_back(std::move(mean));
    traj.states.push_back(std::move(next));
  }
  return traj;
}

Conditioning couple_inputs(std::span<const PointCloud> snapshots, int views, int cond_dim) {
  if (snapshots.size() != static_cast<std::size_t>(views)) {
    throw Error(ErrorCode::kWrongViewCount, "expected " + std::to_string(views) +
                                                " snapshots, got " +
                                                std::to_string(snapshots.size()));
  }
  // FNV-1a over the raw coordinate bits of every snapshot, in view order.
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& s : snapshots) {
    mix(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      mix(std::bit_cast<std::uint64_t>(s.points[i].x));
      mix(std::bit_cast<std::uint64_t>(s.points[i].y));
      mix(std::bit_cast<std::uint64_t>(s.points[i].z));
      mix(std::bit_cast<std::uint64_t>(s.confidence[i]));
    }
  }
  Rng rng(h);
  Conditioning c;
  c.values.resize(static_cast<std::size_t>(cond_dim));
  for (auto& v : c.values) v = rng.normal();
  return c;
}

std::vector<ViewPerturbation> decode_perturbations(std::span<const double> z0,
                                                   const PolicyConfig& config) {
  if (z0.size() != static_cast<std::size_t>(config.latent_dim())) {
    throw Error(ErrorCode::kDimensionMismatch, "final latent has " + std::to_string(z0.size()) +
                                                   " entries, expected " +
                                                   std::to_string(config.latent_dim()));
  }
  const double g = config.decode_gain;
  std::vector<ViewPerturbation> out;
  for (int v = 0; v < config.views; ++v) {
    const auto s = z0.subspan(static_cast<std::size_t>(v * config.view_dim));
    ViewPerturbation p;
    p.misalignment = RigidTransform::from_axis_angle(Vec3{s[0], s[1], s[2]} * g,
                                                     Vec3{s[3], s[4], s[5]} * g);
    p.motion_skew = g * s[6];
    out.push_back(p);
  }
  return out;
}

std::vector<ViewObservation> decode_views(std::span<const double> z0,
                                          std::span<const ViewObservation> rendered,
                                          const PolicyConfig& config) {
  if (rendered.size() != static_cast<std::size_t>(config.views)) {
    throw Error(ErrorCode::kDimensionMismatch, "decode needs one rendered view per slice");
  }
  const auto perturb = decode_perturbations(z0, config);
  std::vector<ViewObservation> out;
  out.reserve(rendered.size());
  for (std::size_t v = 0; v < rendered.size(); ++v) {
    out.push_back(perturb_view(rendered[v], perturb[v].misalignment, perturb[v].motion_skew));
  }
  return out;
}

std::vector<ViewObservation> render_views(const SharedWorld& world,
                                          std::span<const CameraPath> cams,
                                          const RenderSettings& render,
                                          std::uint64_t render_seed) {
  std::vector<ViewObservation> out;
  for (std::size_t v = 0; v < cams.size(); ++v) {
    out.push_back(render_view(world, cams[v], render.noise_sigma, render.dropout,
                              derive_seed(render_seed, {v})));
  }
  return out;
}

std::vector<ViewObservation> decode(std::span<const double> z0, const SharedWorld& world,
                                    std::span<const CameraPath> cams, const PolicyConfig& config,
                                    const RenderSettings& render, std::uint64_t render_seed) {
  if (cams.size() != static_cast<std::size_t>(config.views)) {
    throw Error(ErrorCode::kDimensionMismatch, "decode needs one camera per view slice");
  }
  const auto rendered = render_views(world, cams, render, render_seed);
  return decode_views(z0, rendered, config);
}

namespace {
constexpr char kPolicyMagic[4] = {'I', 'C', 'W', 'P'};
}

void write_policy(std::ostream& out, const PolicyParams& params) {
  const PolicyConfig& c = params.config();
  out.write(kPolicyMagic, 4);
  io::write_u32(out, 3);
  io::write_u32(out, static_cast<std::uint32_t>(c.input_dim()));
  io::write_u32(out, static_cast<std::uint32_t>(c.hidden));
  io::write_u32(out, static_cast<std::uint32_t>(c.latent_dim()));
  for (double w : params.weights()) io::write_f64(out, w);
}

PolicyParams read_policy(std::istream& in, const PolicyConfig& config) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kPolicyMagic, 4) != 0) {
    throw Error(ErrorCode::kIo, "bad policy checkpoint magic");
  }
  const std::uint32_t n_dims = io::read_u32(in);
  if (n_dims != 3) throw Error(ErrorCode::kIo, "unsupported policy layer count");
  const std::uint32_t in_dim = io::read_u32(in);
  const std::uint32_t hidden = io::read_u32(in);
  const std::uint32_t out_dim = io::read_u32(in);
  if (in_dim != static_cast<std::uint32_t>(config.input_dim()) ||
      hidden != static_cast<std::uint32_t>(config.hidden) ||
      out_dim != static_cast<std::uint32_t>(config.latent_dim())) {
    throw Error(ErrorCode::kDimensionMismatch, "checkpoint dims do not match policy config");
  }
  std::vector<double> w(config.parameter_count());
  for (auto& v : w) v = io::read_f64(in);
  return PolicyParams(config, std::move(w));
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params,
                 const json& metadata) {
  std::ostringstream bin;
  write_policy(bin, params);
  json side = metadata;
  side["policy"] = params.config();
  side["parameter_count"] = params.size();
  auto side_path = path;
  side_path += ".json";
  io::write_file_atomic(path, bin.str());
  io::write_file_atomic(side_path, side.dump(1) + "\n");
}

PolicyParams load_policy(const std::filesystem::path& path) {
  auto side_path = path;
  side_path += ".json";
  PolicyConfig config;
  try {
    config = json::parse(io::read_file(side_path)).at("policy").get<PolicyConfig>();
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kIo, side_path.string() + ": " + ex.what());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_policy(in, config);
}

}  // namespace sharedworld
