// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any fails. Pass criterion numbers as arguments to run a subset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include "commands.hpp"
#include "sharedworld/cloud_io.hpp"
#include "sharedworld/grpo.hpp"
#include "sharedworld/metrics.hpp"
#include "sharedworld/random.hpp"
#include "sharedworld/run_config.hpp"

using namespace sharedworld;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// ---- 1: equation oracles ----

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

double brute_chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  auto directed = [](const std::vector<Point3>& x, const std::vector<Point3>& y) {
    double sum = 0.0;
    for (const auto& p : x) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y) {
        const double dx = p.x - q.x, dy = p.y - q.y, dz = p.z - q.z;
        best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
      }
      sum += best;
    }
    return sum / static_cast<double>(x.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

Eigen::Matrix4d homogeneous(const RigidTransform& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m(i, j) = t.rotation()(i, j);
  }
  m(0, 3) = t.translation().x;
  m(1, 3) = t.translation().y;
  m(2, 3) = t.translation().z;
  return m;
}

Verdict criterion_oracles() {
  Rng rng(1001);
  double chamfer = 0.0, adv = 0.0, clip = 0.0, align = 0.0;
  int match_mismatch = 0;
  const int cases = 100;
  for (int c = 0; c < cases; ++c) {
    std::vector<Point3> a, b;
    const auto na = 1 + rng.below(300), nb = 1 + rng.below(300);
    for (std::uint64_t i = 0; i < na; ++i) a.push_back({rng.normal(), rng.normal(), rng.normal()});
    for (std::uint64_t i = 0; i < nb; ++i) b.push_back({rng.normal(), rng.normal(), rng.normal()});
    chamfer = std::max(chamfer, rel_err(chamfer_distance(PointCloud(a), PointCloud(b)), brute_chamfer(a, b)));

    std::vector<double> r;
    const auto m = 2 + rng.below(31);
    for (std::uint64_t i = 0; i < m; ++i) r.push_back(rng.uniform());
    double mean = 0.0;
    for (double x : r) mean += x;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double x : r) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / static_cast<double>(m));
    const auto got = compute_advantages(r, 1e-8);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double want = (r[i] - mean) / sd;
      adv = std::max(adv, std::abs(got[i] - want) / std::max(1.0, std::abs(want)));
    }

    const double rho = std::exp(rng.normal() * 0.5), a_hat = rng.normal(), eps = rng.uniform(0.05, 0.5);
    const double want_clip = std::min(rho * a_hat, std::clamp(rho, 1.0 - eps, 1.0 + eps) * a_hat);
    clip = std::max(clip, rel_err(clipped_objective(rho, a_hat, eps), want_clip));

    TrackSet ts(1 + rng.below(20), 2 + rng.below(8));
    for (auto& p : ts.positions) p = {rng.normal(), rng.normal(), rng.normal()};
    const auto c1 = RigidTransform::from_axis_angle({rng.normal(), rng.normal(), rng.normal()},
                                                    {rng.normal(), rng.normal(), rng.normal()});
    const auto c2 = RigidTransform::from_axis_angle({rng.normal(), rng.normal(), rng.normal()},
                                                    {rng.normal(), rng.normal(), rng.normal()});
    const Eigen::Matrix4d h = homogeneous(c1) * homogeneous(c2).inverse();
    const TrackSet aligned = align_tracks(ts, c1, c2);
    for (std::size_t i = 0; i < ts.positions.size(); ++i) {
      const Point3& p = ts.positions[i];
      const Eigen::Vector4d want = h * Eigen::Vector4d(p.x, p.y, p.z, 1.0);
      const Point3& g = aligned.positions[i];
      const double err = std::sqrt((g.x - want(0)) * (g.x - want(0)) + (g.y - want(1)) * (g.y - want(1)) +
                                   (g.z - want(2)) * (g.z - want(2)));
      align = std::max(align, err / std::max(1.0, want.head<3>().norm()));
    }

    TrackSet t1(1 + rng.below(25), 3), t2(1 + rng.below(25), 3);
    for (auto& p : t1.positions) p = {std::round(rng.normal() * 2), std::round(rng.normal() * 2), 0.0};
    for (auto& p : t2.positions) p = {std::round(rng.normal() * 2), std::round(rng.normal() * 2), 0.0};
    const auto pairs = match_tracks(t1, t2);
    for (std::size_t i = 0; i < t1.tracks; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < t2.tracks; ++j) {
        const Vec3 d = t1.temporal_average(i) - t2.temporal_average(j);
        const double dd = d.x * d.x + d.y * d.y + d.z * d.z;
        if (dd < best_d) {
          best_d = dd;
          best = j;
        }
      }
      if (pairs[i].second != best) ++match_mismatch;
    }
  }
  const auto three = compute_advantages(std::vector<double>{1, 2, 3}, 1e-8);
  const double hand_case = std::max({std::abs(three[0] + 1.2247), std::abs(three[1]), std::abs(three[2] - 1.2247)});
  const double worst = std::max({chamfer, adv, clip, align});
  Verdict v;
  v.pass = worst <= 1e-9 && match_mismatch == 0 && hand_case <= 1e-4;
  v.detail = "max rel err " + fmt("%.2e", worst) + " over 100 cases x 5 ops, match mismatches " +
             std::to_string(match_mismatch) + ", {1,2,3} err " + fmt("%.1e", hand_case);
  return v;
}

// ---- 2: gradient check ----

Verdict criterion_gradient() {
  const double h = 1e-5;
  double worst = 0.0;
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3}); };
  const GeometryRewardConfig gc;
  const DenoiseSchedule sched;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng rng(2000 + s);
    PolicyConfig pc;
    pc.init_scale = 0.5 + rng.uniform();
    const TrainingWorld tw = make_training_world(s, WorldConfig{}, RenderSettings{}, pc, 2100 + s);
    const auto old = PolicyParams::initialize(pc, 2200 + s);
    TrainerConfig tc;
    tc.group_size = 4;
    const RolloutContext ctx{&sched, &gc, 1};
    const GroupRollout g = rollout_group(old, tw, tc, ctx, 2300 + s);
    // move off-policy so ratios differ from 1 but stay inside the clip band
    PolicyParams p = old;
    for (auto& w : p.weights()) w += rng.normal() * 1e-3;
    const int k = static_cast<int>(rng.below(static_cast<std::uint64_t>(sched.steps)));
    const auto sg = surrogate_gradient(p, g, tw.cond, k, sched, tc);
    auto objective = [&](const PolicyParams& q) {
      double sum = 0.0;
      for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
        const auto tr = g.trajectories[i].transition(static_cast<std::size_t>(k), tw.cond);
        const double rho = std::exp(log_prob(q, tr, sched.sigma(tr.t)) - g.trajectories[i].logps[static_cast<std::size_t>(k)]);
        sum += clipped_objective(rho, g.advantages[i], tc.clip_epsilon);
      }
      return sum / static_cast<double>(g.trajectories.size());
    };
    PolicyParams q = p;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = q.weights()[i];
      q.weights()[i] = orig + h;
      const double up = objective(q);
      q.weights()[i] = orig - h;
      const double down = objective(q);
      q.weights()[i] = orig;
      worst = std::max(worst, rel(sg.grad[i], (up - down) / (2.0 * h)));
    }
  }
  return {worst < 1e-4, "worst relative error " + fmt("%.2e", worst) + " over 10 configs, all coordinates"};
}

// ---- 3: registration recovery ----

RigidTransform procrustes(const std::vector<Point3>& src, const std::vector<Point3>& dst) {
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd s(3, n), d(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = src[static_cast<std::size_t>(i)];
    const auto& b = dst[static_cast<std::size_t>(i)];
    s.col(i) << a.x, a.y, a.z;
    d.col(i) << b.x, b.y, b.z;
  }
  const Eigen::Vector3d cs = s.rowwise().mean(), cd = d.rowwise().mean();
  const Eigen::Matrix3d hm = (s.colwise() - cs) * (d.colwise() - cd).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(hm, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d fix = Eigen::Matrix3d::Identity();
  fix(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Eigen::Matrix3d r = svd.matrixV() * fix * svd.matrixU().transpose();
  const Eigen::Vector3d t = cd - r * cs;
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = r(i, j);
  return RigidTransform(m, {t.x(), t.y(), t.z()});
}

double angle_deg(const RigidTransform& a, const RigidTransform& b) {
  return rotation_angle(a.rotation().transposed() * b.rotation()) * 180.0 / std::numbers::pi;
}

Verdict criterion_registration() {
  const GeometryRewardConfig cfg;
  const WorldConfig wc;
  int passes = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(derive_seed(3000, {static_cast<std::uint64_t>(trial)}));
    const SharedWorld w = generate_world(wc, 3100 + static_cast<std::uint64_t>(trial));
    const PointCloud base = render_view(w, make_camera_rig(wc)[0], 0.0, 0.0, 1).aggregate();
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    axis = axis / norm(axis) * rng.uniform(0.0, 30.0 * std::numbers::pi / 180.0);
    const auto truth = RigidTransform::from_axis_angle(
        axis, {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    PointCloud src, dst;
    std::vector<Point3> cs, cd;
    for (const auto& p : base.points) {
      const bool ks = rng.uniform() >= 0.2, kd = rng.uniform() >= 0.2;
      const Point3 ps = p + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.005;
      const Point3 pd = truth(p) + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.005;
      if (ks) src.push_back(ps);
      if (kd) dst.push_back(pd);
      if (ks && kd) {
        cs.push_back(ps);
        cd.push_back(pd);
      }
    }
    const auto oracle = procrustes(cs, cd);
    const auto got = register_clouds(src, dst, cfg).transform;
    double radius = 0.0;
    for (const auto& p : base.points) radius = std::max(radius, distance(p, base.centroid()));
    const bool ok = angle_deg(got, oracle) < 1.0 && angle_deg(got, truth) < 1.0 &&
                    distance(got.translation(), truth.translation()) < 0.01 * 2.0 * radius;
    if (ok) ++passes;
  }
  return {passes >= 95, std::to_string(passes) + "/100 trials within 1 deg and 1% of diameter"};
}

// ---- 4: reward monotonicity ----

Verdict criterion_monotonic() {
  const GeometryRewardConfig cfg;
  const WorldConfig wc;
  int geo_ok = 0, mot_ok = 0;
  for (int s = 0; s < 50; ++s) {
    const SharedWorld w = generate_world(wc, 4000 + static_cast<std::uint64_t>(s));
    const auto rig = make_camera_rig(wc);
    const auto a = render_view(w, rig[0], 0.01, 0.1, 4100 + static_cast<std::uint64_t>(s));
    const auto b = render_view(w, rig[1], 0.01, 0.1, 4200 + static_cast<std::uint64_t>(s));
    double prev = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (double drift : {0.0, 0.1, 0.3, 1.0}) {
      ViewObservation p = b;
      for (auto& f : p.frames) {
        for (auto& pt : f.points) {
          if (pt.x > 0.0) pt.x += drift;
        }
      }
      const double r = geometry_reward(a, p, cfg).r_g;
      ok = ok && r < prev;
      prev = r;
    }
    geo_ok += ok;
    prev = std::numeric_limits<double>::infinity();
    ok = true;
    for (double skew : {0.0, 0.25, 0.5, 1.0}) {
      const double r = motion_reward(a, perturb_view(b, RigidTransform::identity(), skew)).r_m;
      ok = ok && r < prev;
      prev = r;
    }
    mot_ok += ok;
  }
  return {geo_ok == 50 && mot_ok == 50,
          "strictly decreasing r_g in " + std::to_string(geo_ok) + "/50 sweeps, r_m in " + std::to_string(mot_ok) +
              "/50"};
}

// ---- 5-7: training runs ----

RunConfig seeded(std::uint64_t seed) {
  RunConfig c;
  c.seeds = {seed, seed, seed, seed};
  c.validate();
  return c;
}

struct Run {
  PolicyParams initial;
  TrainResult result;
  double first10 = 0.0;
  double last10 = 0.0;
};

std::map<std::pair<int, std::uint64_t>, Run>& run_cache() {
  static std::map<std::pair<int, std::uint64_t>, Run> cache;
  return cache;
}

const Run& training_run(int group_size, std::uint64_t seed) {
  auto& cache = run_cache();
  const auto key = std::make_pair(group_size, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  RunConfig c = seeded(seed);
  c.trainer.group_size = group_size;
  Run r;
  r.initial = PolicyParams::initialize(c.policy, c.seeds.init);
  const auto data = make_train_set(c);
  TrainOptions opt;
  opt.threads = resolve_threads(1);
  r.result = train(r.initial, data, c.trainer, c.schedule, c.geometry, c.seeds.train, opt);
  const auto& log = r.result.log;
  for (std::size_t i = 0; i < 10; ++i) {
    r.first10 += log[i].reward_mean / 10.0;
    r.last10 += log[log.size() - 10 + i].reward_mean / 10.0;
  }
  std::fprintf(stderr, "  trained M=%d seed=%llu: steps 1-10 %.4f, last 10 %.4f\n", group_size,
               static_cast<unsigned long long>(seed), r.first10, r.last10);
  return cache.emplace(key, std::move(r)).first->second;
}

Verdict criterion_learnability() {
  int ok = 0;
  std::string gains;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const Run& r = training_run(16, s);
    const double gain = r.last10 - r.first10;
    ok += gain >= 0.05;
    gains += (s > 1 ? " " : "") + fmt("%+.4f", gain);
  }
  return {ok >= 4, std::to_string(ok) + "/5 seeds gained >= 0.05 (gains " + gains + ")"};
}

double pooled_variance(int group_size) {
  double sum = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    std::vector<double> curve;
    for (const auto& rec : training_run(group_size, s).result.log) curve.push_back(rec.reward_mean);
    sum += step_to_step_variance(curve);
  }
  return sum / 5.0;
}

Verdict criterion_groupsize() {
  const double v16 = pooled_variance(16);
  const double v4 = pooled_variance(4);
  return {v16 < v4, "pooled step variance M=16 " + fmt("%.3e", v16) + " vs M=4 " + fmt("%.3e", v4)};
}

Verdict criterion_dominance() {
  const Run& r = training_run(16, 1);
  const RunConfig c = seeded(1);
  const auto test = make_test_set(c);
  EvalConfig ec = c.eval;
  ec.threads = resolve_threads(1);
  const auto before = evaluate_run(r.initial, test, c.schedule.steps, c.geometry, ec, c.seeds.eval).report;
  const auto after = evaluate_run(r.result.params, test, c.schedule.steps, c.geometry, ec, c.seeds.eval).report;
  int wins = 0;
  std::string cells;
  for (const auto& [level, v] : after.geometry) {
    wins += v > before.geometry.at(level);
    cells += " " + geometry_key(level) + " " + fmt("%.5f", before.geometry.at(level)) + "->" + fmt("%.5f", v);
  }
  for (const auto& [d, v] : after.motion) {
    wins += v > before.motion.at(d);
    cells += " " + motion_key(d) + " " + fmt("%.5f", before.motion.at(d)) + "->" + fmt("%.5f", v);
  }
  return {wins == 6, std::to_string(wins) + "/6 cells improved on " + std::to_string(test.size()) +
                         " held-out worlds:" + cells};
}

// ---- 8: determinism and resumption ----

int swlab_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = swlab::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "  swlab failed (%d): %s", code, err.str().c_str());
  return code;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).string();
    if (rel.find("manifest.json") != std::string::npos) continue;
    std::string body = io::read_file(e.path());
    if (e.path().filename() == "run_log.jsonl") {
      std::istringstream in(body);
      std::string line, cleaned;
      while (std::getline(in, line)) {
        auto j = json::parse(line);
        j.erase("wall_ms");
        cleaned += j.dump() + "\n";
      }
      body = cleaned;
    }
    files[rel] = body;
  }
  return files;
}

Verdict criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / "sharedworld_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  json cfg = {{"seeds", {{"world", 8}, {"train", 8}, {"eval", 8}}}, {"trainer", {{"steps", 50}}}};
  const fs::path cfg_path = root / "config.json";
  std::ofstream(cfg_path) << cfg.dump(2);
  const std::string c = cfg_path.string();

  std::vector<std::map<std::string, std::string>> snaps;
  for (const char* name : {"a", "b"}) {
    const std::string out = (root / name).string();
    for (const std::vector<std::string>& cmd :
         {std::vector<std::string>{"--config", c, "--out", out, "simulate"},
          std::vector<std::string>{"--config", c, "--out", out, "train", "--quiet"},
          std::vector<std::string>{"--config", c, "--out", out, "eval"}}) {
      if (swlab_run(cmd) != 0) return {false, "command failed"};
    }
    snaps.push_back(snapshot(root / name));
  }
  const bool reruns = snaps[0] == snaps[1];

  const std::string part = (root / "resumed").string();
  if (swlab_run({"--config", c, "--out", part, "train", "--quiet", "--stop-after", "37"}) != 0 ||
      swlab_run({"--config", c, "--out", part, "--resume", "train", "--quiet"}) != 0) {
    return {false, "resume command failed"};
  }
  const auto resumed = snapshot(root / "resumed");
  bool resume_ok = true;
  for (const auto& [rel, body] : resumed) {
    const auto it = snaps[0].find(rel);
    resume_ok = resume_ok && it != snaps[0].end() && it->second == body;
  }
  resume_ok = resume_ok && resumed.count("policy_final.icwp") == 1;
  fs::remove_all(root);
  return {reruns && resume_ok, std::string("rerun artifacts ") + (reruns ? "byte-identical" : "DIFFER") +
                                   " (" + std::to_string(snaps[0].size()) + " files), resume after step 37 " +
                                   (resume_ok ? "matches" : "DIFFERS")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Verdict()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "equation oracles", 10.0, criterion_oracles},
      {2, "gradient check", 30.0, criterion_gradient},
      {3, "registration recovery", 60.0, criterion_registration},
      {4, "reward monotonicity", 0.0, criterion_monotonic},
      {5, "learnability", 1800.0, criterion_learnability},
      {6, "group-size stability", 2700.0, criterion_groupsize},
      {7, "metric dominance", 0.0, criterion_dominance},
      {8, "determinism and resumption", 0.0, criterion_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0.0 || secs < c.budget_s;
    const bool pass = v.pass && in_time;
    std::printf("criterion %d %s: %s  %s  [%.1fs%s]\n", c.id, pass ? "PASS" : "FAIL", c.name, v.detail.c_str(),
                secs, in_time ? "" : ", over budget");
    std::fflush(stdout);
    failed += !pass;
  }
  return failed == 0 ? 0 : 1;
}
