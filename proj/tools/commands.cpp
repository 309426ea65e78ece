// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sharedworld/cloud_io.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/grpo.hpp"
#include "sharedworld/metrics.hpp"
#include "sharedworld/run_config.hpp"

namespace swlab {

using nlohmann::json;
using namespace sharedworld;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "sharedworld 0.1.0";

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  int threads = 1;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidArgument:
      return kBadConfig;
    default:
      return kIoFailure;
  }
}

RunConfig resolve_config(const Globals& g) {
  RunConfig c;
  if (!g.config.empty()) {
    c = load_run_config(g.config);
  }
  if (g.seed) c.seeds = {*g.seed, *g.seed, *g.seed, *g.seed};
  if (!g.out.empty()) c.output_dir = g.out;
  c.validate();
  return c;
}

/// Single-instance guard for an output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorCode::kIo, "output directory is locked: " + path_.string());
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

class Manifest {
 public:
  Manifest(const fs::path& dir, std::string command, const RunConfig& cfg)
      : path_(dir / "manifest.json") {
    doc_ = {{"command", std::move(command)},
            {"config_hash", config_hash(cfg)},
            {"config", cfg},
            {"version", kVersion},
            {"started_at", utc_now()},
            {"finished_at", nullptr},
            {"status", "running"},
            {"artifacts", json::object()}};
    write();
  }

  json& artifacts() { return doc_["artifacts"]; }

  void finish(const std::string& status) {
    doc_["finished_at"] = utc_now();
    doc_["status"] = status;
    write();
  }

 private:
  void write() { io::write_file_atomic(path_, doc_.dump(1) + "\n"); }

  fs::path path_;
  json doc_;
};

std::string rel(const fs::path& p, const fs::path& base) {
  return fs::relative(p, base).generic_string();
}

// ---- simulate ----

json write_split(const std::vector<TrainingWorld>& worlds, const fs::path& root,
                 const fs::path& dir, json& world_list) {
  fs::create_directories(dir);
  json observations = json::array();
  for (const auto& tw : worlds) {
    std::ostringstream name;
    name << "world_" << std::setw(4) << std::setfill('0') << tw.id;
    const fs::path stem = dir / name.str();
    save_world(stem, tw.world);
    world_list.push_back(rel(stem, root));
    json views = json::array();
    for (std::size_t v = 0; v < tw.rendered.size(); ++v) {
      const fs::path vstem = dir / (name.str() + "_view_" + std::to_string(v));
      save_observation(vstem, tw.rendered[v]);
      views.push_back(rel(vstem, root));
    }
    observations.push_back({{"world", rel(stem, root)}, {"views", views}});
  }
  return observations;
}

int cmd_simulate(const Globals& g, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const fs::path root = cfg.output_dir;
  DirLock lock(root);
  Manifest manifest(root, "simulate", cfg);
  json worlds = json::array();
  json observations = json::array();
  for (const auto& o : write_split(make_train_set(cfg), root, root / "worlds" / "train", worlds)) {
    observations.push_back(o);
  }
  for (const auto& o : write_split(make_test_set(cfg), root, root / "worlds" / "test", worlds)) {
    observations.push_back(o);
  }
  manifest.artifacts()["worlds"] = worlds;
  manifest.artifacts()["observations"] = observations;
  manifest.finish("complete");
  out << json{{"command", "simulate"},
              {"worlds", worlds.size()},
              {"observations", observations.size()},
              {"out", root.string()}}
             .dump()
      << "\n";
  return kOk;
}

// ---- train ----

TrainResult run_training(const RunConfig& cfg, const fs::path& dir, bool resume, int threads,
                         int stop_after, std::ostream* progress) {
  const auto dataset = make_train_set(cfg);
  const PolicyParams init = PolicyParams::initialize(cfg.policy, cfg.seeds.init);
  TrainOptions opt;
  opt.out_dir = dir;
  opt.resume = resume;
  opt.threads = threads;
  opt.stop_after = stop_after;
  if (progress) {
    opt.on_step = [progress](const StepRecord& r) {
      *progress << "step " << r.step << " reward " << std::fixed << std::setprecision(4)
                << r.reward_mean << " rg " << r.rg_mean << " rm " << r.rm_mean << "\n";
      progress->unsetf(std::ios::floatfield);
    };
  }
  return train(init, dataset, cfg.trainer, cfg.schedule, cfg.geometry, cfg.seeds.train, opt);
}

int cmd_train(const Globals& g, int stop_after, bool quiet, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(g);
  const fs::path root = cfg.output_dir;
  DirLock lock(root);
  Manifest manifest(root, "train", cfg);
  const int threads = resolve_threads(g.threads);
  TrainResult res;
  try {
    res = run_training(cfg, root, g.resume, threads, stop_after, quiet ? nullptr : &err);
  } catch (...) {
    manifest.finish("failed");
    throw;
  }
  const bool finished = static_cast<int>(res.log.size()) >= cfg.trainer.steps;
  if (finished) {
    save_policy(root / "policy_final.icwp", res.params,
                json{{"config_hash", config_hash(cfg)}, {"step", res.log.size()}});
    manifest.artifacts()["policy"] = "policy_final.icwp";
    manifest.artifacts()["reward_curve"] = "reward_curve.csv";
  }
  manifest.artifacts()["run_log"] = "run_log.jsonl";
  manifest.artifacts()["checkpoints"] = "checkpoints";
  manifest.finish(finished ? "complete" : "interrupted");
  const double last = res.log.empty() ? 0.0 : res.log.back().reward_mean;
  out << json{{"command", "train"},
              {"steps", res.log.size()},
              {"final_reward_mean", last},
              {"out", root.string()}}
             .dump()
      << "\n";
  return kOk;
}

// ---- eval ----

int cmd_eval(const Globals& g, const std::string& checkpoint, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  const fs::path root = cfg.output_dir;
  const fs::path ckpt = checkpoint.empty() ? root / "policy_final.icwp" : fs::path(checkpoint);
  if (!fs::exists(ckpt)) throw Error(ErrorCode::kInvalidConfig, "checkpoint not found: " + ckpt.string());
  if (cfg.test_worlds < 1) throw Error(ErrorCode::kInvalidConfig, "dataset.test_worlds must be >= 1 for eval");
  const PolicyParams params = load_policy(ckpt);
  if (params.config().views != cfg.world.views) {
    throw Error(ErrorCode::kInvalidConfig, "checkpoint view count does not match world.views");
  }
  const fs::path dir = root / "eval";
  DirLock lock(dir);
  Manifest manifest(dir, "eval", cfg);
  EvalConfig ec = cfg.eval;
  ec.threads = resolve_threads(g.threads);
  const auto test = make_test_set(cfg);
  const EvalResult res = evaluate_run(params, test, cfg.schedule.steps, cfg.geometry, ec, cfg.seeds.eval);
  io::write_file_atomic(dir / "report.json", json(res.report).dump(1) + "\n");
  std::ostringstream csv;
  write_detail_csv(csv, res.details);
  io::write_file_atomic(dir / "details.csv", csv.str());
  manifest.artifacts()["report"] = "report.json";
  manifest.artifacts()["details"] = "details.csv";
  manifest.artifacts()["checkpoint"] = ckpt.string();
  manifest.finish("complete");
  out << json(res.report).dump() << "\n";
  return kOk;
}

// ---- sweep-groupsize ----

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

struct SweepCell {
  int group_size = 0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> log;
  bool failed = false;
  std::string error;
};

std::string svg_plot(const std::vector<SweepCell>& cells, const std::vector<int>& groups, int steps) {
  const double w = 640, h = 400, left = 60, right = 20, top = 30, bottom = 50;
  double lo = 1.0, hi = 0.0;
  std::map<int, std::vector<std::vector<double>>> curves;
  for (const auto& c : cells) {
    if (c.failed) continue;
    std::vector<double> r;
    for (const auto& s : c.log) r.push_back(s.reward_mean);
    curves[c.group_size].push_back(r);
  }
  struct Band {
    std::vector<double> mean, low, high;
  };
  std::map<int, Band> bands;
  for (const auto& [m, runs] : curves) {
    Band b;
    for (int k = 0; k < steps; ++k) {
      double sum = 0.0, sq = 0.0;
      int n = 0;
      for (const auto& r : runs) {
        if (k < static_cast<int>(r.size())) {
          sum += r[k];
          sq += r[k] * r[k];
          ++n;
        }
      }
      const double mean = n ? sum / n : 0.0;
      const double sd = n ? std::sqrt(std::max(0.0, sq / n - mean * mean)) : 0.0;
      b.mean.push_back(mean);
      b.low.push_back(mean - sd);
      b.high.push_back(mean + sd);
      lo = std::min(lo, mean - sd);
      hi = std::max(hi, mean + sd);
    }
    bands[m] = b;
  }
  if (!(hi > lo)) {
    lo = 0.0;
    hi = 1.0;
  }
  const auto x = [&](int k) { return left + (w - left - right) * k / std::max(1, steps - 1); };
  const auto y = [&](double v) { return top + (h - top - bottom) * (hi - v) / (hi - lo); };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
    << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << h - bottom << "\" x2=\"" << w - right << "\" y2=\""
    << h - bottom << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << h - bottom
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << w / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\" font-size=\"13\">step</text>\n"
    << "<text x=\"14\" y=\"" << h / 2 << "\" font-size=\"13\" transform=\"rotate(-90 14 " << h / 2
    << ")\" text-anchor=\"middle\">mean reward</text>\n"
    << "<text x=\"" << left - 6 << "\" y=\"" << y(hi) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
    << std::setprecision(3) << hi << "</text>\n"
    << "<text x=\"" << left - 6 << "\" y=\"" << y(lo) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
    << lo << "</text>\n"
    << std::setprecision(2);
  std::size_t ci = 0;
  for (int m : groups) {
    if (!bands.count(m)) continue;
    const Band& b = bands[m];
    const char* color = colors[ci++ % 6];
    s << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (int k = 0; k < steps; ++k) s << x(k) << ',' << y(b.high[k]) << ' ';
    for (int k = steps - 1; k >= 0; --k) s << x(k) << ',' << y(b.low[k]) << ' ';
    s << "\"/>\n<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (int k = 0; k < steps; ++k) s << x(k) << ',' << y(b.mean[k]) << ' ';
    s << "\"/>\n<text x=\"" << w - right - 60 << "\" y=\"" << top + 16 * ci << "\" fill=\"" << color
      << "\" font-size=\"12\">M = " << m << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

int cmd_sweep(const Globals& g, const std::string& groups_arg, const std::string& seeds_arg,
              std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(g);
  std::vector<int> groups;
  std::vector<std::uint64_t> seeds;
  try {
    for (const auto& s : split_csv(groups_arg)) groups.push_back(std::stoi(s));
    for (const auto& s : split_csv(seeds_arg)) seeds.push_back(std::stoull(s));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidConfig, "--groups and --seeds take comma-separated integers");
  }
  if (groups.size() < 2) throw Error(ErrorCode::kInvalidConfig, "sweep needs at least two group sizes");
  if (seeds.size() < 3) throw Error(ErrorCode::kInvalidConfig, "sweep needs at least three seeds");
  for (int m : groups) {
    RunConfig probe = cfg;
    probe.trainer.group_size = m;
    probe.validate();
  }

  const fs::path root = cfg.output_dir / "sweep";
  DirLock lock(root);
  Manifest manifest(root, "sweep-groupsize", cfg);
  const int threads = resolve_threads(g.threads);

  std::vector<SweepCell> cells;
  json logs = json::array();
  for (int m : groups) {
    for (std::uint64_t seed : seeds) {
      SweepCell cell{m, seed, {}, false, {}};
      RunConfig rc = cfg;
      rc.trainer.group_size = m;
      rc.seeds.train = seed;
      rc.seeds.init = seed;
      const fs::path dir = root / ("M" + std::to_string(m) + "_seed" + std::to_string(seed));
      try {
        cell.log = run_training(rc, dir, false, threads, 0, nullptr).log;
        logs.push_back(rel(dir / "run_log.jsonl", root));
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
        err << "cell M=" << m << " seed=" << seed << " failed: " << e.what() << "\n";
      }
      cells.push_back(std::move(cell));
    }
  }

  std::ostringstream csv;
  csv << "group_size,seed,step,reward_mean,reward_std,rg_mean,rm_mean\n" << std::setprecision(17);
  json summary = json::object();
  json failures = json::array();
  std::map<int, std::vector<double>> variances;
  for (const auto& c : cells) {
    if (c.failed) {
      failures.push_back({{"group_size", c.group_size}, {"seed", c.seed}, {"error", c.error}});
      continue;
    }
    std::vector<double> curve;
    for (const auto& r : c.log) {
      csv << c.group_size << ',' << c.seed << ',' << r.step << ',' << r.reward_mean << ','
          << r.reward_std << ',' << r.rg_mean << ',' << r.rm_mean << '\n';
      curve.push_back(r.reward_mean);
    }
    if (curve.size() >= 3) variances[c.group_size].push_back(step_to_step_variance(curve));
  }
  for (const auto& [m, v] : variances) {
    double sum = 0.0;
    for (double x : v) sum += x;
    summary[std::to_string(m)] = {{"pooled_step_variance", sum / static_cast<double>(v.size())},
                                  {"runs", v.size()}};
  }
  io::write_file_atomic(root / "sweep.csv", csv.str());
  io::write_file_atomic(root / "reward_curves.svg", svg_plot(cells, groups, cfg.trainer.steps));
  io::write_file_atomic(root / "summary.json",
                        json{{"groups", summary}, {"failures", failures}}.dump(1) + "\n");
  manifest.artifacts()["run_logs"] = logs;
  manifest.artifacts()["csv"] = "sweep.csv";
  manifest.artifacts()["plot"] = "reward_curves.svg";
  manifest.artifacts()["summary"] = "summary.json";
  manifest.finish(failures.empty() ? "complete" : "partial");
  out << json{{"command", "sweep-groupsize"}, {"groups", summary}, {"failed_cells", failures.size()}}.dump()
      << "\n";
  return failures.empty() ? kOk : kCellFailed;
}

// ---- score ----

int cmd_score(const Globals& g, const std::vector<std::string>& stems, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  if (stems.size() < 2) throw Error(ErrorCode::kInvalidConfig, "score needs at least two --views");
  std::vector<ViewObservation> views;
  for (const auto& s : stems) views.push_back(load_observation(s));
  const RewardBreakdown r =
      combined_reward(views, cfg.trainer.lambda_g, cfg.trainer.lambda_m, cfg.geometry);
  out << json(r).dump() << "\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shared-world GRPO laboratory", "swlab"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Run config (JSON)");
  app.add_option("--out", g.out, "Output directory (overrides output_dir)");
  auto* seed_opt = app.add_option("--seed", seed, "Overrides every seed in the config");
  app.add_flag("--resume", g.resume, "Continue from the latest checkpoint");
  app.add_option("--threads", g.threads, "Worker threads (ICW_THREADS overrides)")->check(CLI::PositiveNumber);

  auto* simulate = app.add_subcommand("simulate", "Generate worlds and rendered observations");
  auto* train_cmd = app.add_subcommand("train", "Run GRPO training");
  int stop_after = 0;
  bool quiet = false;
  train_cmd->add_option("--stop-after", stop_after, "Stop after this many total steps");
  train_cmd->add_flag("--quiet", quiet, "No per-step progress");
  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on the held-out worlds");
  std::string checkpoint;
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint (default <out>/policy_final.icwp)");
  auto* sweep = app.add_subcommand("sweep-groupsize", "Train across group sizes and seeds");
  std::string groups = "4,16";
  std::string seeds = "1,2,3";
  sweep->add_option("--groups", groups, "Comma-separated group sizes");
  sweep->add_option("--seeds", seeds, "Comma-separated training seeds");
  auto* score = app.add_subcommand("score", "Reward breakdown for saved observations");
  std::vector<std::string> stems;
  score->add_option("--views", stems, "Observation stems")->expected(2, -1);
  for (auto* sub : {simulate, train_cmd, eval_cmd, sweep, score}) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "swlab: " << e.what() << "\n";
    return kBadConfig;
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*simulate) return cmd_simulate(g, out);
    if (*train_cmd) return cmd_train(g, stop_after, quiet, out, err);
    if (*eval_cmd) return cmd_eval(g, checkpoint, out);
    if (*sweep) return cmd_sweep(g, groups, seeds, out, err);
    if (*score) {
      try {
        return cmd_score(g, stems, out);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kDegenerateCloud) {
          err << "swlab: degenerate registration: " << e.what() << "\n";
          return kIoFailure;
        }
        throw;
      }
    }
  } catch (const Error& e) {
    err << "swlab: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "swlab: " << e.what() << "\n";
    return kIoFailure;
  } catch (const nlohmann::json::exception& e) {
    err << "swlab: " << e.what() << "\n";
    return kBadConfig;
  }
  return kBadConfig;
}

}  // namespace swlab
