// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/run_config.hpp"

#include <cstdio>

#include "sharedworld/cloud_io.hpp"
#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"

namespace sharedworld {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTestSplitTag = 0x54455354;

}  // namespace

void RunConfig::validate() const {
  world.validate();
  geometry.validate();
  policy.validate();
  schedule.validate();
  trainer.validate();
  eval.validate();
  if (!(render.noise_sigma >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "render.noise_sigma must be >= 0");
  if (!(render.dropout >= 0.0 && render.dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "render.dropout must be in [0, 1)");
  }
  if (world.views != policy.views) {
    throw Error(ErrorCode::kInvalidConfig, "world.views and policy.views differ");
  }
  if (world.views < 2) throw Error(ErrorCode::kInvalidConfig, "world.views must be >= 2");
  if (train_worlds < 1) throw Error(ErrorCode::kInvalidConfig, "dataset.train_worlds must be >= 1");
  if (test_worlds < 0) throw Error(ErrorCode::kInvalidConfig, "dataset.test_worlds must be >= 0");
  const int tracks = world.object_count * world.points_per_object;
  for (int d : eval.densities) {
    if (d > tracks) {
      throw Error(ErrorCode::kInvalidConfig,
                  "eval density " + std::to_string(d) + " exceeds the " + std::to_string(tracks) +
                      " tracks per view");
    }
  }
  if (output_dir.empty()) throw Error(ErrorCode::kInvalidConfig, "output_dir must be set");
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"world", c.world},
           {"render", c.render},
           {"geometry", c.geometry},
           {"policy", c.policy},
           {"schedule", c.schedule},
           {"trainer", c.trainer},
           {"eval", c.eval},
           {"seeds",
            {{"world", c.seeds.world}, {"train", c.seeds.train}, {"eval", c.seeds.eval},
             {"init", c.seeds.init}}},
           {"dataset", {{"train_worlds", c.train_worlds}, {"test_worlds", c.test_worlds}}},
           {"output_dir", c.output_dir.string()}};
}

void from_json(const json& j, RunConfig& c) {
  config::require_object(j, "config");
  config::check_keys(j, "config",
                     {"world", "render", "geometry", "policy", "schedule", "trainer", "eval",
                      "seeds", "dataset", "output_dir"});
  if (j.contains("world")) c.world = j.at("world").get<WorldConfig>();
  if (j.contains("render")) c.render = j.at("render").get<RenderSettings>();
  if (j.contains("geometry")) c.geometry = j.at("geometry").get<GeometryRewardConfig>();
  if (j.contains("policy")) c.policy = j.at("policy").get<PolicyConfig>();
  if (j.contains("schedule")) c.schedule = j.at("schedule").get<DenoiseSchedule>();
  if (j.contains("trainer")) c.trainer = j.at("trainer").get<TrainerConfig>();
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();

  if (!j.contains("seeds")) throw Error(ErrorCode::kInvalidConfig, "seeds are required");
  const json& s = j.at("seeds");
  config::require_object(s, "seeds");
  config::check_keys(s, "seeds", {"world", "train", "eval", "init"});
  for (const char* key : {"world", "train", "eval"}) {
    if (!s.contains(key)) throw Error(ErrorCode::kInvalidConfig, std::string("seeds.") + key + " is required");
  }
  config::read(s, "seeds", "world", c.seeds.world);
  config::read(s, "seeds", "train", c.seeds.train);
  config::read(s, "seeds", "eval", c.seeds.eval);
  c.seeds.init = c.seeds.train;
  config::read(s, "seeds", "init", c.seeds.init);

  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    config::require_object(d, "dataset");
    config::check_keys(d, "dataset", {"train_worlds", "test_worlds"});
    config::read(d, "dataset", "train_worlds", c.train_worlds);
    config::read(d, "dataset", "test_worlds", c.test_worlds);
  }
  std::string out = c.output_dir.string();
  config::read(j, "config", "output_dir", out);
  c.output_dir = out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kInvalidConfig, "config file not found: " + path.string());
  }
  const std::string text = io::read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, path.string() + ": " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& c) {
  json j = c;
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<TrainingWorld> make_train_set(const RunConfig& c) {
  return make_dataset(c.world, c.render, c.policy, c.train_worlds, c.seeds.world);
}

std::vector<TrainingWorld> make_test_set(const RunConfig& c) {
  return make_dataset(c.world, c.render, c.policy, c.test_worlds,
                      derive_seed(c.seeds.world, {kTestSplitTag}));
}

}  // namespace sharedworld
