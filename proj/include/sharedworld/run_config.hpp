// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "sharedworld/grpo.hpp"
#include "sharedworld/metrics.hpp"
#include "sharedworld/policy.hpp"
#include "sharedworld/rewards.hpp"
#include "sharedworld/world.hpp"

namespace sharedworld {

struct Seeds {
  std::uint64_t world = 0;
  std::uint64_t train = 0;
  std::uint64_t eval = 0;
  std::uint64_t init = 0;  // policy initialization
};

/// Everything one command needs; one JSON file drives simulate, train and eval.
struct RunConfig {
  WorldConfig world;
  RenderSettings render;
  GeometryRewardConfig geometry;
  PolicyConfig policy;
  DenoiseSchedule schedule;
  TrainerConfig trainer;
  EvalConfig eval;
  Seeds seeds;
  int train_worlds = 8;
  int test_worlds = 20;
  std::filesystem::path output_dir = "runs/default";

  /// Checks every nested invariant and cross-field constraint. Throws kInvalidConfig.
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Requires the "seeds" object with world, train and eval; unknown keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Parses and validates a config file. Throws kInvalidConfig when the file is
/// missing or violates the schema or an invariant, kIo when it cannot be read.
RunConfig load_run_config(const std::filesystem::path& path);

/// 16 hex digits of FNV-1a over the canonical JSON dump, output_dir excluded.
std::string config_hash(const RunConfig& c);

std::vector<TrainingWorld> make_train_set(const RunConfig& c);
std::vector<TrainingWorld> make_test_set(const RunConfig& c);

}  // namespace sharedworld
