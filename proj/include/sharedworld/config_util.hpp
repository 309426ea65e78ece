// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include "json.hpp"

#include "sharedworld/error.hpp"

// Helpers for strict JSON config loading: unknown keys and type mismatches
// are reported as kInvalidConfig with the dotted key path.
namespace sharedworld::config {

inline void require_object(const nlohmann::json& j, std::string_view section) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, std::string(section) + " must be a JSON object");
  }
}

inline void check_keys(const nlohmann::json& j, std::string_view section,
                       std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) {
      throw Error(ErrorCode::kInvalidConfig,
                  "unknown key " + std::string(section) + "." + key);
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, std::string_view section, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw std::invalid_argument("expected boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw std::invalid_argument("expected integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw std::invalid_argument("expected number");
    }
    out = it->template get<T>();
  } catch (const std::exception& ex) {
    throw Error(ErrorCode::kInvalidConfig,
                std::string(section) + "." + key + ": " + ex.what());
  }
}

}  // namespace sharedworld::config
