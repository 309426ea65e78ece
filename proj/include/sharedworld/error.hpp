// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sharedworld {

enum class ErrorCode {
  kEmptyCloud,
  kDegenerateCloud,
  kMismatchedFrameCount,
  kEmptyTracks,
  kInsufficientTracks,
  kWrongViewCount,
  kDimensionMismatch,
  kGroupTooSmall,
  kInvalidArgument,
  kInvalidConfig,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace sharedworld
