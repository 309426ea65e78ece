// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace swlab {

enum ExitCode : int {
  kOk = 0,
  kBadConfig = 1,
  kIoFailure = 2,  // also: score on a degenerate registration
  kCellFailed = 3,
};

/// Parses argv and dispatches to simulate, train, eval, sweep-groupsize or
/// score. Normal output goes to `out`, diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace swlab
