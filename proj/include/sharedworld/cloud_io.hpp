// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "sharedworld/geometry.hpp"

namespace sharedworld {

// Binary cloud block: "ICW1", u32 LE point count, then per point
// x, y, z, confidence as f64 LE. Several blocks may be concatenated in one file.
inline constexpr char kCloudMagic[4] = {'I', 'C', 'W', '1'};

void write_cloud(std::ostream& out, const PointCloud& cloud);
/// Throws kIo on truncation or a bad magic.
PointCloud read_cloud(std::istream& in);

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& path);

/// Debug CSV with header "x,y,z,conf". Values use round-trip precision.
void write_cloud_csv(std::ostream& out, const PointCloud& cloud);
PointCloud read_cloud_csv(std::istream& in);

namespace io {
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);

/// Writes to a temporary sibling and renames over the target.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);
}  // namespace io

}  // namespace sharedworld
