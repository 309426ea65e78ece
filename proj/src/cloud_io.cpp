// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/cloud_io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "sharedworld/error.hpp"

namespace sharedworld {
namespace io {

void write_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 8);
}

void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error(ErrorCode::kIo, "truncated u32");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorCode::kIo, "truncated u64");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot open " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "rename to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace io

void write_cloud(std::ostream& out, const PointCloud& cloud) {
  cloud.validate();
  out.write(kCloudMagic, 4);
  io::write_u32(out, static_cast<std::uint32_t>(cloud.size()));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    io::write_f64(out, cloud.points[i].x);
    io::write_f64(out, cloud.points[i].y);
    io::write_f64(out, cloud.points[i].z);
    io::write_f64(out, cloud.confidence[i]);
  }
}

PointCloud read_cloud(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::kIo, "truncated cloud header");
  if (std::memcmp(magic, kCloudMagic, 4) != 0) throw Error(ErrorCode::kIo, "bad cloud magic");
  const std::uint32_t n = io::read_u32(in);
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.confidence.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Point3 p;
    p.x = io::read_f64(in);
    p.y = io::read_f64(in);
    p.z = io::read_f64(in);
    cloud.push_back(p, io::read_f64(in));
  }
  cloud.validate();
  return cloud;
}

void save_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ostringstream ss;
  write_cloud(ss, cloud);
  io::write_file_atomic(path, ss.str());
}

PointCloud load_cloud(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_cloud(in);
}

namespace {

void append_double(std::string& s, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  s.append(buf, res.ptr);
}

double parse_double(std::string_view field, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(field.data(), field.data() + field.size(), v);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw Error(ErrorCode::kIo, "bad number '" + std::string(field) + "' on line " +
                                    std::to_string(line));
  }
  return v;
}

}  // namespace

void write_cloud_csv(std::ostream& out, const PointCloud& cloud) {
  out << "x,y,z,conf\n";
  std::string line;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    line.clear();
    append_double(line, cloud.points[i].x);
    line += ',';
    append_double(line, cloud.points[i].y);
    line += ',';
    append_double(line, cloud.points[i].z);
    line += ',';
    append_double(line, cloud.confidence[i]);
    line += '\n';
    out << line;
  }
}

PointCloud read_cloud_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,y,z,conf", 0) != 0) {
    throw Error(ErrorCode::kIo, "missing x,y,z,conf header");
  }
  PointCloud cloud;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != 4) {
      throw Error(ErrorCode::kIo, "expected 4 columns on line " + std::to_string(lineno));
    }
    cloud.push_back({parse_double(fields[0], lineno), parse_double(fields[1], lineno),
                     parse_double(fields[2], lineno)},
                    parse_double(fields[3], lineno));
  }
  cloud.validate();
  return cloud;
}

}  // namespace sharedworld
