// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace sharedworld {

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x;
    y -= o.y;
    z -= o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

using Point3 = Vec3;

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
constexpr double squared_norm(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(squared_norm(v)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{};

  static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }

  constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
  constexpr double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

  constexpr Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 operator*(const Mat3& o) const;
  Mat3 transposed() const;
  double determinant() const;
  constexpr bool operator==(const Mat3&) const = default;

  /// Rodrigues' formula. The axis-angle vector's norm is the angle in radians.
  static Mat3 from_axis_angle(const Vec3& axis_angle);
  Vec3 row(std::size_t r) const { return {m[r * 3], m[r * 3 + 1], m[r * 3 + 2]}; }
};

/// Angle in radians of the rotation R (acos((tr R - 1) / 2), clamped).
double rotation_angle(const Mat3& rotation);
/// Inverse of Mat3::from_axis_angle for angles in [0, pi).
Vec3 to_axis_angle(const Mat3& rotation);

/// Rigid motion p -> R p + t. Rotation is stored as a matrix and kept orthonormal.
class RigidTransform {
 public:
  RigidTransform() = default;
  RigidTransform(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {}

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Mat3::identity(), t}; }
  static RigidTransform from_axis_angle(const Vec3& axis_angle, const Vec3& t = {}) {
    return {Mat3::from_axis_angle(axis_angle), t};
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Point3 apply(const Point3& p) const { return rotation_ * p + translation_; }
  Point3 operator()(const Point3& p) const { return apply(p); }

  /// this * other: applies other first.
  RigidTransform compose(const RigidTransform& other) const;
  RigidTransform inverse() const;
  /// Gram-Schmidt re-orthonormalization of the rotation rows.
  RigidTransform orthonormalized() const;

  /// max |R^T R - I| entry; zero for an exact rotation.
  double orthonormality_error() const;
  bool is_valid(double tol = 1e-9) const;

  bool operator==(const RigidTransform&) const = default;

 private:
  Mat3 rotation_ = Mat3::identity();
  Vec3 translation_{};
};

inline Point3 apply_transform(const RigidTransform& t, const Point3& p) { return t.apply(p); }
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return a.compose(b);
}
inline RigidTransform inverse(const RigidTransform& t) { return t.inverse(); }

/// Points with per-point confidence in [0,1].
struct PointCloud {
  std::vector<Point3> points;
  std::vector<double> confidence;

  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> pts);
  PointCloud(std::vector<Point3> pts, std::vector<double> conf);

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  void push_back(const Point3& p, double conf = 1.0) {
    points.push_back(p);
    confidence.push_back(conf);
  }
  void append(const PointCloud& other);

  /// Throws kInvalidArgument on length mismatch, non-finite coordinates,
  /// or confidence outside [0,1].
  void validate() const;

  /// Keeps points whose confidence is >= threshold.
  PointCloud filtered(double threshold) const;
  PointCloud transformed(const RigidTransform& t) const;
  Point3 centroid() const;

  bool operator==(const PointCloud&) const = default;
};

struct Neighbor {
  std::size_t index = 0;
  Point3 point{};
  double distance = 0.0;
};

/// Immutable 3-d tree over a point set. Queries return the exact Euclidean
/// nearest neighbour; among equidistant points the lowest index wins.
class NearestIndex {
 public:
  /// Throws kEmptyCloud for an empty input.
  explicit NearestIndex(std::span<const Point3> points);
  explicit NearestIndex(const PointCloud& cloud) : NearestIndex(std::span<const Point3>(cloud.points)) {}

  Neighbor nearest(const Point3& query) const;
  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

 private:
  struct Node {
    std::size_t begin = 0;  // range into order_
    std::size_t end = 0;
    int axis = -1;           // -1 for leaf
    double split = 0.0;
    std::size_t left = 0;
    std::size_t right = 0;
  };

  std::size_t build(std::size_t begin, std::size_t end);
  void search(std::size_t node, const Point3& q, std::size_t& best, double& best_d2) const;

  std::vector<Point3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

inline Neighbor nearest(const NearestIndex& idx, const Point3& p) { return idx.nearest(p); }

}  // namespace sharedworld
