// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include "sharedworld/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numbers>

#include "sharedworld/error.hpp"

namespace sharedworld {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyCloud: return "EmptyCloud";
    case ErrorCode::kDegenerateCloud: return "DegenerateCloud";
    case ErrorCode::kMismatchedFrameCount: return "MismatchedFrameCount";
    case ErrorCode::kEmptyTracks: return "EmptyTracks";
    case ErrorCode::kInsufficientTracks: return "InsufficientTracks";
    case ErrorCode::kWrongViewCount: return "WrongViewCount";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kGroupTooSmall: return "GroupTooSmall";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

Mat3 Mat3::operator*(const Mat3& o) const {
  Mat3 r;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
    }
  }
  return r;
}

Mat3 Mat3::transposed() const {
  return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
}

double Mat3::determinant() const {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Mat3 Mat3::from_axis_angle(const Vec3& axis_angle) {
  const double theta = norm(axis_angle);
  if (theta < 1e-300) return identity();
  const Vec3 k = axis_angle / theta;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double v = 1.0 - c;
  return Mat3{{c + k.x * k.x * v, k.x * k.y * v - k.z * s, k.x * k.z * v + k.y * s,
               k.y * k.x * v + k.z * s, c + k.y * k.y * v, k.y * k.z * v - k.x * s,
               k.z * k.x * v - k.y * s, k.z * k.y * v + k.x * s, c + k.z * k.z * v}};
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r(0, 0) + r(1, 1) + r(2, 2) - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c);
}

Vec3 to_axis_angle(const Mat3& r) {
  const double theta = rotation_angle(r);
  if (theta < 1e-12) return {};
  const Vec3 w{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
  return w * (theta / (2.0 * std::sin(theta)));
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation_.transposed();
  return {rt, -(rt * translation_)};
}

RigidTransform RigidTransform::orthonormalized() const {
  Vec3 r0 = rotation_.row(0);
  Vec3 r1 = rotation_.row(1);
  r0 = r0 / norm(r0);
  r1 = r1 - r0 * dot(r0, r1);
  r1 = r1 / norm(r1);
  const Vec3 r2 = cross(r0, r1);
  return {Mat3{{r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z}}, translation_};
}

double RigidTransform::orthonormality_error() const {
  const Mat3 p = rotation_.transposed() * rotation_;
  const Mat3 id = Mat3::identity();
  double err = 0.0;
  for (std::size_t i = 0; i < 9; ++i) err = std::max(err, std::abs(p.m[i] - id.m[i]));
  return err;
}

bool RigidTransform::is_valid(double tol) const {
  for (double v : rotation_.m) {
    if (!std::isfinite(v)) return false;
  }
  return is_finite(translation_) && orthonormality_error() < tol &&
         std::abs(rotation_.determinant() - 1.0) < tol;
}

PointCloud::PointCloud(std::vector<Point3> pts)
    : points(std::move(pts)), confidence(points.size(), 1.0) {}

PointCloud::PointCloud(std::vector<Point3> pts, std::vector<double> conf)
    : points(std::move(pts)), confidence(std::move(conf)) {
  validate();
}

void PointCloud::append(const PointCloud& other) {
  points.insert(points.end(), other.points.begin(), other.points.end());
  confidence.insert(confidence.end(), other.confidence.begin(), other.confidence.end());
}

void PointCloud::validate() const {
  if (points.size() != confidence.size()) {
    throw Error(ErrorCode::kInvalidArgument, "confidence length " +
                                                 std::to_string(confidence.size()) +
                                                 " != point count " +
                                                 std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!is_finite(points[i])) {
      throw Error(ErrorCode::kInvalidArgument, "non-finite point at " + std::to_string(i));
    }
    if (!(confidence[i] >= 0.0 && confidence[i] <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "confidence outside [0,1] at " + std::to_string(i));
    }
  }
}

PointCloud PointCloud::filtered(double threshold) const {
  PointCloud out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (confidence[i] >= threshold) out.push_back(points[i], confidence[i]);
  }
  return out;
}

PointCloud PointCloud::transformed(const RigidTransform& t) const {
  PointCloud out = *this;
  for (auto& p : out.points) p = t.apply(p);
  return out;
}

Point3 PointCloud::centroid() const {
  if (points.empty()) throw Error(ErrorCode::kEmptyCloud, "centroid of empty cloud");
  Vec3 sum{};
  for (const auto& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

namespace {
constexpr std::size_t kLeafSize = 8;
}

NearestIndex::NearestIndex(std::span<const Point3> points)
    : points_(points.begin(), points.end()) {
  if (points_.empty()) throw Error(ErrorCode::kEmptyCloud, "cannot index an empty cloud");
  order_.resize(points_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  nodes_.reserve(2 * points_.size() / kLeafSize + 2);
  build(0, points_.size());
}

std::size_t NearestIndex::build(std::size_t begin, std::size_t end) {
  const std::size_t id = nodes_.size();
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
          std::numeric_limits<double>::max()};
  Vec3 hi = -lo;
  for (std::size_t i = begin; i < end; ++i) {
    const Point3& p = points_[order_[i]];
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
  }
  const Vec3 ext = hi - lo;
  const int axis = ext.x >= ext.y && ext.x >= ext.z ? 0 : (ext.y >= ext.z ? 1 : 2);
  if (ext[static_cast<std::size_t>(axis)] <= 0.0) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  const auto ax = static_cast<std::size_t>(axis);
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                   order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end),
                   [&](std::size_t a, std::size_t b) { return points_[a][ax] < points_[b][ax]; });
  const double split = points_[order_[mid]][ax];

  const std::size_t left = build(begin, mid);
  const std::size_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = axis;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void NearestIndex::search(std::size_t id, const Point3& q, std::size_t& best,
                          double& best_d2) const {
  const Node& node = nodes_[id];
  if (node.axis < 0) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      const double d2 = squared_norm(points_[idx] - q);
      if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
        best_d2 = d2;
        best = idx;
      }
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = q[static_cast<std::size_t>(node.axis)] - node.split;
  const std::size_t near_child = diff <= 0.0 ? node.left : node.right;
  const std::size_t far_child = diff <= 0.0 ? node.right : node.left;
  search(near_child, q, best, best_d2);
  if (diff * diff <= best_d2) search(far_child, q, best, best_d2);
}

Neighbor NearestIndex::nearest(const Point3& query) const {
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, query, best, best_d2);
  return {best, points_[best], std::sqrt(best_d2)};
}

}  // namespace sharedworld
