// Copyright 2026 The sharedworld Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>

#include "sharedworld/config_util.hpp"
#include "sharedworld/error.hpp"
#include "sharedworld/random.hpp"
#include "sharedworld/rewards.hpp"

namespace sharedworld {

using nlohmann::json;

void GeometryRewardConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidConfig, msg); };
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    fail("geometry.confidence_threshold must be in [0,1]");
  }
  if (icp_max_iters < 1) fail("geometry.icp_max_iters must be >= 1");
  if (!(icp_tolerance > 0.0)) fail("geometry.icp_tolerance must be > 0");
  if (!(trim_fraction >= 0.0 && trim_fraction < 1.0)) fail("geometry.trim_fraction must be in [0,1)");
  if (multi_start < 1) fail("geometry.multi_start must be >= 1");
  if (coarse_iters < 1) fail("geometry.coarse_iters must be >= 1");
  if (max_source_points < 3) fail("geometry.max_source_points must be >= 3");
}

void to_json(json& j, const GeometryRewardConfig& c) {
  j = json{{"confidence_threshold", c.confidence_threshold},
           {"icp_max_iters", c.icp_max_iters},
           {"icp_tolerance", c.icp_tolerance},
           {"trim_fraction", c.trim_fraction},
           {"multi_start", c.multi_start},
           {"principal_axis_starts", c.principal_axis_starts},
           {"coarse_iters", c.coarse_iters},
           {"max_source_points", c.max_source_points},
           {"seed", c.seed}};
}

void from_json(const json& j, GeometryRewardConfig& c) {
  config::require_object(j, "geometry");
  config::check_keys(j, "geometry",
                     {"confidence_threshold", "icp_max_iters", "icp_tolerance", "trim_fraction",
                      "multi_start", "principal_axis_starts", "coarse_iters", "max_source_points", "seed"});
  config::read(j, "geometry", "confidence_threshold", c.confidence_threshold);
  config::read(j, "geometry", "icp_max_iters", c.icp_max_iters);
  config::read(j, "geometry", "icp_tolerance", c.icp_tolerance);
  config::read(j, "geometry", "trim_fraction", c.trim_fraction);
  config::read(j, "geometry", "multi_start", c.multi_start);
  config::read(j, "geometry", "principal_axis_starts", c.principal_axis_starts);
  config::read(j, "geometry", "coarse_iters", c.coarse_iters);
  config::read(j, "geometry", "max_source_points", c.max_source_points);
  config::read(j, "geometry", "seed", c.seed);
}

namespace {

template <std::size_t N>
using SquareMat = std::array<std::array<double, N>, N>;
using Mat4 = SquareMat<4>;

// Cyclic Jacobi on a symmetric matrix. On return the diagonal of `a` holds
// the eigenvalues and the columns of `v` the eigenvectors.
template <std::size_t N>
void jacobi_eigen(SquareMat<N>& a, SquareMat<N>& v) {
  v = {};
  for (std::size_t i = 0; i < N; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    double scale = 0.0;
    for (std::size_t p = 0; p < N; ++p) {
      for (std::size_t q = 0; q < N; ++q) {
        if (p != q) off += a[p][q] * a[p][q];
        scale += a[p][q] * a[p][q];
      }
    }
    if (off <= 1e-30 * scale || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < N; ++p) {
      for (std::size_t q = p + 1; q < N; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < N; ++k) {
          const double akp = a[k][p];
          const double akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double apk = a[p][k];
          const double aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < N; ++k) {
          const double vkp = v[k][p];
          const double vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

// Eigenvector of the largest eigenvalue.
std::array<double, 4> dominant_eigenvector(Mat4 a) {
  Mat4 v{};
  jacobi_eigen(a, v);
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    if (a[i][i] > a[best][best]) best = i;
  }
  return {v[0][best], v[1][best], v[2][best], v[3][best]};
}

// Right-handed principal axes (columns), largest variance first.
Mat3 principal_axes(std::span<const Point3> pts, const Point3& centroid) {
  SquareMat<3> cov{};
  for (const Point3& p : pts) {
    const Vec3 d = p - centroid;
    const double c[3] = {d.x, d.y, d.z};
    for (int r = 0; r < 3; ++r) {
      for (int k = 0; k < 3; ++k) cov[r][k] += c[r] * c[k];
    }
  }
  SquareMat<3> v{};
  jacobi_eigen(cov, v);
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(), [&](int x, int y) { return cov[x][x] > cov[y][y]; });
  const Vec3 e1{v[0][order[0]], v[1][order[0]], v[2][order[0]]};
  const Vec3 e2{v[0][order[1]], v[1][order[1]], v[2][order[1]]};
  const Vec3 e3 = cross(e1, e2);
  return Mat3{{e1.x, e2.x, e3.x, e1.y, e2.y, e3.y, e1.z, e2.z, e3.z}};
}

Mat3 quaternion_to_matrix(double w, double x, double y, double z) {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  w /= n;
  x /= n;
  y /= n;
  z /= n;
  return Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
               2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
               2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

Point3 mean_of(std::span<const Point3> pts) {
  Vec3 s{};
  for (const auto& p : pts) s += p;
  return s / static_cast<double>(pts.size());
}

bool has_three_noncollinear(const std::vector<Point3>& pts) {
  if (pts.size() < 3) return false;
  const Point3 a = pts.front();
  std::size_t far = 0;
  double far_d = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double d = squared_norm(pts[i] - a);
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  if (far_d <= 0.0) return false;
  const Vec3 axis = pts[far] - a;
  for (const auto& p : pts) {
    if (squared_norm(cross(axis, p - a)) > 1e-18 * far_d * far_d) return true;
  }
  return false;
}

struct IcpState {
  RigidTransform transform;  // best iterate so far
  double residual = std::numeric_limits<double>::infinity();
  RigidTransform next;       // iterate to evaluate on the next call
  double last_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

class TrimmedIcp {
 public:
  TrimmedIcp(std::vector<Point3> source, const NearestIndex& target, const GeometryRewardConfig& cfg)
      : source_(std::move(source)), target_(target), cfg_(cfg) {
    const std::size_t n = source_.size();
    keep_ = std::max<std::size_t>(
        3, static_cast<std::size_t>(std::ceil((1.0 - cfg.trim_fraction) * static_cast<double>(n))));
    keep_ = std::min(keep_, n);
    ranked_.resize(n);
    matches_.resize(n);
    src_kept_.resize(keep_);
    dst_kept_.resize(keep_);
  }

  const std::vector<Point3>& source() const { return source_; }

  // Runs up to `iters` more iterations from `state`; keeps the best iterate.
  void run(IcpState& state, int iters) {
    for (int it = 0; it < iters && !state.converged; ++it) {
      const double res = evaluate(state.next);
      ++state.iterations;
      if (res < state.residual || !std::isfinite(state.residual)) {
        state.residual = res;
        state.transform = state.next;
      }
      if (std::abs(state.last_residual - res) < cfg_.icp_tolerance) {
        state.converged = true;
        break;
      }
      state.last_residual = res;
      state.next = fit_rigid(src_kept_, dst_kept_);
    }
  }

 private:
  // Matches every source point under `t`, keeps the closest `keep_` pairs
  // (ties by index) and returns their mean distance.
  double evaluate(const RigidTransform& t) {
    for (std::size_t i = 0; i < source_.size(); ++i) {
      const Neighbor nb = target_.nearest(t.apply(source_[i]));
      matches_[i] = nb.point;
      ranked_[i] = {nb.distance, i};
    }
    std::sort(ranked_.begin(), ranked_.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < keep_; ++k) {
      const std::size_t i = ranked_[k].second;
      src_kept_[k] = source_[i];
      dst_kept_[k] = matches_[i];
      sum += ranked_[k].first;
    }
    return sum / static_cast<double>(keep_);
  }

  std::vector<Point3> source_;
  const NearestIndex& target_;
  const GeometryRewardConfig& cfg_;
  std::size_t keep_ = 0;
  std::vector<std::pair<double, std::size_t>> ranked_;
  std::vector<Point3> matches_;
  std::vector<Point3> src_kept_;
  std::vector<Point3> dst_kept_;
};

}  // namespace

RigidTransform fit_rigid(std::span<const Point3> source, std::span<const Point3> target) {
  if (source.size() != target.size() || source.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "fit_rigid needs equal, non-empty point lists");
  }
  const Point3 cs = mean_of(source);
  const Point3 ct = mean_of(target);
  double s[3][3] = {};
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 a = source[i] - cs;
    const Vec3 b = target[i] - ct;
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 3; ++c) s[r][c] += a[r] * b[c];
    }
  }
  const double sxx = s[0][0], sxy = s[0][1], sxz = s[0][2];
  const double syx = s[1][0], syy = s[1][1], syz = s[1][2];
  const double szx = s[2][0], szy = s[2][1], szz = s[2][2];
  const Mat4 n{{{sxx + syy + szz, syz - szy, szx - sxz, sxy - syx},
                {syz - szy, sxx - syy - szz, sxy + syx, szx + sxz},
                {szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy},
                {sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz}}};
  const auto q = dominant_eigenvector(n);
  const Mat3 rot = quaternion_to_matrix(q[0], q[1], q[2], q[3]);
  return RigidTransform(rot, ct - rot * cs).orthonormalized();
}

RegistrationResult register_clouds(const PointCloud& source, const PointCloud& target,
                                   const GeometryRewardConfig& cfg) {
  cfg.validate();
  const PointCloud src = source.filtered(cfg.confidence_threshold);
  const PointCloud dst = target.filtered(cfg.confidence_threshold);
  if (!has_three_noncollinear(src.points)) {
    throw Error(ErrorCode::kDegenerateCloud,
                "source has " + std::to_string(src.size()) +
                    " points after filtering; need 3 non-collinear");
  }
  if (!has_three_noncollinear(dst.points)) {
    throw Error(ErrorCode::kDegenerateCloud,
                "target has " + std::to_string(dst.size()) +
                    " points after filtering; need 3 non-collinear");
  }

  std::vector<Point3> sub;
  const std::size_t n = src.size();
  if (n <= cfg.max_source_points) {
    sub = src.points;
  } else {
    sub.reserve(cfg.max_source_points);
    for (std::size_t i = 0; i < cfg.max_source_points; ++i) {
      sub.push_back(src.points[i * n / cfg.max_source_points]);
    }
  }

  const NearestIndex index(dst);
  TrimmedIcp icp(std::move(sub), index, cfg);
  const Point3 cs = mean_of(icp.source());
  const Point3 ct = dst.centroid();

  // Start 0 is the identity rotation about the centroids; the others are
  // seeded rotations of 10-30 degrees about random axes, then the four
  // proper principal-axis alignments.
  Rng rng(cfg.seed);
  std::vector<Mat3> rotations;
  for (int k = 0; k < cfg.multi_start; ++k) {
    Mat3 rot = Mat3::identity();
    if (k > 0) {
      Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
      axis = axis / norm(axis);
      rot = Mat3::from_axis_angle(axis * rng.uniform(10.0, 30.0) * std::numbers::pi / 180.0);
    }
    rotations.push_back(rot);
  }
  if (cfg.principal_axis_starts) {
    const Mat3 es = principal_axes(src.points, src.centroid());
    const Mat3 ed = principal_axes(dst.points, ct);
    for (double s1 : {1.0, -1.0}) {
      for (double s2 : {1.0, -1.0}) {
        const Mat3 flip{{s1, 0, 0, 0, s2, 0, 0, 0, s1 * s2}};
        rotations.push_back(ed * flip * es.transposed());
      }
    }
  }
  std::vector<IcpState> starts;
  for (const Mat3& rot : rotations) {
    IcpState st;
    st.next = RigidTransform(rot, ct - rot * cs);
    icp.run(st, std::min(cfg.coarse_iters, cfg.icp_max_iters));
    starts.push_back(st);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < starts.size(); ++k) {
    if (starts[k].residual < starts[best].residual) best = k;
  }
  IcpState& st = starts[best];
  if (!st.converged) icp.run(st, cfg.icp_max_iters - st.iterations);
  return {st.transform, st.residual, st.iterations, st.converged};
}

}  // namespace sharedworld
