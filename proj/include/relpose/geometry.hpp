#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/motion.hpp"
#include "relpose/types.hpp"

namespace relpose {

inline constexpr double kDepthEps = 1e-8;
inline constexpr double kRayAngleEps = 1e-6;

// 3x3 essential matrix, Frobenius-normalized. Satisfies x2^T E x1 = 0 for
// corresponding normalized points.
struct EssentialMatrix {
  Mat3 matrix = Mat3::Zero();

  EssentialMatrix() = default;
  explicit EssentialMatrix(const Mat3& m) : matrix(m / m.norm()) {}

  // two equal nonzero singular values, third zero
  bool satisfies_invariants(double sv_tol = 1e-6, double det_tol = 1e-9) const {
    const Eigen::JacobiSVD<Mat3> svd(matrix);
    const Vec3 sv = svd.singularValues();
    if (sv[0] <= 0.0) return false;
    if (std::abs(sv[0] - sv[1]) > sv_tol * sv[0]) return false;
    if (sv[2] > sv_tol * sv[0]) return false;
    return std::abs(matrix.determinant()) <= det_tol;
  }
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline EssentialMatrix essential_from_pose(const CameraPose& pose) {
  return EssentialMatrix(skew(pose.translation) * pose.rotation);
}

// Perspective projection of a camera-1-frame point into the given camera.
inline Vec2 project(const CameraPose& pose, const Vec3& point, double eps_depth = kDepthEps) {
  const Vec3 u = pose.rotation * point + pose.translation;
  if (u.z() <= eps_depth) throw BehindCamera("project: depth below eps");
  return Vec2(u.x() / u.z(), u.y() / u.z());
}

// Projection under the reference camera P1 = [I 0].
inline Vec2 project_identity(const Vec3& point, double eps_depth = kDepthEps) {
  if (point.z() <= eps_depth) throw BehindCamera("project: depth below eps");
  return Vec2(point.x() / point.z(), point.y() / point.z());
}

// First-order (Sampson) epipolar distance of one correspondence. Invariant
// to the sign and scale of E; exactly zero when x2^T E x1 = 0.
inline double sampson_error(const Mat3& E, const Vec3& x1h, const Vec3& x2h) {
  const Vec3 Ex1 = E * x1h;
  const Vec3 Etx2 = E.transpose() * x2h;
  const double r = x2h.dot(Ex1);
  const double denom = Ex1.head<2>().squaredNorm() + Etx2.head<2>().squaredNorm();
  if (denom <= 0.0) return r == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(r) / std::sqrt(denom);
}

inline double epipolar_error(const EssentialMatrix& E, const Vec2& x1, const Vec2& x2) {
  return sampson_error(E.matrix, Vec3(x1.x(), x1.y(), 1.0), Vec3(x2.x(), x2.y(), 1.0));
}

namespace detail {

// Linear (DLT) two-view triangulation. Returns the homogeneous solution.
inline Eigen::Vector4d triangulate_dlt(const CameraPose& pose, const Vec2& x1, const Vec2& x2) {
  Eigen::Matrix<double, 3, 4> P2;
  P2.leftCols<3>() = pose.rotation;
  P2.col(3) = pose.translation;

  Eigen::Matrix4d A;
  A.row(0) << -1.0, 0.0, x1.x(), 0.0;  // x1 * P1.row(2) - P1.row(0)
  A.row(1) << 0.0, -1.0, x1.y(), 0.0;
  A.row(2) = x2.x() * P2.row(2) - P2.row(0);
  A.row(3) = x2.y() * P2.row(2) - P2.row(1);

  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
  return svd.matrixV().col(3);
}

}  // namespace detail

// Triangulation angle between the two observation rays, both expressed in the
// camera-1 frame.
inline double triangulation_angle(const CameraPose& pose, const Vec2& x1, const Vec2& x2) {
  const Vec3 d1 = Vec3(x1.x(), x1.y(), 1.0).normalized();
  const Vec3 d2 = (pose.rotation.transpose() * Vec3(x2.x(), x2.y(), 1.0)).normalized();
  return std::acos(std::clamp(d1.dot(d2), -1.0, 1.0));
}

// DLT triangulation followed by one Gauss-Newton refinement of the point.
// Returns the 3D point in the camera-1 frame.
inline Vec3 triangulate(const CameraPose& pose, const Vec2& x1, const Vec2& x2, double eps_angle = kRayAngleEps) {
  if (triangulation_angle(pose, x1, x2) <= eps_angle) throw ParallelRays("triangulate: rays within eps of parallel");

  const Eigen::Vector4d Xh = detail::triangulate_dlt(pose, x1, x2);
  if (std::abs(Xh[3]) < 1e-14 * Xh.head<3>().norm()) throw ParallelRays("triangulate: point at infinity");
  Vec3 X = Xh.head<3>() / Xh[3];

  // one Gauss-Newton step on the 4-residual reprojection error; skipped if
  // the linear estimate is not in front of both cameras
  const Vec3 u2 = pose.rotation * X + pose.translation;
  if (X.z() > kDepthEps && u2.z() > kDepthEps) {
    Eigen::Matrix<double, 4, 3> J;
    Eigen::Matrix<double, 4, 1> r;
    const double iz1 = 1.0 / X.z();
    r.head<2>() = x1 - Vec2(X.x() * iz1, X.y() * iz1);
    Eigen::Matrix<double, 2, 3> d1;
    d1 << iz1, 0.0, -X.x() * iz1 * iz1, 0.0, iz1, -X.y() * iz1 * iz1;
    J.topRows<2>() = -d1;

    const double iz2 = 1.0 / u2.z();
    r.tail<2>() = x2 - Vec2(u2.x() * iz2, u2.y() * iz2);
    Eigen::Matrix<double, 2, 3> d2;
    d2 << iz2, 0.0, -u2.x() * iz2 * iz2, 0.0, iz2, -u2.y() * iz2 * iz2;
    J.bottomRows<2>() = -d2 * pose.rotation;

    const Mat3 JtJ = J.transpose() * J;
    const Vec3 delta = JtJ.ldlt().solve(-J.transpose() * r);
    if (delta.allFinite()) {
      const Vec3 Xr = X + delta;
      const Vec3 u2r = pose.rotation * Xr + pose.translation;
      if (Xr.z() > kDepthEps && u2r.z() > kDepthEps) {
        // keep the refinement only if it does not increase the error
        const double c0 = r.squaredNorm();
        const double iz1r = 1.0 / Xr.z();
        const double iz2r = 1.0 / u2r.z();
        Eigen::Matrix<double, 4, 1> rr;
        rr.head<2>() = x1 - Vec2(Xr.x() * iz1r, Xr.y() * iz1r);
        rr.tail<2>() = x2 - Vec2(u2r.x() * iz2r, u2r.y() * iz2r);
        if (rr.squaredNorm() <= c0) X = Xr;
      }
    }
  }
  return X;
}

// The four (R, t) factorizations of an essential matrix.
inline std::array<CameraPose, 4> factorize_essential(const EssentialMatrix& E) {
  Eigen::JacobiSVD<Mat3> svd(E.matrix, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;

  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 R1 = U * W * V.transpose();
  const Mat3 R2 = U * W.transpose() * V.transpose();
  const Vec3 t = U.col(2);

  return {CameraPose(R1, t), CameraPose(R1, -t), CameraPose(R2, t), CameraPose(R2, -t)};
}

// Resolves the four-fold ambiguity by cheirality voting over the support
// set: the winning candidate must place a strict majority of the points in
// front of both cameras. Ties break on total Sampson error, then on
// candidate order.
inline CameraPose decompose_essential(const EssentialMatrix& E, const CorrespondenceSet& support) {
  const int n = support.size();
  if (n < 1) throw InsufficientCorrespondences("decompose_essential: empty support");

  const std::array<CameraPose, 4> candidates = factorize_essential(E);

  int best = -1;
  int best_count = -1;
  double best_sampson = std::numeric_limits<double>::infinity();
  for (int c = 0; c < 4; ++c) {
    const CameraPose& pose = candidates[c];
    int count = 0;
    for (int i = 0; i < n; ++i) {
      try {
        const Vec3 X = triangulate(pose, support.x1(i), support.x2(i));
        const Vec3 u2 = pose.rotation * X + pose.translation;
        if (X.z() > kDepthEps && u2.z() > kDepthEps) ++count;
      } catch (const Error&) {
        // uncheckable point, counts against the candidate
      }
    }
    const Mat3 Ec = skew(pose.translation) * pose.rotation;
    double sampson = 0.0;
    for (int i = 0; i < n; ++i) sampson += sampson_error(Ec, support.x1h(i), support.x2h(i));
    if (count > best_count || (count == best_count && sampson < best_sampson)) {
      best = c;
      best_count = count;
      best_sampson = sampson;
    }
  }

  if (2 * best_count <= n) throw CheiralityFailure("decompose_essential: no candidate passes a strict majority");
  return candidates[best];
}

// Linear least-squares essential matrix from >= 8 correspondences, projected
// onto the essential manifold. Rows are Sampson-weighted against the guess
// when one is supplied, which removes most of the algebraic bias. Minimal
// problems go through essential_from_five.
inline EssentialMatrix essential_from_linear(const CorrespondenceSet& corr, const std::vector<int>& idx,
                                             const Mat3* guess = nullptr) {
  const int m = static_cast<int>(idx.size());
  if (m < 8) throw InsufficientCorrespondences("essential_from_linear: need at least 8 points");
  MatX A(m, 9);
  for (int r = 0; r < m; ++r) {
    const Vec3 p1 = corr.x1h(idx[r]);
    const Vec3 p2 = corr.x2h(idx[r]);
    double w = 1.0;
    if (guess) {
      const Vec3 Ex1 = *guess * p1;
      const Vec3 Etx2 = guess->transpose() * p2;
      const double denom = Ex1.head<2>().squaredNorm() + Etx2.head<2>().squaredNorm();
      if (denom > 0.0) w = 1.0 / std::sqrt(denom);
    }
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) A(r, 3 * i + j) = w * p2[i] * p1[j];
  }
  const Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
  const VecX e = svd.matrixV().col(8);
  Mat3 E;
  E << e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8];
  Eigen::JacobiSVD<Mat3> esvd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 projected =
      esvd.matrixU() * Vec3(1.0, 1.0, 0.0).asDiagonal() * esvd.matrixV().transpose();
  return EssentialMatrix(projected);
}

// 3x3 homography from >= 4 correspondences by DLT. Throws
// DegenerateConfiguration if the system is rank-deficient.
inline Mat3 homography_dlt(const CorrespondenceSet& corr, const std::vector<int>& idx) {
  const int m = static_cast<int>(idx.size());
  if (m < 4) throw InsufficientCorrespondences("homography_dlt: need at least 4 points");
  MatX A(2 * m, 9);
  for (int r = 0; r < m; ++r) {
    const Vec3 p = corr.x1h(idx[r]);
    const Vec2 q = corr.x2(idx[r]);
    A.row(2 * r) << 0.0, 0.0, 0.0, -p.x(), -p.y(), -p.z(), q.y() * p.x(), q.y() * p.y(), q.y() * p.z();
    A.row(2 * r + 1) << p.x(), p.y(), p.z(), 0.0, 0.0, 0.0, -q.x() * p.x(), -q.x() * p.y(), -q.x() * p.z();
  }
  const Eigen::JacobiSVD<MatX> svd(A, Eigen::ComputeFullV);
  const VecX sv = svd.singularValues();
  if (sv[0] <= 0.0 || sv[std::min<int>(7, sv.size() - 1)] < 1e-12 * sv[0])
    throw DegenerateConfiguration("homography_dlt: rank-deficient system");
  const VecX h = svd.matrixV().col(8);
  Mat3 H;
  H << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  return H;
}

// forward transfer distance |x2 - H x1|
inline double homography_transfer_error(const Mat3& H, const Vec2& x1, const Vec2& x2) {
  const Vec3 q = H * Vec3(x1.x(), x1.y(), 1.0);
  if (std::abs(q.z()) < 1e-14 * q.head<2>().norm()) return std::numeric_limits<double>::infinity();
  return (Vec2(q.x() / q.z(), q.y() / q.z()) - x2).norm();
}

}  // namespace relpose
