#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "relpose/errors.hpp"

namespace relpose {

using Mat3 = Eigen::Matrix3d;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;
using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

// Relative pose of camera 2 w.r.t. camera 1: x2 ~ R*X + t for X in the
// camera-1 frame. The translation carries direction only (unit norm).
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::UnitZ();

  CameraPose() = default;
  CameraPose(const Mat3& R, const Vec3& t) : rotation(R), translation(t) {}

  bool satisfies_invariants(double rot_tol = 1e-9, double trans_tol = 1e-12) const {
    const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
    if (err.cwiseAbs().maxCoeff() > rot_tol) return false;
    if (std::abs(rotation.determinant() - 1.0) > rot_tol) return false;
    return std::abs(translation.norm() - 1.0) <= trans_tol;
  }
};

// n pairs of 2D keypoints in normalized (intrinsics removed) image
// coordinates. Row i is (x1, y1, x2, y2).
struct CorrespondenceSet {
  Eigen::Matrix<double, Eigen::Dynamic, 4> points;

  CorrespondenceSet() : points(0, 4) {}
  explicit CorrespondenceSet(Eigen::Matrix<double, Eigen::Dynamic, 4> pts) : points(std::move(pts)) {}

  int size() const { return static_cast<int>(points.rows()); }

  Vec2 x1(int i) const { return points.template block<1, 2>(i, 0).transpose(); }
  Vec2 x2(int i) const { return points.template block<1, 2>(i, 2).transpose(); }

  // homogeneous coordinates with z = 1
  Vec3 x1h(int i) const { return Vec3(points(i, 0), points(i, 1), 1.0); }
  Vec3 x2h(int i) const { return Vec3(points(i, 2), points(i, 3), 1.0); }

  CorrespondenceSet select(const std::vector<int>& idx) const {
    Eigen::Matrix<double, Eigen::Dynamic, 4> out(idx.size(), 4);
    for (size_t r = 0; r < idx.size(); ++r) out.row(r) = points.row(idx[r]);
    return CorrespondenceSet(out);
  }

  bool all_finite() const { return points.allFinite(); }
};

// The five fused motion scalars: Euler angles of the relative rotation and
// sphere angles of the translation direction.
struct MotionParams {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  double alpha = 0.0;
  double beta = 0.0;

  Vec5 vector() const {
    Vec5 v;
    v << yaw, pitch, roll, alpha, beta;
    return v;
  }
  static MotionParams from_vector(const Vec5& v) { return MotionParams{v[0], v[1], v[2], v[3], v[4]}; }
};

// Parameter order shared by the bundle-adjustment chart, the uncertainty
// module and fusion: yaw, pitch, roll, alpha, beta.
enum ParamIndex : int {
  kYaw = 0,
  kPitch = 1,
  kRoll = 2,
  kAlpha = 3,
  kBeta = 4,
};

// Per-parameter Gaussian belief over the 5 motion parameters. valid = false
// means the estimate must be excluded from fusion (inverse variances treated
// as zero).
struct GaussianEstimate {
  Vec5 means = Vec5::Zero();
  Vec5 inverse_variances = Vec5::Zero();
  bool valid = false;

  MotionParams motion() const { return MotionParams::from_vector(means); }
};

}  // namespace relpose
