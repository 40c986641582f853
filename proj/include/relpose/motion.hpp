#pragma once

#include <cmath>
#include <numbers>

#include "relpose/errors.hpp"
#include "relpose/types.hpp"

// Conversions between rotation matrices / unit translation directions and the
// five fusion parameters, plus circular-angle arithmetic.
//
// Conventions (fixed for the whole project, including file formats):
//   rotation   R = R_y(yaw) * R_x(pitch) * R_z(roll), pitch in [-pi/2, pi/2]
//   translation t(alpha, beta) = (cos a, sin a cos b, sin a sin b),
//               alpha in [0, pi], beta in [-pi, pi)

namespace relpose {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSphereSingularEps = 1e-9;
inline constexpr double kGimbalEps = 1e-6;

struct SphereAngles {
  double alpha = 0.0;  // [0, pi]
  double beta = 0.0;   // [-pi, pi)
};

struct EulerAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
};

// wrap into [-pi, pi); values already in range pass through unchanged
inline double wrap_half_open(double a) {
  if (a >= -kPi && a < kPi) return a;
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  return r - kPi;
}

// wrap into (-pi, pi]
inline double wrap_half_open_upper(double a) {
  double r = -wrap_half_open(-a);
  return r;
}

inline SphereAngles sphere_from_vector(const Vec3& t) {
  const double n = t.norm();
  if (!(n > 0.0)) throw ZeroVector("sphere_from_vector: zero-length translation");
  const Vec3 u = t / n;
  SphereAngles s;
  s.alpha = std::acos(std::clamp(u.x(), -1.0, 1.0));
  const double sin_alpha = std::hypot(u.y(), u.z());
  s.beta = sin_alpha < kSphereSingularEps ? 0.0 : wrap_half_open(std::atan2(u.z(), u.y()));
  return s;
}

inline Vec3 vector_from_sphere(const SphereAngles& s) {
  return Vec3(std::cos(s.alpha), std::sin(s.alpha) * std::cos(s.beta), std::sin(s.alpha) * std::sin(s.beta));
}

inline Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return r;
}

inline Mat3 rot_x(double a) {
  Mat3 r;
  r << 1.0, 0.0, 0.0, 0.0, std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a);
  return r;
}

inline Mat3 rot_z(double a) {
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a), 0.0, 0.0, 0.0, 1.0;
  return r;
}

inline Mat3 rotation_from_euler(const EulerAngles& e) { return rot_y(e.yaw) * rot_x(e.pitch) * rot_z(e.roll); }

// Inverse of rotation_from_euler without the gimbal-lock check: at
// |pitch| = pi/2 the yaw/roll split is not unique and the roll = 0
// convention is used. Intended for internal consumers that must not throw.
inline EulerAngles euler_from_rotation_any(const Mat3& R) {
  EulerAngles e;
  e.pitch = std::asin(std::clamp(-R(1, 2), -1.0, 1.0));
  const double cos_pitch = std::hypot(R(1, 0), R(1, 1));
  if (cos_pitch < kGimbalEps) {
    // yaw absorbs the coupled rotation, roll fixed to zero
    e.roll = 0.0;
    e.yaw = std::atan2(-R(2, 0), R(0, 0));
  } else {
    e.roll = std::atan2(R(1, 0), R(1, 1));
    e.yaw = std::atan2(R(0, 2), R(2, 2));
  }
  return e;
}

inline EulerAngles euler_from_rotation(const Mat3& R) {
  const double cos_pitch = std::hypot(R(1, 0), R(1, 1));
  if (cos_pitch < kGimbalEps) throw GimbalLock("euler_from_rotation: pitch within eps of +-pi/2");
  return euler_from_rotation_any(R);
}

// Representative of `reference` (mod 2pi, k in {-1, 0, 1}) closest to
// `target`. Ties prefer the unshifted reference.
inline double circular_nearest(double target, double reference) {
  double best = reference;
  double best_dist = std::abs(target - reference);
  for (const double k : {-1.0, 1.0}) {
    const double cand = reference + k * 2.0 * kPi;
    const double dist = std::abs(target - cand);
    if (dist < best_dist) {
      best = cand;
      best_dist = dist;
    }
  }
  return best;
}

// distance on the circle, in [0, pi]
inline double circular_distance(double a, double b) { return std::abs(wrap_half_open(a - b)); }

inline MotionParams motion_from_pose(const CameraPose& pose) {
  const EulerAngles e = euler_from_rotation_any(pose.rotation);
  const SphereAngles s = sphere_from_vector(pose.translation);
  return MotionParams{e.yaw, e.pitch, e.roll, s.alpha, s.beta};
}

inline CameraPose pose_from_motion(const MotionParams& m) {
  return CameraPose(rotation_from_euler({m.yaw, m.pitch, m.roll}), vector_from_sphere({m.alpha, m.beta}));
}

}  // namespace relpose
