#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <vector>

#include "relpose/errors.hpp"
#include "relpose/geometry.hpp"
#include "relpose/types.hpp"

// Five-point relative pose: the essential matrix is written as
// E = x*E1 + y*E2 + z*E3 + E4 over the nullspace of the 5x9 epipolar
// constraint matrix. The det(E) = 0 and trace constraints give ten cubic
// equations in (x, y, z); Gauss-Jordan elimination reduces them to a 3x3
// polynomial system in z whose determinant is a tenth-degree univariate
// polynomial. Roots come from the companion-matrix eigenvalues.

namespace relpose {
namespace fivept {

// Monomials of (x, y, z) up to total degree 3. The first ten have degree
// >= 2 in (x, y) and are eliminated; the last ten are grouped as
// x*(z^2, z, 1), y*(z^2, z, 1), (z^3, z^2, z, 1).
enum Monomial : int {
  kXXX = 0,
  kYYY = 1,
  kXXY = 2,
  kXYY = 3,
  kXXZ = 4,
  kXX = 5,
  kYYZ = 6,
  kYY = 7,
  kXYZ = 8,
  kXY = 9,
  kXZZ = 10,
  kXZ = 11,
  kX = 12,
  kYZZ = 13,
  kYZ = 14,
  kY = 15,
  kZZZ = 16,
  kZZ = 17,
  kZ = 18,
  kOne = 19,
};

using Poly = Eigen::Matrix<double, 20, 1>;

inline const std::array<std::array<int, 3>, 20>& monomial_exponents() {
  static const std::array<std::array<int, 3>, 20> exps = {{
      {3, 0, 0}, {0, 3, 0}, {2, 1, 0}, {1, 2, 0}, {2, 0, 1}, {2, 0, 0}, {0, 2, 1},
      {0, 2, 0}, {1, 1, 1}, {1, 1, 0}, {1, 0, 2}, {1, 0, 1}, {1, 0, 0}, {0, 1, 2},
      {0, 1, 1}, {0, 1, 0}, {0, 0, 3}, {0, 0, 2}, {0, 0, 1}, {0, 0, 0},
  }};
  return exps;
}

inline int monomial_index(int ex, int ey, int ez) {
  const auto& exps = monomial_exponents();
  for (int i = 0; i < 20; ++i)
    if (exps[i][0] == ex && exps[i][1] == ey && exps[i][2] == ez) return i;
  return -1;
}

// product of two polynomials whose result stays within total degree 3
inline Poly poly_mul(const Poly& a, const Poly& b) {
  const auto& exps = monomial_exponents();
  Poly out = Poly::Zero();
  for (int i = 0; i < 20; ++i) {
    if (a[i] == 0.0) continue;
    for (int j = 0; j < 20; ++j) {
      if (b[j] == 0.0) continue;
      const int ex = exps[i][0] + exps[j][0];
      const int ey = exps[i][1] + exps[j][1];
      const int ez = exps[i][2] + exps[j][2];
      const int k = monomial_index(ex, ey, ez);
      out[k] += a[i] * b[j];
    }
  }
  return out;
}

inline Poly linear_poly(double cx, double cy, double cz, double c1) {
  Poly p = Poly::Zero();
  p[kX] = cx;
  p[kY] = cy;
  p[kZ] = cz;
  p[kOne] = c1;
  return p;
}

// dense univariate polynomial helpers; coefficient k multiplies z^k
inline std::vector<double> uni_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

inline std::vector<double> uni_sub(std::vector<double> a, const std::vector<double>& b) {
  if (a.size() < b.size()) a.resize(b.size(), 0.0);
  for (size_t i = 0; i < b.size(); ++i) a[i] -= b[i];
  return a;
}

inline double poly_eval(const std::vector<double>& p, double z) {
  double v = 0.0;
  for (size_t k = p.size(); k-- > 0;) v = v * z + p[k];
  return v;
}

// Real roots of sum_k c[k] z^k: companion-matrix eigenvalues followed by a
// few Newton steps. The imaginary tolerance is deliberately loose; near-real
// spurious candidates are cheap and get rejected downstream by the essential
// invariants.
inline std::vector<double> real_roots(std::vector<double> coeffs, double imag_tol = 1e-2) {
  const double max_c = [&] {
    double m = 0.0;
    for (const double c : coeffs) m = std::max(m, std::abs(c));
    return m;
  }();
  if (max_c == 0.0) return {};
  while (coeffs.size() > 1 && std::abs(coeffs.back()) < 1e-13 * max_c) coeffs.pop_back();
  const int deg = static_cast<int>(coeffs.size()) - 1;
  if (deg < 1) return {};

  MatX companion = MatX::Zero(deg, deg);
  for (int i = 1; i < deg; ++i) companion(i, i - 1) = 1.0;
  for (int i = 0; i < deg; ++i) companion(i, deg - 1) = -coeffs[i] / coeffs[deg];

  std::vector<double> derivative(deg);
  for (int k = 1; k <= deg; ++k) derivative[k - 1] = k * coeffs[k];

  const Eigen::EigenSolver<MatX> eig(companion, false);
  std::vector<double> roots;
  for (int i = 0; i < deg; ++i) {
    const auto v = eig.eigenvalues()[i];
    if (std::abs(v.imag()) > imag_tol * (1.0 + std::abs(v.real()))) continue;
    double z = v.real();
    for (int it = 0; it < 8; ++it) {
      const double f = poly_eval(coeffs, z);
      const double df = poly_eval(derivative, z);
      if (df == 0.0) break;
      const double step = f / df;
      z -= step;
      if (std::abs(step) < 1e-14 * (1.0 + std::abs(z))) break;
    }
    roots.push_back(z);
  }
  return roots;
}

// A row of the eliminated system expressed as px(z)*x + py(z)*y + pc(z).
struct ZRow {
  std::vector<double> px;  // degree <= 3
  std::vector<double> py;  // degree <= 3
  std::vector<double> pc;  // degree <= 4
};

}  // namespace fivept

// Essential matrix candidates from exactly five correspondences.
inline std::vector<EssentialMatrix> essential_from_five(const CorrespondenceSet& minimal) {
  using namespace fivept;
  if (minimal.size() != 5) throw InsufficientCorrespondences("essential_from_five: exactly 5 correspondences required");

  // 5x9 epipolar constraint matrix over row-major vec(E)
  Eigen::Matrix<double, 5, 9> Q;
  for (int i = 0; i < 5; ++i) {
    const Vec3 p1 = minimal.x1h(i);
    const Vec3 p2 = minimal.x2h(i);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) Q(i, 3 * r + c) = p2[r] * p1[c];
  }

  const Eigen::JacobiSVD<Eigen::Matrix<double, 5, 9>> svd(Q, Eigen::ComputeFullV);
  const auto sv = svd.singularValues();
  if (sv[0] <= 0.0 || sv[4] < 1e-10 * sv[0])
    throw DegenerateConfiguration("essential_from_five: constraint matrix rank below 5");

  // Mix the nullspace basis with a fixed generic rotation so that no
  // structured configuration (e.g. pure axis-aligned translation) lands its
  // solution exactly at w = 0, outside the w = 1 affine chart used below.
  static const Eigen::Matrix4d mix = [] {
    Eigen::Matrix4d seedm;
    seedm << 0.814723686393179, 0.632359246225410, 0.957506835434298, 0.957166948242946,
        0.905791937075619, 0.097540404999410, 0.964888535199277, 0.485375648722841,
        0.126986816293506, 0.278498218867048, 0.157613081677548, 0.800280468888800,
        0.913375856139019, 0.546881519204984, 0.970592781760616, 0.141886338627215;
    return Eigen::Matrix4d(Eigen::HouseholderQR<Eigen::Matrix4d>(seedm).householderQ());
  }();

  std::array<Mat3, 4> basis;
  for (int b = 0; b < 4; ++b) {
    Eigen::Matrix<double, 9, 1> col = Eigen::Matrix<double, 9, 1>::Zero();
    for (int j = 0; j < 4; ++j) col += mix(j, b) * svd.matrixV().col(5 + j);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) basis[b](r, c) = col[3 * r + c];
  }

  // E(x, y, z) entries as linear polynomials (w = 1 on the last basis vector)
  std::array<std::array<Poly, 3>, 3> Ep;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      Ep[r][c] = linear_poly(basis[0](r, c), basis[1](r, c), basis[2](r, c), basis[3](r, c));

  Eigen::Matrix<double, 10, 20> M;
  int row = 0;

  // det(E) = 0
  Poly det = poly_mul(poly_mul(Ep[0][1], Ep[1][2]) - poly_mul(Ep[0][2], Ep[1][1]), Ep[2][0]);
  det += poly_mul(poly_mul(Ep[0][2], Ep[1][0]) - poly_mul(Ep[0][0], Ep[1][2]), Ep[2][1]);
  det += poly_mul(poly_mul(Ep[0][0], Ep[1][1]) - poly_mul(Ep[0][1], Ep[1][0]), Ep[2][2]);
  M.row(row++) = det.transpose();

  // E E^T E - 0.5 tr(E E^T) E = 0
  std::array<std::array<Poly, 3>, 3> EEt;
  for (int r = 0; r < 3; ++r)
    for (int c = r; c < 3; ++c) {
      EEt[r][c] = poly_mul(Ep[r][0], Ep[c][0]) + poly_mul(Ep[r][1], Ep[c][1]) + poly_mul(Ep[r][2], Ep[c][2]);
      if (c != r) EEt[c][r] = EEt[r][c];
    }
  const Poly half_trace = 0.5 * (EEt[0][0] + EEt[1][1] + EEt[2][2]);
  for (int r = 0; r < 3; ++r) EEt[r][r] -= half_trace;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      const Poly entry =
          poly_mul(EEt[r][0], Ep[0][c]) + poly_mul(EEt[r][1], Ep[1][c]) + poly_mul(EEt[r][2], Ep[2][c]);
      M.row(row++) = entry.transpose();
    }

  // eliminate the ten monomials of degree >= 2 in (x, y)
  const Eigen::Matrix<double, 10, 10> lhs = M.leftCols<10>();
  const Eigen::FullPivLU<Eigen::Matrix<double, 10, 10>> lu(lhs);
  if (!lu.isInvertible()) return {};
  const Eigen::Matrix<double, 10, 10> A = lu.solve(M.rightCols<10>());

  // expansion of an eliminated monomial over the trailing basis, as
  // coefficients grouped by x, y and the constant chain
  const auto expand = [&](int mono_row) {
    ZRow zr;
    const auto a = (-A.row(mono_row)).eval();
    zr.px = {a[kX - 10], a[kXZ - 10], a[kXZZ - 10]};
    zr.py = {a[kY - 10], a[kYZ - 10], a[kYZZ - 10]};
    zr.pc = {a[kOne - 10], a[kZ - 10], a[kZZ - 10], a[kZZZ - 10]};
    return zr;
  };
  const auto shift_z = [](std::vector<double> p) {
    p.insert(p.begin(), 0.0);
    return p;
  };

  // z * <m> - <m z> = 0 for m in {x^2, y^2, x y}
  std::array<ZRow, 3> B;
  const std::array<std::pair<int, int>, 3> pairs = {{{kXX, kXXZ}, {kYY, kYYZ}, {kXY, kXYZ}}};
  for (int i = 0; i < 3; ++i) {
    const ZRow m = expand(pairs[i].first);
    const ZRow mz = expand(pairs[i].second);
    B[i].px = uni_sub(shift_z(m.px), mz.px);
    B[i].py = uni_sub(shift_z(m.py), mz.py);
    B[i].pc = uni_sub(shift_z(m.pc), mz.pc);
  }

  // det of the 3x3 polynomial matrix -> degree-10 polynomial in z
  const auto minor2 = [](const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& c,
                         const std::vector<double>& d) { return uni_sub(uni_mul(a, d), uni_mul(b, c)); };
  std::vector<double> n10 = uni_mul(B[0].px, minor2(B[1].py, B[1].pc, B[2].py, B[2].pc));
  n10 = uni_sub(n10, uni_mul(B[0].py, minor2(B[1].px, B[1].pc, B[2].px, B[2].pc)));
  std::vector<double> last = uni_mul(B[0].pc, minor2(B[1].px, B[1].py, B[2].px, B[2].py));
  for (size_t i = 0; i < last.size(); ++i) {
    if (n10.size() <= i) n10.resize(i + 1, 0.0);
    n10[i] += last[i];
  }

  // evaluate the 20 monomials and their (x, y, z) partials at a point
  const auto monomials_at = [](double x, double y, double z, Eigen::Matrix<double, 20, 1>& mono,
                               Eigen::Matrix<double, 20, 3>* dmono) {
    const auto& exps = monomial_exponents();
    const auto power = [](double v, int e) { return e == 0 ? 1.0 : (e == 1 ? v : (e == 2 ? v * v : v * v * v)); };
    for (int k = 0; k < 20; ++k) {
      const int ex = exps[k][0], ey = exps[k][1], ez = exps[k][2];
      mono[k] = power(x, ex) * power(y, ey) * power(z, ez);
      if (dmono) {
        (*dmono)(k, 0) = ex == 0 ? 0.0 : ex * power(x, ex - 1) * power(y, ey) * power(z, ez);
        (*dmono)(k, 1) = ey == 0 ? 0.0 : ey * power(x, ex) * power(y, ey - 1) * power(z, ez);
        (*dmono)(k, 2) = ez == 0 ? 0.0 : ez * power(x, ex) * power(y, ey) * power(z, ez - 1);
      }
    }
  };

  std::vector<EssentialMatrix> out;
  for (const double z_root : real_roots(n10)) {
    const auto eval = [&](const std::vector<double>& p) { return poly_eval(p, z_root); };
    Mat3 Bz;
    for (int i = 0; i < 3; ++i) Bz.row(i) << eval(B[i].px), eval(B[i].py), eval(B[i].pc);
    const Eigen::JacobiSVD<Mat3> bsvd(Bz, Eigen::ComputeFullV);
    const Vec3 v = bsvd.matrixV().col(2);
    if (std::abs(v[2]) < 1e-10 * v.norm()) continue;
    double x = v[0] / v[2];
    double y = v[1] / v[2];
    double z = z_root;

    // Gauss-Newton on the ten cubic constraints; unlike the determinant
    // polynomial this stays well conditioned at near-double roots
    for (int it = 0; it < 5; ++it) {
      Eigen::Matrix<double, 20, 1> mono;
      Eigen::Matrix<double, 20, 3> dmono;
      monomials_at(x, y, z, mono, &dmono);
      const Eigen::Matrix<double, 10, 1> residual = M * mono;
      if (residual.cwiseAbs().maxCoeff() < 1e-15) break;
      const Eigen::Matrix<double, 10, 3> jac = M * dmono;
      const Vec3 step = jac.colPivHouseholderQr().solve(-residual);
      if (!step.allFinite()) break;
      x += step[0];
      y += step[1];
      z += step[2];
      if (step.cwiseAbs().maxCoeff() < 1e-14 * (1.0 + std::abs(x) + std::abs(y) + std::abs(z))) break;
    }

    const Mat3 Em = x * basis[0] + y * basis[1] + z * basis[2] + basis[3];
    if (!(Em.norm() > 0.0) || !Em.allFinite()) continue;
    EssentialMatrix E(Em);

    double max_residual = 0.0;
    for (int i = 0; i < 5; ++i) max_residual = std::max(max_residual, std::abs(minimal.x2h(i).dot(E.matrix * minimal.x1h(i))));
    if (max_residual > 1e-8) continue;
    if (!E.satisfies_invariants()) continue;
    out.push_back(E);
  }
  return out;
}

}  // namespace relpose
