#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <limits>

namespace cansys {

using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;
using Cplx = std::complex<double>;
using Mat2c = Eigen::Matrix2cd;

// Symplectic J = [[0,-1],[1,0]]; J^{-1} = -J.
inline Mat2 symp_j() {
  Mat2 j;
  j << 0.0, -1.0, 1.0, 0.0;
  return j;
}

// Unit vector xi_phi = (cos phi, sin phi)^T.
inline Vec2 xi(double phi) { return Vec2(std::cos(phi), std::sin(phi)); }

// Rank-one projector xi_phi xi_phi^T.
inline Mat2 rank_one(double phi) {
  const Vec2 v = xi(phi);
  return v * v.transpose();
}

inline double log1p_exp(double x) {
  // log(1 + e^x), safe for large |x|.
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// A 2x2 matrix stored as e^{sigma} * m with max|m_ij| kept near 1.
// Supports products of very long factor chains without overflow.
template <class Scalar>
struct ScaledMatrix2 {
  using Mat = Eigen::Matrix<Scalar, 2, 2>;
  Mat m = Mat::Identity();
  double sigma = 0.0;

  static ScaledMatrix2 identity() { return {}; }

  void renormalise() {
    const double s = m.cwiseAbs().maxCoeff();
    if (s == 0.0) {
      sigma = -std::numeric_limits<double>::infinity();
      return;
    }
    if (s > 2.0 || s < 0.5) {
      m /= s;
      sigma += std::log(s);
    }
  }

  ScaledMatrix2 operator*(const ScaledMatrix2& o) const {
    ScaledMatrix2 r;
    r.m = m * o.m;
    r.sigma = sigma + o.sigma;
    r.renormalise();
    return r;
  }

  // e^{sigma_delta} adjustment of a plain matrix into this scale frame.
  static ScaledMatrix2 from_plain(const Mat& a) {
    ScaledMatrix2 r;
    r.m = a;
    r.renormalise();
    return r;
  }

  // Sum respecting scales: e^{s1}A + e^{s2}B.
  static ScaledMatrix2 add(const ScaledMatrix2& a, const ScaledMatrix2& b) {
    ScaledMatrix2 r;
    const double s = std::max(a.sigma, b.sigma);
    if (!std::isfinite(s)) return a.sigma > b.sigma ? a : b;
    r.m = a.m * std::exp(a.sigma - s) + b.m * std::exp(b.sigma - s);
    r.sigma = s;
    r.renormalise();
    return r;
  }

  ScaledMatrix2 scalar_mul(Scalar c) const {
    ScaledMatrix2 r = *this;
    r.m *= c;
    r.renormalise();
    return r;
  }

  // Represented value; overflows for large sigma, use logs instead.
  Mat plain() const { return m * std::exp(sigma); }

  double log_abs(int i, int j) const {
    const double a = std::abs(m(i, j));
    return a == 0.0 ? -std::numeric_limits<double>::infinity() : sigma + std::log(a);
  }

  // log of spectral-norm upper proxy: sigma + log max-abs-entry + log 2.
  double log_norm_upper() const {
    const double s = m.cwiseAbs().maxCoeff();
    return s == 0.0 ? -std::numeric_limits<double>::infinity()
                    : sigma + std::log(s) + std::log(2.0);
  }

  // log of the Frobenius norm (exact, scale-safe).
  double log_norm() const {
    const double s = m.norm();
    return s == 0.0 ? -std::numeric_limits<double>::infinity() : sigma + std::log(s);
  }

  // det of the represented matrix = e^{2 sigma} det m.
  Scalar det_mantissa() const { return m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0); }
};

using SMat2d = ScaledMatrix2<double>;
using SMat2c = ScaledMatrix2<Cplx>;

// (cos(mu), sin(mu)) scaled by e^{-s}, s = |Im mu|, to avoid overflow for
// large imaginary arguments: cos mu = e^{s} * c, sin mu = e^{s} * sn.
inline void scaled_cos_sin(Cplx mu, double& s, Cplx& c, Cplx& sn) {
  s = std::abs(mu.imag());
  const Cplx iu(0.0, 1.0);
  // e^{i mu - s} and e^{-i mu - s}: one has modulus <= 1, the other <= 1 too
  // since s = |Im mu| dominates both exponents' real parts.
  const Cplx ep = std::exp(iu * mu - s);
  const Cplx em = std::exp(-iu * mu - s);
  c = 0.5 * (ep + em);
  sn = (ep - em) / (2.0 * iu);
}

inline void scaled_cos_sin(double mu, double& s, double& c, double& sn) {
  s = 0.0;
  c = std::cos(mu);
  sn = std::sin(mu);
}

// sinc(mu) = sin(mu)/mu with the removable singularity filled in.
template <class S>
S sinc(S mu) {
  if (std::abs(mu) < 1e-4) {
    const S m2 = mu * mu;
    return S(1.0) - m2 / 6.0 + m2 * m2 / 120.0;
  }
  return std::sin(mu) / mu;
}

}  // namespace cansys
