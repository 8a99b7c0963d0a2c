#include "cansys/transfer.hpp"

#include <cmath>
#include <stdexcept>

namespace cansys {

namespace {

template <class S>
ScaledMatrix2<S> cell_exp(const Mat2& om, S z) {
  using SM = ScaledMatrix2<S>;
  const double d = det_psd(om);
  const S mu = z * std::sqrt(d);
  Mat2 omj = om * symp_j();
  SM r;
  if (std::abs(mu) < 1e-4) {
    const S c = std::cos(mu);
    const S f = sinc(mu) * (-z);
    r.m(0, 0) = c + f * omj(0, 0);
    r.m(0, 1) = f * omj(0, 1);
    r.m(1, 0) = f * omj(1, 0);
    r.m(1, 1) = c + f * omj(1, 1);
    r.sigma = 0.0;
  } else {
    double s;
    S c, sn;
    scaled_cos_sin(mu, s, c, sn);
    const S f = (sn / mu) * (-z);
    r.m(0, 0) = c + f * omj(0, 0);
    r.m(0, 1) = f * omj(0, 1);
    r.m(1, 0) = f * omj(1, 0);
    r.m(1, 1) = c + f * omj(1, 1);
    r.sigma = s;
  }
  r.renormalise();
  return r;
}

// Product of cell exponentials over [i, j), collapsing ranges whose split
// commutator stays inside the local error budget. The budget is distributed
// proportionally to trace mass so the total multiplicative error stays below
// opt.tol.
template <class S>
ScaledMatrix2<S> transfer_range(const Piecewise& pw, std::size_t i,
                                std::size_t j, S z, double budget_rate) {
  using SM = ScaledMatrix2<S>;
  if (i >= j) return SM::identity();
  if (j - i == 1) return cell_exp(pw.cell(i), z);
  const Mat2 om = pw.range_omega(i, j);
  const double mass = om(0, 0) + om(1, 1);
  if (mass <= 0) return SM::identity();
  const double az = std::abs(z);
  const std::size_t mid = i + (j - i) / 2;
  const Mat2 jm = symp_j();
  auto comm_err = [&](std::size_t p) {
    const Mat2 a = pw.range_omega(i, p);
    const Mat2 b = pw.range_omega(p, j);
    const Mat2 c = a * jm * b - b * jm * a;
    return 0.5 * az * az * c.cwiseAbs().maxCoeff();
  };
  double err = comm_err(mid);
  if (j - i >= 4) err = std::max(err, comm_err(i + (j - i) / 4));
  err *= 1.0 + az * mass;
  if (err <= budget_rate * mass) return cell_exp(om, z);
  return transfer_range(pw, i, mid, z, budget_rate) *
         transfer_range(pw, mid, j, z, budget_rate);
}

template <class S>
ScaledMatrix2<S> monodromy_impl(const HamiltonianDesc& h, S z,
                                const TransferOptions& opt) {
  const Piecewise& pw = h.pw();
  const double total = pw.total_trace();
  if (total <= 0) return ScaledMatrix2<S>::identity();
  return transfer_range(pw, 0, pw.cells(), z, opt.tol / total);
}

template <class S>
ScaledMatrix2<S> fundamental_impl(const HamiltonianDesc& h, double t, S z,
                                  const TransferOptions& opt) {
  const Piecewise& pw = h.pw();
  if (t <= pw.t0) return ScaledMatrix2<S>::identity();
  if (t >= pw.t1) return monodromy_impl(h, z, opt);
  const double total = pw.total_trace();
  if (total <= 0) return ScaledMatrix2<S>::identity();
  const std::size_t k = pw.locate(t);
  const double w = pw.cell_width(k);
  const double frac = w > 0 ? (t - pw.kn[k]) / w : 0.0;
  auto full = transfer_range(pw, 0, k, z, opt.tol / total);
  if (frac <= 0) return full;
  Mat2 part = frac * pw.cell(k);
  return full * cell_exp(part, z);
}

}  // namespace

SMat2c interval_exp(const Mat2& om, Cplx z) { return cell_exp(om, z); }
SMat2d interval_exp(const Mat2& om, double z) { return cell_exp(om, z); }

SMat2c monodromy(const HamiltonianDesc& h, Cplx z, const TransferOptions& opt) {
  return monodromy_impl(h, z, opt);
}
SMat2d monodromy(const HamiltonianDesc& h, double z, const TransferOptions& opt) {
  return monodromy_impl(h, z, opt);
}

SMat2c fundamental_solution(const HamiltonianDesc& h, double t, Cplx z,
                            const TransferOptions& opt) {
  return fundamental_impl(h, t, z, opt);
}
SMat2d fundamental_solution(const HamiltonianDesc& h, double t, double z,
                            const TransferOptions& opt) {
  return fundamental_impl(h, t, z, opt);
}

double j_inner_defect(const Mat2c& w, Cplx z) {
  const Cplx denom = z - std::conj(z);
  if (std::abs(denom) == 0.0)
    throw std::invalid_argument("j_inner_defect needs Im z != 0");
  Mat2c jc = symp_j().cast<Cplx>();
  Mat2c k = (w * jc * w.adjoint() - jc) / denom;
  k = 0.5 * (k + k.adjoint().eval());
  Eigen::SelfAdjointEigenSolver<Mat2c> es(k);
  return es.eigenvalues().minCoeff();
}

double j_unitary_defect(const Mat2& w) {
  const Mat2 jm = symp_j();
  return (w * jm * w.transpose() - jm).cwiseAbs().maxCoeff();
}

WeylDisk weyl_disk(const HamiltonianDesc& h, double t, Cplx z,
                   const TransferOptions& opt) {
  SMat2c w = fundamental_solution(h, t, z, opt);
  const Cplx w11 = w.m(0, 0), w12 = w.m(0, 1), w21 = w.m(1, 0), w22 = w.m(1, 1);
  const double scale = w.m.cwiseAbs().maxCoeff();
  WeylDisk disk;
  auto moebius = [&](Cplx num, Cplx den, bool& ok) -> Cplx {
    if (std::abs(den) < 1e-14 * scale) {
      ok = false;
      return {0, 0};
    }
    ok = true;
    return num / den;
  };
  bool ok0, okinf, ok1, okp;
  const Cplx p0 = moebius(w12, w22, ok0);
  const Cplx pi = moebius(w11, w21, okinf);
  const Cplx p1 = moebius(w11 + w12, w21 + w22, ok1);
  const Cplx probe = moebius(w11 * Cplx(0, 1) + w12, w21 * Cplx(0, 1) + w22, okp);
  if (!ok0 || !okinf || !ok1 || !okp) {
    disk.unbounded = true;
    disk.center = okp ? probe : Cplx(0, 1);
    disk.radius = std::numeric_limits<double>::infinity();
    return disk;
  }
  // Circle through the three boundary images.
  Eigen::Matrix2d A;
  Eigen::Vector2d rhs;
  A << 2 * (pi - p0).real(), 2 * (pi - p0).imag(), 2 * (p1 - p0).real(),
      2 * (p1 - p0).imag();
  rhs << std::norm(pi) - std::norm(p0), std::norm(p1) - std::norm(p0);
  const double spread = std::max({std::abs(pi - p0), std::abs(p1 - p0),
                                  std::abs(pi - p1)});
  if (std::abs(A.determinant()) < 1e-13 * spread * spread || spread == 0.0) {
    disk.unbounded = true;
    disk.center = probe;
    disk.radius = std::numeric_limits<double>::infinity();
    return disk;
  }
  Eigen::Vector2d c = A.colPivHouseholderQr().solve(rhs);
  disk.center = Cplx(c[0], c[1]);
  disk.radius = std::abs(disk.center - p0);
  if (std::abs(probe - disk.center) > disk.radius * (1 + 1e-9))
    disk.unbounded = true;  // the half-plane maps to the circle's exterior
  return disk;
}

WeylDisk weyl_coefficient(const HamiltonianDesc& h, Cplx z,
                          const TransferOptions& opt) {
  return weyl_disk(h, h.pw().t1, z, opt);
}

double log_abs_w22_ir(const HamiltonianDesc& h, double r,
                      const TransferOptions& opt) {
  return monodromy(h, Cplx(0.0, r), opt).log_abs(1, 1);
}

double log_max_on_circle(const HamiltonianDesc& h, double r, int angles,
                         const TransferOptions& opt) {
  double best = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= angles; ++k) {
    const double th = M_PI * k / angles;
    const Cplx z = r * Cplx(std::cos(th), std::sin(th));
    best = std::max(best, monodromy(h, z, opt).log_norm());
  }
  return best;
}

}  // namespace cansys
