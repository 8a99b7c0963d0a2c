#include "cansys/growth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cansys/quadrature.hpp"
#include "cansys/transfer.hpp"

namespace cansys {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double det_between(const Piecewise& m, double lo, double hi) {
  return det_psd(m.omega(lo, hi));
}

// Solve det Omega(s, t) = target for t in (s, b]; the determinant is
// continuous and nondecreasing in t, so bisection applies. Assumes
// det(s, b) >= target.
double solve_det_forward(const Piecewise& m, double s, double b,
                         double target) {
  double lo = s, hi = b;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (det_between(m, s, mid) < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-13 * (b - s) + 1e-300) break;
  }
  return 0.5 * (lo + hi);
}

// Solve det Omega(s, t) = target for s in [a, t); decreasing in s.
double solve_det_backward(const Piecewise& m, double a, double t,
                          double target) {
  double lo = a, hi = t;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (det_between(m, mid, t) > target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-13 * (t - a) + 1e-300) break;
  }
  return 0.5 * (lo + hi);
}

double quad_form(const Mat2& om, double psi) {
  const double c = std::cos(psi), s = std::sin(psi);
  return om(0, 0) * c * c + om(1, 1) * s * s + 2.0 * om(0, 1) * s * c;
}

double top_half_slope(const std::vector<double>& xs,
                      const std::vector<double>& ys) {
  if (xs.size() < 3) return 0.0;
  const std::size_t n0 = xs.size() / 2;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = n0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
    ++n;
  }
  const double d = n * sxx - sx * sx;
  return d > 0 ? (n * sxy - sx * sy) / d : 0.0;
}

// Least squares for y = a + rho*x + b*log(x); returns rho. The log(x)
// column soaks up slowly varying prefactors so rho tracks the pure power.
double detrended_slope(const std::vector<double>& xs,
                       const std::vector<double>& ys) {
  std::vector<double> x, y;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] > 0.5) {
      x.push_back(xs[i]);
      y.push_back(ys[i]);
    }
  }
  if (x.size() < 6) return top_half_slope(xs, ys);
  double m[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  double rhs[3] = {0, 0, 0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double col[3] = {1.0, x[i], std::log(x[i])};
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) m[a][b] += col[a] * col[b];
      rhs[a] += col[a] * y[i];
    }
  }
  // Gaussian elimination with partial pivoting on the 3x3 system.
  int idx[3] = {0, 1, 2};
  for (int c = 0; c < 3; ++c) {
    int piv = c;
    for (int rrow = c + 1; rrow < 3; ++rrow) {
      if (std::abs(m[idx[rrow]][c]) > std::abs(m[idx[piv]][c])) piv = rrow;
    }
    std::swap(idx[c], idx[piv]);
    const double diag = m[idx[c]][c];
    if (std::abs(diag) < 1e-14) return top_half_slope(xs, ys);
    for (int rrow = c + 1; rrow < 3; ++rrow) {
      const double f = m[idx[rrow]][c] / diag;
      for (int cc = c; cc < 3; ++cc) m[idx[rrow]][cc] -= f * m[idx[c]][cc];
      rhs[idx[rrow]] -= f * rhs[idx[c]];
    }
  }
  double sol[3];
  for (int c = 2; c >= 0; --c) {
    double acc = rhs[idx[c]];
    for (int cc = c + 1; cc < 3; ++cc) acc -= m[idx[c]][cc] * sol[cc];
    sol[c] = acc / m[idx[c]][c];
  }
  return sol[1];
}

}  // namespace

// ---------------------------------------------------------------------------
// Determinant equipartition.
// ---------------------------------------------------------------------------
KappaPartition kappa(const HamiltonianDesc& h, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("kappa: radius must be positive");
  const Piecewise& m = h.pw();
  const double a = m.kn.front(), b = m.kn.back();
  const double target = 1.0 / (r * r);
  KappaPartition part;
  part.r = r;
  part.points.push_back(a);
  const double cap = kappa_segment_cap(h, r) + 8.0;
  double s = a;
  while (det_between(m, s, b) > target) {
    const double t = solve_det_forward(m, s, b, target);
    if (!(t > s)) break;  // position resolution exhausted
    part.points.push_back(t);
    s = t;
    if (static_cast<double>(part.points.size()) > cap) break;
  }
  part.points.push_back(b);
  return part;
}

double kappa_segment_cap(const HamiltonianDesc& h, double r) {
  return std::floor(r * std::sqrt(det_psd(h.pw().total()))) + 1.0;
}

// ---------------------------------------------------------------------------
// Two-sided growth check.
// ---------------------------------------------------------------------------
SandwichReport kappa_sandwich(const HamiltonianDesc& h,
                              const std::vector<double>& r_grid) {
  const double tr = h.pw().total_trace();
  SandwichReport rep;
  const double logp_tr = std::max(0.0, std::log(std::max(tr, 1e-300)));
  rep.gamma = logp_tr + 3.0 + 2.0 * std::log(2.0);
  rep.gamma_prime = logp_tr + std::log(2.0);
  for (double r : r_grid) {
    SandwichRow row;
    row.r = r;
    row.kappa_r = kappa(h, r).kappa();
    const double r_red = r > std::exp(1.5) ? r / std::log(r) : r;
    row.kappa_r_over_logr = kappa(h, r_red).kappa();
    row.log_abs_w22_ir = log_abs_w22_ir(h, r);
    row.log_max = std::max(log_max_on_circle(h, r, 8), row.log_abs_w22_ir);
    const double lr = std::log(std::max(r, 1.0));
    row.upper_bound =
        row.kappa_r_over_logr * (4.0 * lr + rep.gamma) + lr + rep.gamma_prime;
    row.upper_ok = row.log_max <= row.upper_bound * (1.0 + 1e-12) + 1e-9;
    if (!row.upper_ok) rep.upper_violations = true;
    rep.rows.push_back(row);
  }
  std::vector<double> xs, yk, yw, xw;
  for (const auto& row : rep.rows) {
    if (row.r <= 1.0) continue;
    if (row.kappa_r > 0) {
      xs.push_back(std::log(row.r));
      yk.push_back(std::log(static_cast<double>(row.kappa_r)));
    }
    if (row.log_abs_w22_ir > 0.0) {
      xw.push_back(std::log(row.r));
      yw.push_back(std::log(row.log_abs_w22_ir));
    }
  }
  rep.kappa_exponent = top_half_slope(xs, yk);
  rep.logw_exponent = top_half_slope(xw, yw);
  rep.kappa_exponent_detrended = detrended_slope(xs, yk);
  return rep;
}

// ---------------------------------------------------------------------------
// Compatible pair.
// ---------------------------------------------------------------------------
CompatiblePair::CompatiblePair(std::shared_ptr<const Piecewise> mesh, double r0,
                               double c_minus, double c_plus)
    : mesh_(std::move(mesh)), r0_(r0), c_minus_(c_minus), c_plus_(c_plus) {
  if (!mesh_) throw std::invalid_argument("compatible pair: empty mesh");
  if (!(c_minus_ > 0.0) || !(c_plus_ >= c_minus_))
    throw std::invalid_argument("compatible pair: need 0 < c- <= c+");
  det_total_ = det_psd(mesh_->total());
}

bool CompatiblePair::valid_at(double r) const {
  if (!(r > r0_) || !(r > 0.0)) return false;
  const double g = std::sqrt(c_minus_ * c_plus_);
  return det_total_ >= g / (r * r);
}

double CompatiblePair::t_hat(double r) const {
  if (!valid_at(r))
    throw std::domain_error("compatible pair: radius below validity range");
  const double g = std::sqrt(c_minus_ * c_plus_) / (r * r);
  return solve_det_forward(*mesh_, mesh_->kn.front(), mesh_->kn.back(), g);
}

double CompatiblePair::s_hat(double t, double r) const {
  if (!valid_at(r))
    throw std::domain_error("compatible pair: radius below validity range");
  const double g = std::sqrt(c_minus_ * c_plus_) / (r * r);
  const Piecewise& m = *mesh_;
  if (det_between(m, m.kn.front(), t) <= g) return m.kn.front();
  return solve_det_backward(m, m.kn.front(), t, g);
}

CompatiblePair compatible_pair(const HamiltonianDesc& h, double r0,
                               double c_minus, double c_plus) {
  return CompatiblePair(h.mesh, r0, c_minus, c_plus);
}

// ---------------------------------------------------------------------------
// Counting kernel.
// ---------------------------------------------------------------------------
KernelIntegral k_kernel_integral(const HamiltonianDesc& h, double r,
                                 const CompatiblePair& pair) {
  const Piecewise& m = h.pw();
  KernelIntegral out;
  out.r = r;
  out.t_hat = pair.t_hat(r);
  const double q = pair.c_plus() / (r * r);

  // First summand: w2(a,t) h1(t) / (q + w3(a,t)^2) on [a, t_hat). Within a
  // cell both w2 and w3 are affine in t, so the antiderivative is explicit
  // (arctan + log). h1 dt integrates to the cell share of e1.
  const std::size_t k_hat = m.locate(out.t_hat);
  double first = 0.0;
  const double sq = std::sqrt(q);
  for (std::size_t k = 0; k <= k_hat && k < m.cells(); ++k) {
    const double w = m.cell_width(k);
    if (w <= 0.0 || m.e1[k] <= 0.0) continue;
    double fmax = 1.0;
    if (k == k_hat) {
      fmax = (out.t_hat - m.kn[k]) / w;
      if (fmax <= 0.0) break;
      fmax = std::min(fmax, 1.0);
    }
    const double A = m.c2[k], B = m.e2[k], C = m.c3[k], D = m.e3[k];
    double cellint;
    if (std::abs(D) > 1e-12 * (std::abs(C) + sq) + 1e-300) {
      const double v0 = C, v1 = C + D * fmax;
      const double lin = (A - B * C / D) / sq *
                         (std::atan(v1 / sq) - std::atan(v0 / sq));
      const double logpart =
          0.5 * (B / D) * std::log((q + v1 * v1) / (q + v0 * v0));
      cellint = (lin + logpart) / D;
    } else {
      const double vm = C + 0.5 * D * fmax;
      cellint = (A * fmax + 0.5 * B * fmax * fmax) / (q + vm * vm);
    }
    first += m.e1[k] * std::max(cellint, 0.0);
  }
  out.first = first;

  // Second summand: h1(t) / w1(s_hat(t,r), t) on [t_hat, b). The factor
  // 1/w1 varies on the determinant-window scale, so it is sampled once per
  // block of cells while the h1 mass is accumulated exactly.
  const std::size_t M = m.cells();
  std::size_t k0 = k_hat;
  double second = 0.0;
  if (out.t_hat < m.kn.back()) {
    const std::size_t stride = std::max<std::size_t>(1, (M - k0) / 2048);
    for (std::size_t k = k0; k < M; k += stride) {
      const std::size_t ke = std::min(k + stride, M);
      const double ta = std::max(m.kn[k], out.t_hat);
      const double tb = m.kn[ke];
      if (tb <= ta) continue;
      double tm = m.kn[k + (ke - k) / 2];
      tm = std::min(std::max(tm, ta), tb);
      if (tm <= ta) tm = 0.5 * (ta + tb);
      const double sh = pair.s_hat(tm, r);
      const double w1 = m.omega(sh, tm)(0, 0);
      if (!(w1 > 0.0)) continue;
      const double mass_h1 = m.omega(ta, tb)(0, 0);
      second += mass_h1 / w1;
    }
  }
  out.second = second;
  return out;
}

// ---------------------------------------------------------------------------
// Discretisation bound for rotating data.
// ---------------------------------------------------------------------------
RotationApproxBound romanov1_bound(const HamiltonianDesc& h,
                                   const RotationApproxParams& p, double r) {
  const std::size_t N = p.psi.size();
  if (N == 0 || p.y.size() != N + 1 || p.a.size() != N)
    throw std::invalid_argument("romanov1_bound: inconsistent parameter sizes");
  for (std::size_t j = 0; j + 1 < p.y.size(); ++j)
    if (!(p.y[j] < p.y[j + 1]))
      throw std::invalid_argument("romanov1_bound: partition must increase");
  for (double aj : p.a)
    if (!(aj > 0.0))
      throw std::invalid_argument("romanov1_bound: distortions must be positive");

  const Piecewise& m = h.pw();
  RotationApproxBound out;
  out.r = r;
  for (std::size_t j = 0; j < N; ++j) {
    const Mat2 om = m.omega(p.y[j], p.y[j + 1]);
    const double tr = om(0, 0) + om(1, 1);
    double ic = quad_form(om, p.psi[j]);
    ic = std::min(std::max(ic, 0.0), std::max(tr, 0.0));
    const double is = std::max(tr - ic, 0.0);
    out.a1 += p.a[j] * p.a[j] * ic;
    out.a2 += is / (p.a[j] * p.a[j]);
  }
  for (std::size_t j = 0; j + 1 < N; ++j) {
    const double ratio = std::max(p.a[j] / p.a[j + 1], p.a[j + 1] / p.a[j]);
    const double d = p.psi[j] - p.psi[j + 1];
    const double arg = ratio * std::abs(std::cos(d)) +
                       std::abs(std::sin(d)) / (p.a[j] * p.a[j + 1]);
    out.a3 += std::log(std::max(arg, 1e-300));
  }
  out.a4 = -std::log(p.a.front()) - std::log(p.a.back());
  return out;
}

RotationApproxParams romanov1_auto_params(const HamiltonianDesc& h, double r) {
  const double r_red = r > std::exp(1.5) ? r / std::log(r) : r;
  const KappaPartition part = kappa(h, r_red);
  const Piecewise& m = h.pw();
  RotationApproxParams p;
  p.y = part.points;
  for (std::size_t j = 0; j + 1 < p.y.size(); ++j) {
    const Mat2 om = m.omega(p.y[j], p.y[j + 1]);
    const double psi =
        0.5 * std::atan2(2.0 * om(0, 1), om(0, 0) - om(1, 1));
    const double tr = om(0, 0) + om(1, 1);
    const double disc = std::hypot(om(0, 0) - om(1, 1), 2.0 * om(0, 1));
    const double lam1 = 0.5 * (tr + disc);
    const double lam2 = std::max(0.5 * (tr - disc), 0.0);
    double aj = lam1 > 0.0 ? std::pow(std::max(lam2 / lam1, 1e-280), 0.25) : 1.0;
    aj = std::min(std::max(aj, 1e-70), 1.0);
    p.psi.push_back(psi);
    p.a.push_back(aj);
  }
  return p;
}

RotationApproxParams romanov1_optimise(const HamiltonianDesc& h,
                                       RotationApproxParams p, double r,
                                       int sweeps) {
  const std::size_t N = p.psi.size();
  if (N == 0 || p.y.size() != N + 1 || p.a.size() != N)
    throw std::invalid_argument("romanov1_optimise: inconsistent sizes");
  const Piecewise& m = h.pw();
  std::vector<Mat2> segs(N);
  for (std::size_t j = 0; j < N; ++j) segs[j] = m.omega(p.y[j], p.y[j + 1]);

  auto seg_cost = [&](std::size_t j, double psi, double aj) {
    const double tr = segs[j](0, 0) + segs[j](1, 1);
    double ic = quad_form(segs[j], psi);
    ic = std::min(std::max(ic, 0.0), std::max(tr, 0.0));
    return r * (aj * aj * ic + (tr - ic) / (aj * aj));
  };
  auto junction = [&](double psi_l, double a_l, double psi_r, double a_r) {
    const double ratio = std::max(a_l / a_r, a_r / a_l);
    const double d = psi_l - psi_r;
    const double arg = ratio * std::abs(std::cos(d)) +
                       std::abs(std::sin(d)) / (a_l * a_r);
    return std::log(std::max(arg, 1e-300));
  };
  auto local_cost = [&](std::size_t j, double psi, double aj) {
    double c = seg_cost(j, psi, aj);
    if (j > 0) c += junction(p.psi[j - 1], p.a[j - 1], psi, aj);
    if (j + 1 < N) c += junction(psi, aj, p.psi[j + 1], p.a[j + 1]);
    if (j == 0) c += -std::log(aj);
    if (j + 1 == N) c += -std::log(aj);
    return c;
  };

  const double psi_steps[] = {0.0, 0.15, -0.15, 0.05, -0.05, 0.015, -0.015};
  const double a_mults[] = {1.0, 1.6, 1.0 / 1.6, 1.15, 1.0 / 1.15};
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    for (std::size_t j = 0; j < N; ++j) {
      double best_psi = p.psi[j], best_a = p.a[j];
      double best = local_cost(j, best_psi, best_a);
      for (double dpsi : psi_steps) {
        for (double am : a_mults) {
          const double psi = p.psi[j] + dpsi;
          const double aj = std::min(std::max(p.a[j] * am, 1e-70), 1.0);
          const double c = local_cost(j, psi, aj);
          if (c < best) {
            best = c;
            best_psi = psi;
            best_a = aj;
          }
        }
      }
      p.psi[j] = best_psi;
      p.a[j] = best_a;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Covering sums.
// ---------------------------------------------------------------------------
CoveringSum romanov2_covering_sum(const HamiltonianDesc& h, int n_segments) {
  if (n_segments < 1)
    throw std::invalid_argument("romanov2_covering_sum: need n >= 1");
  const Piecewise& m = h.pw();
  const double det_total = det_psd(m.total());
  if (det_total <= 0.0 && n_segments > 1)
    throw FiniteRankError(
        "romanov2_covering_sum: determinant mass is zero, only one segment "
        "exists");

  auto kap = [&](double r) { return kappa(h, r).kappa(); };
  double lo = 0.5 / std::sqrt(std::max(det_total, 1e-300));  // kappa = 1 here
  if (kap(lo) >= n_segments && n_segments > 1) lo = 1e-9 * lo;
  double hi = lo;
  int k = kap(hi);
  int guard = 0;
  while (k < n_segments && hi < 1e18 && guard++ < 80) {
    hi *= 2.0;
    k = kap(hi);
  }
  if (k < n_segments)
    throw FiniteRankError(
        "romanov2_covering_sum: requested segment count unreachable (finite "
        "determinant resolution)");
  // Smallest radius achieving the requested count, up to log-bisection
  // resolution; plateaus make kappa skip values, so record what was achieved.
  for (int it = 0; it < 90; ++it) {
    const double mid = std::sqrt(lo * hi);
    if (kap(mid) >= n_segments)
      hi = mid;
    else
      lo = mid;
    if (hi / lo < 1.0 + 1e-13) break;
  }
  CoveringSum out;
  out.requested = n_segments;
  out.r = hi;
  const KappaPartition part = kappa(h, hi);
  out.achieved = part.kappa();
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < part.points.size(); ++j)
    s += std::sqrt(det_psd(m.omega(part.points[j], part.points[j + 1])));
  out.sum = s;
  return out;
}

// ---------------------------------------------------------------------------
// Region classification for regularly varying envelopes.
// ---------------------------------------------------------------------------
std::string to_string(RVRegion r) {
  switch (r) {
    case RVRegion::I:
      return "I";
    case RVRegion::II:
      return "II";
    case RVRegion::III:
      return "III";
    case RVRegion::IV:
      return "IV";
  }
  return "?";
}

RegionReport classify_rv_regions(const ComparisonFunction& d_l,
                                 const ComparisonFunction& d_phi) {
  const double dl = -d_l.alpha;
  double dp = -d_phi.alpha;
  if (dl < 1.0 - 1e-12)
    throw std::invalid_argument(
        "classify_rv_regions: length envelope must decay at least like 1/t");
  if (dp < -1e-12)
    throw std::invalid_argument(
        "classify_rv_regions: angle envelope must be nonincreasing");
  dp = std::max(dp, 0.0);
  const double delta = dl + dp;

  RegionReport rep;
  rep.delta_l = dl;
  rep.delta_phi = dp;
  if (delta > 2.0 + 1e-12)
    rep.region = RVRegion::I;
  else if (delta < 2.0 - 1e-12)
    rep.region = RVRegion::II;
  else if (std::abs(dl - 1.0) < 1e-12 && std::abs(dp - 1.0) < 1e-12)
    rep.region = RVRegion::IV;
  else
    rep.region = RVRegion::III;

  rep.lower_fn = asymptotic_inverse(cf_pow(cf_mul(d_l, d_phi), -1.0));
  rep.order_lower = 1.0 / delta;

  ComparisonFunction t_lin;
  t_lin.alpha = 1.0;
  const ComparisonFunction s = cf_pow(cf_mul(d_l, d_phi), 0.5);

  if (cf_series_converges(s)) {
    // Tail integral of sqrt(d_l d_phi) converges: bound
    // sqrt(r) * int_{k(r)}^inf sqrt(d_l d_phi).
    const ComparisonFunction tail = cf_karamata_tail(cf_mul(s, t_lin));
    const ComparisonFunction k = rep.lower_fn;
    rep.upper_fn = [tail, k](double r) { return std::sqrt(r) * tail(k(r)); };
    rep.order_upper = 0.5 + (s.alpha + 1.0) / delta;
    rep.upper_case = "tail-convergent";
    return rep;
  }

  if (dl - dp <= 1e-12) {
    // Balanced critical envelopes: only the universal linear-type envelope
    // is available; the order can sit anywhere in [1/2, 1].
    rep.upper_fn = [](double r) { return r; };
    rep.order_upper = 1.0;
    rep.upper_case = "type-envelope";
    return rep;
  }

  const ComparisonFunction ratio = cf_mul(d_phi, cf_pow(d_l, -1.0));
  const ComparisonFunction hfun = asymptotic_inverse(ratio);

  if (delta < 2.0 - 1e-12) {
    if (dl <= 1.0 + 1e-12) {
      const ComparisonFunction tail_l = cf_karamata_tail(cf_mul(d_l, t_lin));
      rep.upper_fn = [tail_l, hfun](double r) { return r * tail_l(hfun(r)); };
      rep.upper_case = "length-dominated";
    } else {
      const ComparisonFunction dphi = d_phi;
      rep.upper_fn = [dphi, hfun](double r) {
        const double t = hfun(r);
        return t * dphi(t);
      };
      rep.upper_case = "angle-window";
    }
    rep.order_upper = (1.0 - dp) / (dl - dp);
    return rep;
  }

  // Critical line delta = 2 with divergent sqrt(d_l d_phi):
  // sqrt(r) * int_1^{h(r)} sqrt(d_l d_phi).
  const ComparisonFunction head = cf_karamata_head(cf_mul(s, t_lin));
  rep.upper_fn = [head, hfun](double r) {
    return std::sqrt(r) * head(hfun(r));
  };
  rep.order_upper = 0.5;
  rep.upper_case = "critical-line";
  return rep;
}

}  // namespace cansys
