#include "cansys/jacobi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace cansys {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

// ---------------------------------------------------------------------------
// Small least-squares helper: y ~ intercept + slope * x with a residual-based
// standard error of the slope.
// ---------------------------------------------------------------------------
struct LineFit {
  double slope = 0.0, intercept = 0.0;
  double slope_se = kInf;
  bool ok = false;
};

LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
  LineFit f;
  const std::size_t n = xs.size();
  if (n < 3 || ys.size() != n) return f;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double rss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ys[i] - (f.intercept + f.slope * xs[i]);
    rss += r * r;
  }
  f.slope_se = std::sqrt(std::max(rss, 0.0) / (n - 2) / sxx);
  f.ok = true;
  return f;
}

// Running sum of exp(log_term) kept as mantissa * exp(scale).
struct LogAccumulator {
  double mant = 0.0;
  double scale = -kInf;

  void add(double log_term) {
    if (log_term == -kInf || std::isnan(log_term)) return;
    if (mant == 0.0) {
      scale = log_term;
      mant = 1.0;
      return;
    }
    if (log_term <= scale) {
      mant += std::exp(log_term - scale);
    } else {
      mant = mant * std::exp(scale - log_term) + 1.0;
      scale = log_term;
    }
    if (mant > 1e280) {
      scale += std::log(mant);
      mant = 1.0;
    }
  }
  double log_total() const {
    return mant > 0.0 ? scale + std::log(mant) : -kInf;
  }
};

double log_sum_exp(const std::vector<double>& terms) {
  LogAccumulator acc;
  for (double t : terms) acc.add(t);
  return acc.log_total();
}

// ---------------------------------------------------------------------------
// Tail verdict for a positive-term series given its increments. Convergence
// and divergence are declared from the fitted decay of the increments with a
// two-sigma margin; clearly geometric decay is accepted as a fallback.
// ---------------------------------------------------------------------------
SeriesTrace series_probe(const std::vector<double>& inc,
                         std::size_t first_index) {
  SeriesTrace tr;
  const std::size_t n = inc.size();
  if (n == 0) {
    tr.convergent = true;
    return tr;
  }

  long double run = 0.0;
  std::size_t next_sample = 1;
  for (std::size_t i = 0; i < n; ++i) {
    run += inc[i];
    if (i + 1 >= next_sample || i + 1 == n) {
      tr.partial.push_back(static_cast<double>(run));
      next_sample = std::max<std::size_t>(next_sample + 1,
                                          static_cast<std::size_t>(next_sample * 1.25));
    }
  }
  const double total = static_cast<double>(run);

  std::size_t last_nz = n;
  while (last_nz > 0 && inc[last_nz - 1] == 0.0) --last_nz;
  if (last_nz == 0 || (n >= 16 && last_nz <= n / 2)) {
    // Vanishing tail within the window: nothing left to sum.
    tr.convergent = true;
    tr.tail_estimate = 0.0;
    return tr;
  }

  // Fit the top half of the positive increments.
  std::vector<double> lx, ly, ix;
  for (std::size_t i = last_nz / 2; i < last_nz; ++i) {
    if (inc[i] <= 0.0) continue;
    const double idx = static_cast<double>(first_index + i);
    lx.push_back(std::log(idx));
    ix.push_back(idx);
    ly.push_back(std::log(inc[i]));
  }
  if (lx.size() < 4) {
    // Too few usable increments: fall back on absolute smallness.
    double tail_sup = 0.0;
    for (std::size_t i = (3 * last_nz) / 4; i < last_nz; ++i)
      tail_sup = std::max(tail_sup, inc[i]);
    if (total > 0 && tail_sup < 1e-15 * total) {
      tr.convergent = true;
      tr.tail_estimate = tail_sup;
    }
    return tr;
  }

  const LineFit pw = fit_line(lx, ly);
  tr.increment_slope = pw.slope;
  tr.slope_ci = 2.0 * pw.slope_se;
  const double last_idx = ix.back();
  const double last_inc = std::exp(ly.back());

  if (pw.ok && pw.slope + 2.0 * pw.slope_se < -1.05) {
    tr.convergent = true;
    tr.tail_estimate = last_inc * last_idx / (-pw.slope - 1.0);
    return tr;
  }
  if (pw.ok && pw.slope - 2.0 * pw.slope_se > -0.95) {
    tr.divergent = true;
    tr.tail_estimate = kInf;
    return tr;
  }
  // Geometric fallback: log-increment linear in the index itself.
  const LineFit ge = fit_line(ix, ly);
  if (ge.ok && ge.slope + 2.0 * ge.slope_se < -1e-3) {
    const double ratio = std::exp(ge.slope);
    tr.convergent = true;
    tr.tail_estimate = last_inc * ratio / (1.0 - ratio);
    return tr;
  }
  // Saturated partial sums: increments negligible against the total.
  if (total > 0 && last_inc * last_idx < 1e-13 * total) {
    tr.convergent = true;
    tr.tail_estimate = last_inc * last_idx;
  }
  return tr;
}

// Fitted decay of an ordered slice of log-increments, aggregated over blocks
// of eight consecutive terms to tame parity oscillations of the recurrence.
// logs[i] is the log of term number first_abs + i. For a clean c * n^{-s}
// tail the power fit has slope -s; log_tail extrapolates the mass beyond the
// slice (valid when the slope is below -1). The geometric fit (log block mass
// against the plain index) separates exponential growth from slow decay.
struct DecayFit {
  LineFit power;
  LineFit geometric;
  double log_tail = -kInf;
};

DecayFit fit_decay(const std::vector<double>& logs, std::size_t first_abs) {
  DecayFit d;
  constexpr std::size_t kBlock = 8;
  std::vector<double> lx, ix, ys;
  for (std::size_t start = 0; start + kBlock <= logs.size(); start += kBlock) {
    LogAccumulator blk;
    for (std::size_t i = start; i < start + kBlock; ++i) blk.add(logs[i]);
    if (blk.log_total() == -kInf) continue;
    const double center = static_cast<double>(first_abs + start) + kBlock * 0.5;
    lx.push_back(std::log(center));
    ix.push_back(center);
    ys.push_back(blk.log_total());
  }
  d.power = fit_line(lx, ys);
  d.geometric = fit_line(ix, ys);
  if (d.power.ok && d.power.slope < -1.0) {
    const double n_last = static_cast<double>(first_abs + logs.size());
    d.log_tail = d.power.intercept + d.power.slope * std::log(n_last) +
                 std::log(n_last / (kBlock * (-d.power.slope - 1.0)));
  }
  return d;
}

// Convergence exponent of a positive sequence x_n ~ n^{1/rho}: fit
// log x_n vs log n over the top half and invert the slope.
ExponentFit exponent_from_sequence(const std::vector<double>& x,
                                   std::size_t first_index) {
  ExponentFit e;
  std::vector<double> lx, ly;
  for (std::size_t i = x.size() / 2; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !std::isfinite(x[i])) continue;
    lx.push_back(std::log(static_cast<double>(first_index + i)));
    ly.push_back(std::log(x[i]));
  }
  if (lx.size() < 8) return e;
  const LineFit f = fit_line(lx, ly);
  if (!f.ok || f.slope - 2.0 * f.slope_se <= 0.0) return e;
  e.value = 1.0 / f.slope;
  const double lo = 1.0 / (f.slope + 2.0 * f.slope_se);
  const double hi = 1.0 / (f.slope - 2.0 * f.slope_se);
  e.ci = hi - lo;
  e.declared = e.ci < 0.05;
  return e;
}

double reduce_mod_pi(double phi) {
  double r = std::fmod(phi, kPi);
  if (r < 0) r += kPi;
  if (r >= kPi) r -= kPi;
  return r;
}

// ---------------------------------------------------------------------------
// Recurrence at z = 0 producing the segment-chain data
//   log l_{n+1} = log(p_n^2 + q_n^2),  phi_{n+1} = atan2(p_n, -q_n) mod pi,
// with joint rescaling of (p, q). Stops when the length scale leaves the
// representable window.
// ---------------------------------------------------------------------------
struct ZeroSeries {
  std::vector<double> log_l;
  std::vector<double> phi;
  double drift = 0.0;  // residual of the off-diagonal identity
};

template <class Real>
ZeroSeries solve_zero_series(const std::vector<double>& a,
                             const std::vector<double>& b,
                             std::size_t m_pairs) {
  ZeroSeries out;
  Real pm = 0, pc = 1, qm = -1, qc = 0;
  double scale = 0.0;
  out.log_l.push_back(0.0);
  out.phi.push_back(kPi / 2);
  for (std::size_t n = 0; n < m_pairs; ++n) {
    const Real bprev = (n == 0) ? Real(-1) : Real(b[n - 1]);
    const Real an = Real(a[n]);
    const Real bn = Real(b[n]);
    Real pn = (-an * pc - bprev * pm) / bn;
    Real qn = (-an * qc - bprev * qm) / bn;
    Real ppv = pc, qpv = qc;
    const Real mx = std::max(std::abs(pn), std::abs(qn));
    if (mx > Real(1e100) || (mx > Real(0) && mx < Real(1e-100))) {
      pn /= mx;
      qn /= mx;
      ppv /= mx;
      qpv /= mx;
      scale += static_cast<double>(std::log(mx));
    }
    pm = ppv;
    qm = qpv;
    pc = pn;
    qc = qn;
    const double norm2 = static_cast<double>(pc * pc + qc * qc);
    if (!(norm2 > 0.0) || !std::isfinite(norm2)) break;
    const double log_l = 2.0 * scale + std::log(norm2);
    if (std::abs(log_l) > 690.0) break;  // outside the double window
    out.log_l.push_back(log_l);
    out.phi.push_back(reduce_mod_pi(
        std::atan2(static_cast<double>(pc), -static_cast<double>(qc))));
  }
  const std::size_t segs = out.log_l.size();
  for (std::size_t k = 0; k + 2 <= segs && k < b.size(); ++k) {
    const double sd = std::abs(std::sin(out.phi[k + 1] - out.phi[k]));
    if (sd == 0.0) {
      std::ostringstream msg;
      msg << "correspondence breakdown: consecutive angles coincide mod pi at "
             "segment "
          << k + 1;
      throw std::runtime_error(msg.str());
    }
    const double log_bhat =
        -0.5 * (out.log_l[k] + out.log_l[k + 1]) - std::log(sd);
    out.drift = std::max(out.drift,
                         std::abs(std::expm1(log_bhat - std::log(b[k]))));
  }
  return out;
}

std::size_t default_terms(const JacobiParams& j, std::size_t requested,
                          std::size_t fallback) {
  if (requested > 0) return requested;
  if (j.stored() > 0) return j.stored();
  return fallback;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter plumbing.
// ---------------------------------------------------------------------------
void JacobiParams::validate() const {
  const std::size_t n = stored();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(a[i]))
      throw std::invalid_argument("diagonal entries must be finite");
    if (!(b[i] > 0.0) || !std::isfinite(b[i]))
      throw std::invalid_argument("off-diagonal entries must be positive");
  }
}

JacobiParams materialise(const JacobiParams& j, std::size_t n_terms) {
  JacobiParams out = j;
  const std::size_t want = std::min(n_terms, j.truncation);
  if (out.rule) {
    for (std::size_t n = out.stored(); n < want; ++n) {
      const auto [an, bn] = out.rule(n);
      if (out.a.size() <= n) out.a.resize(n);
      if (out.b.size() <= n) out.b.resize(n);
      out.a.push_back(an);
      out.b.push_back(bn);
    }
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Polynomial evaluation.
// ---------------------------------------------------------------------------
double PolyPair::log_abs_p(std::size_t n) const {
  const double m = std::abs(p[n]);
  return m > 0 ? logscale[n] + std::log(m) : -kInf;
}

double PolyPair::log_abs_q(std::size_t n) const {
  const double m = std::abs(q[n]);
  return m > 0 ? logscale[n] + std::log(m) : -kInf;
}

PolyPair eval_polys(const JacobiParams& j, Cplx z, std::size_t n_max) {
  const JacobiParams jj = materialise(j, n_max);
  const std::size_t m = std::min(n_max, jj.stored());
  PolyPair out;
  out.z = z;
  out.p.reserve(m + 1);
  out.q.reserve(m + 1);
  out.logscale.reserve(m + 1);

  Cplx pm(0, 0), pc(1, 0), qm(-1, 0), qc(0, 0);
  double scale = 0.0;
  out.p.push_back(pc);
  out.q.push_back(qc);
  out.logscale.push_back(scale);

  for (std::size_t n = 0; n < m; ++n) {
    const double bprev = (n == 0) ? -1.0 : jj.b[n - 1];
    const double an = jj.a[n], bn = jj.b[n];
    Cplx pn = ((z - an) * pc - bprev * pm) / bn;
    Cplx qn = ((z - an) * qc - bprev * qm) / bn;
    Cplx ppv = pc, qpv = qc;
    double new_scale = scale;
    const double mx = std::max(std::abs(pn), std::abs(qn));
    if (mx > 1e100 || (mx > 0 && mx < 1e-100)) {
      pn /= mx;
      qn /= mx;
      ppv /= mx;
      qpv /= mx;
      new_scale += std::log(mx);
    }
    // Cross-product invariant b_n (p_{n+1} q_n - p_n q_{n+1}) = 1, evaluated
    // relative to the size of its constituents.
    const double s_cross = new_scale + out.logscale[n];
    const Cplx cross = pn * out.q[n] - out.p[n] * qn;
    const double target = s_cross < 680.0 ? std::exp(-s_cross) : 0.0;
    const double num = std::abs(bn * cross - target);
    const double den =
        target + bn * (std::abs(pn * out.q[n]) + std::abs(out.p[n] * qn)) +
        1e-300;
    out.invariant_drift = std::max(out.invariant_drift, num / den);

    pm = ppv;
    qm = qpv;
    pc = pn;
    qc = qn;
    scale = new_scale;
    out.p.push_back(pc);
    out.q.push_back(qc);
    out.logscale.push_back(scale);
  }
  return out;
}

std::vector<std::vector<double>> poly_coefficients(const JacobiParams& j,
                                                   std::size_t n_max) {
  const JacobiParams jj = materialise(j, n_max);
  const std::size_t m = std::min(n_max, jj.stored());
  std::vector<std::vector<double>> c;
  c.push_back({1.0});
  std::vector<double> prev;  // degree n-1 coefficients
  for (std::size_t n = 0; n < m; ++n) {
    const std::vector<double>& cur = c.back();
    const double bprev = (n == 0) ? -1.0 : jj.b[n - 1];
    std::vector<double> next(n + 2, 0.0);
    for (std::size_t k = 0; k <= n + 1; ++k) {
      double v = 0.0;
      if (k >= 1) v += cur[k - 1];
      if (k < cur.size()) v -= jj.a[n] * cur[k];
      if (k < prev.size()) v -= bprev * prev[k];
      v /= jj.b[n];
      if (!std::isfinite(v))
        throw std::overflow_error("polynomial coefficients overflow double");
      next[k] = v;
    }
    prev = cur;
    c.push_back(std::move(next));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Moments via band vectors v_m = M^m e_0 (M the tridiagonal matrix):
// s_{2m} = |v_m|^2 and s_{2m+1} = <v_m, v_{m+1}>.
// ---------------------------------------------------------------------------
namespace {

// One band-iteration step: w = M v where v has support [0, len).
void band_step(const std::vector<double>& a, const std::vector<double>& b,
               const std::vector<long double>& v, std::vector<long double>& w) {
  const std::size_t len = v.size();
  w.assign(len + 1, 0.0L);
  for (std::size_t i = 0; i <= len; ++i) {
    long double acc = 0.0L;
    if (i >= 1 && i - 1 < len) acc += static_cast<long double>(b[i - 1]) * v[i - 1];
    if (i < len) acc += static_cast<long double>(a[i]) * v[i];
    if (i + 1 < len) acc += static_cast<long double>(b[i]) * v[i + 1];
    w[i] = acc;
  }
}

}  // namespace

std::vector<double> moments(const JacobiParams& j, std::size_t n_max) {
  const std::size_t m_top = (n_max + 1) / 2;
  const JacobiParams jj = materialise(j, m_top + 1);
  if (jj.stored() < m_top + 1)
    throw std::invalid_argument(
        "not enough parameters for the requested moment count");
  std::vector<double> s(n_max + 1, 0.0);
  std::vector<long double> v = {1.0L}, w;
  for (std::size_t m = 0; m <= m_top; ++m) {
    if (2 * m <= n_max) {
      long double n2 = 0.0L;
      for (long double x : v) n2 += x * x;
      s[2 * m] = static_cast<double>(n2);
      if (!std::isfinite(s[2 * m])) s[2 * m] = kInf;
    }
    if (2 * m + 1 <= n_max) {
      band_step(jj.a, jj.b, v, w);
      long double dot = 0.0L;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * w[i];
      const double val = static_cast<double>(dot);
      s[2 * m + 1] = std::isfinite(val) ? val : (dot > 0 ? kInf : -kInf);
      v.swap(w);
    } else if (m < m_top) {
      band_step(jj.a, jj.b, v, w);
      v.swap(w);
    }
  }
  return s;
}

std::vector<double> even_moment_logs(const JacobiParams& j, std::size_t count) {
  const JacobiParams jj = materialise(j, count);
  const std::size_t m_top = std::min(count, jj.stored());
  std::vector<double> out;
  out.reserve(m_top);
  std::vector<long double> v = {1.0L}, w;
  double scale = 0.0;
  for (std::size_t m = 0; m < m_top; ++m) {
    long double n2 = 0.0L;
    for (long double x : v) n2 += x * x;
    out.push_back(2.0 * scale + static_cast<double>(std::log(n2)));
    band_step(jj.a, jj.b, v, w);
    long double mx = 0.0L;
    for (long double x : w) mx = std::max(mx, std::abs(x));
    if (mx > 0.0L) {
      for (long double& x : w) x /= mx;
      scale += static_cast<double>(std::log(mx));
    }
    v.swap(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Boundary classification from the three series criteria.
// ---------------------------------------------------------------------------
std::string to_string(BoundaryGuess g) {
  switch (g) {
    case BoundaryGuess::LimitCircle:
      return "limit-circle";
    case BoundaryGuess::LimitPoint:
      return "limit-point";
    default:
      return "undecided";
  }
}

BoundaryTest limit_circle_test(const JacobiParams& j, std::size_t n_budget) {
  const JacobiParams jj = materialise(j, n_budget);
  const std::size_t m = std::min(n_budget, jj.stored());
  BoundaryTest out;
  out.terms_used = m;
  if (m < 4) return out;

  std::vector<double> inv_b(m), mixed(m > 0 ? m - 1 : 0);
  for (std::size_t n = 0; n < m; ++n) inv_b[n] = 1.0 / jj.b[n];
  for (std::size_t n = 0; n + 1 < m; ++n)
    mixed[n] = std::abs(jj.a[n + 1]) / (jj.b[n] * jj.b[n + 1]);
  out.inverse_b = series_probe(inv_b, 1);
  out.mixed = series_probe(mixed, 1);

  const ZeroSeries zs = solve_zero_series<double>(jj.a, jj.b, m);
  std::vector<double> mass(zs.log_l.size());
  for (std::size_t i = 0; i < mass.size(); ++i)
    mass[i] = std::exp(zs.log_l[i]);
  out.principal_mass = series_probe(mass, 1);

  if (out.inverse_b.divergent || out.mixed.divergent)
    out.verdict = BoundaryGuess::LimitPoint;
  else if (out.principal_mass.convergent)
    out.verdict = BoundaryGuess::LimitCircle;
  else if (out.principal_mass.divergent)
    out.verdict = BoundaryGuess::LimitPoint;
  return out;
}

// ---------------------------------------------------------------------------
// Bidirectional correspondence.
// ---------------------------------------------------------------------------
HamburgerConversion jacobi_to_hamburger(const JacobiParams& j,
                                        std::size_t n_terms) {
  const std::size_t want = default_terms(j, n_terms, 4096);
  const JacobiParams jj = materialise(j, want);
  std::size_t m = std::min(want, jj.stored());
  if (m + 1 > (1u << 22)) m = (1u << 22) - 1;
  if (m == 0) throw std::invalid_argument("no parameters to convert");

  ZeroSeries zs = solve_zero_series<double>(jj.a, jj.b, m);
  HamburgerConversion conv;
  if (zs.drift > 1e-8) {
    zs = solve_zero_series<long double>(jj.a, jj.b, m);
    conv.high_precision = true;
    if (zs.drift > 1e-6)
      throw std::runtime_error(
          "correspondence drift persists in extended precision");
  }
  conv.drift = zs.drift;

  const std::size_t segs = zs.log_l.size();
  conv.length.resize(segs);
  conv.angle = zs.phi;
  for (std::size_t i = 0; i < segs; ++i) conv.length[i] = std::exp(zs.log_l[i]);

  conv.length_tail = series_probe(conv.length, 1);
  double tail = kInf;
  if (conv.length_tail.convergent) tail = conv.length_tail.tail_estimate;

  HamburgerBody body;
  body.length = conv.length;
  body.angle = conv.angle;
  body.tail_trace = tail;
  std::string origin = "jacobi:" + (jj.rule_name.empty() ? std::string("data")
                                                         : jj.rule_name);
  conv.desc = make_hamiltonian(0.0, 0.0, std::move(body), {}, origin);
  return conv;
}

JacobiParams hamburger_to_jacobi(const HamiltonianDesc& h) {
  const auto* body = std::get_if<HamburgerBody>(h.body.get());
  if (!body)
    throw std::invalid_argument(
        "inverse correspondence needs a segment-chain Hamiltonian");
  const std::vector<double>& l = body->length;
  const std::vector<double>& phi = body->angle;
  const std::size_t n = l.size();
  if (n < 2)
    throw std::invalid_argument("need at least two segments to invert");
  if (std::abs(l[0] - 1.0) > 1e-9)
    throw std::invalid_argument("first segment must have unit length");
  if (std::abs(std::remainder(phi[0] - kPi / 2, kPi)) > 1e-9)
    throw std::invalid_argument(
        "first segment must point in the second coordinate direction");

  JacobiParams out;
  out.a.resize(n - 1);
  out.b.resize(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    const double d = phi[k + 1] - phi[k];
    const double sd = std::abs(std::sin(d));
    if (sd < 1e-14) {
      std::ostringstream msg;
      msg << "inverse correspondence breakdown: angles coincide mod pi at "
             "segment "
          << k + 1;
      throw std::runtime_error(msg.str());
    }
    out.b[k] = 1.0 / (std::sqrt(l[k] * l[k + 1]) * sd);
  }
  out.a[0] = -std::tan(phi[1]);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double d1 = phi[k + 1] - phi[k];  // ahead difference
    const double d0 = phi[k] - phi[k - 1];  // behind difference
    out.a[k] = (std::cos(d1) / std::sin(d1) + std::cos(d0) / std::sin(d0)) /
               l[k];
  }
  out.truncation = std::max<std::size_t>(out.a.size(), 1);
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Entire 2x2 matrix attached to limit-circle data.
// ---------------------------------------------------------------------------
NevanlinnaEval nevanlinna_matrix(const HamiltonianDesc& hamburger, Cplx z,
                                 const TransferOptions& opt) {
  const auto* body = std::get_if<HamburgerBody>(hamburger.body.get());
  if (!body)
    throw std::invalid_argument("expected a segment-chain Hamiltonian");
  if (hamburger.pw().tail_infinite)
    throw std::domain_error(
        "matrix is defined only for limit-circle data (trace diverges)");
  const SMat2c wh = monodromy(hamburger, z, opt);
  Mat2c d = Mat2c::Zero();
  d(0, 0) = 1.0;
  d(1, 1) = -1.0;
  Mat2c jm = Mat2c::Zero();
  jm(0, 1) = -1.0;
  jm(1, 0) = 1.0;
  NevanlinnaEval out;
  out.w.m = d * wh.m * jm * d;
  out.w.sigma = wh.sigma;
  out.w.renormalise();
  out.tail_bound = std::abs(z) * hamburger.pw().tail_dropped;
  out.segments = body->length.size();
  return out;
}

NevanlinnaEval nevanlinna_matrix(const JacobiParams& j, Cplx z,
                                 std::size_t n_terms,
                                 const TransferOptions& opt) {
  const HamburgerConversion conv = jacobi_to_hamburger(j, n_terms);
  if (conv.desc.pw().tail_infinite)
    throw std::domain_error(
        "matrix is defined only for limit-circle data (lengths diverge)");
  return nevanlinna_matrix(conv.desc, z, opt);
}

// ---------------------------------------------------------------------------
// Square-summed polynomial aggregate.
// ---------------------------------------------------------------------------
DeltaResult delta(const JacobiParams& j, Cplx z, double tol,
                  std::size_t max_terms) {
  const JacobiParams jj = materialise(j, max_terms);
  const std::size_t m = std::min(max_terms, jj.stored());
  LogAccumulator acc;
  Cplx pm(0, 0), pc(1, 0);
  double scale = 0.0;
  acc.add(0.0);  // |p_0|^2 = 1
  DeltaResult out;
  out.terms_used = 1;
  out.tail_certificate = 1.0;
  std::size_t quiet = 0;
  // Only a bounded window of recent log-increments is kept for the tail fit,
  // so large term budgets stay cheap in memory.
  constexpr std::size_t kWindow = std::size_t{1} << 17;
  std::vector<double> ring;
  ring.reserve(std::min(m + 1, kWindow));
  std::size_t produced = 0;
  auto record = [&](double v) {
    if (ring.size() < kWindow)
      ring.push_back(v);
    else
      ring[produced % kWindow] = v;
    ++produced;
  };
  record(0.0);

  for (std::size_t n = 0; n < m; ++n) {
    const double bprev = (n == 0) ? -1.0 : jj.b[n - 1];
    Cplx pn = ((z - jj.a[n]) * pc - bprev * pm) / jj.b[n];
    Cplx ppv = pc;
    const double mx = std::abs(pn);
    if (mx > 1e100 || (mx > 0 && mx < 1e-100)) {
      pn /= mx;
      ppv /= mx;
      scale += std::log(mx);
    }
    pm = ppv;
    pc = pn;
    const double a2 = std::norm(pc);
    const double log_term =
        a2 > 0 ? 2.0 * scale + std::log(a2) : -kInf;
    acc.add(log_term);
    record(log_term);
    ++out.terms_used;
    const double rel = std::exp(log_term - acc.log_total());
    out.tail_certificate = rel;
    if (rel < tol) {
      if (++quiet >= 50) break;
    } else {
      quiet = 0;
    }
  }
  if (quiet < 50) {
    // Budget exhausted: accept a cleanly summable tail, flag exponential
    // growth as non-summable, and report everything else as unresolved.
    std::vector<double> ordered;
    std::size_t first_abs = 0;
    if (produced <= ring.size()) {
      ordered = ring;
    } else {
      const std::size_t cut = produced % kWindow;
      ordered.assign(ring.begin() + cut, ring.end());
      ordered.insert(ordered.end(), ring.begin(), ring.begin() + cut);
      first_abs = produced - kWindow;
    }
    const std::size_t half = ordered.size() / 2;
    ordered.erase(ordered.begin(), ordered.begin() + half);
    const DecayFit f = fit_decay(ordered, first_abs + half);
    const bool summable =
        f.power.ok && f.power.slope + 2.0 * f.power.slope_se < -1.05;
    if (!summable) {
      if (f.geometric.ok &&
          f.geometric.slope - 2.0 * f.geometric.slope_se > 1e-4)
        throw std::domain_error(
            "square sum diverges: not limit-circle data at this point");
      throw std::domain_error(
          "square sum tail unresolved within the term budget");
    }
    out.tail_certificate = std::exp(f.log_tail - acc.log_total());
  }
  out.log_delta = 0.5 * acc.log_total();
  return out;
}

// ---------------------------------------------------------------------------
// Growth floor package.
// ---------------------------------------------------------------------------
double LowerBoundReport::log_G(double r) const {
  const double lr = std::log(r);
  std::vector<double> terms;
  terms.reserve(log_b_prefix.size());
  for (std::size_t n = 1; n < log_b_prefix.size(); ++n)
    terms.push_back(2.0 * n * lr - 2.0 * log_b_prefix[n]);
  return log_sum_exp(terms);
}

double LowerBoundReport::log_F(double r) const {
  const double lr = std::log(r);
  std::vector<double> terms;
  terms.reserve(log_even_moments.size());
  for (std::size_t n = 0; n < log_even_moments.size(); ++n)
    terms.push_back(2.0 * n * lr - log_even_moments[n]);
  return log_sum_exp(terms);
}

LowerBoundReport lower_bounds(const JacobiParams& j, int k_max,
                              std::size_t n_terms) {
  if (k_max < 2) throw std::invalid_argument("window size must be at least 2");
  const JacobiParams jj = materialise(j, n_terms);
  const std::size_t m = std::min(n_terms, jj.stored());
  if (m < 8) throw std::invalid_argument("too few parameters for bounds");

  LowerBoundReport rep;
  rep.log_b_prefix.resize(m + 1, 0.0);
  for (std::size_t n = 0; n < m; ++n)
    rep.log_b_prefix[n + 1] = rep.log_b_prefix[n] + std::log(jj.b[n]);

  rep.log_even_moments = even_moment_logs(jj, std::min<std::size_t>(m, 1024));

  const ZeroSeries zs = solve_zero_series<double>(jj.a, jj.b, m);
  const std::size_t segs = zs.log_l.size();
  std::vector<double> l(segs);
  for (std::size_t i = 0; i < segs; ++i) l[i] = std::exp(zs.log_l[i]);

  for (int k = 2; k <= k_max; ++k) {
    std::vector<double> w;
    if (segs >= static_cast<std::size_t>(k)) {
      w.reserve(segs - k + 1);
      for (std::size_t n = 0; n + k <= segs; ++n) {
        double s = 0.0;
        for (int i = 0; i < k; ++i)
          for (int jx = i + 1; jx < k; ++jx) {
            const double sd = std::sin(zs.phi[n + i] - zs.phi[n + jx]);
            s += l[n + i] * l[n + jx] * sd * sd;
          }
        if (!(s > 0.0) || !std::isfinite(s)) break;
        w.push_back(1.0 / std::sqrt(s));
      }
    }
    rep.window_exponents.push_back(exponent_from_sequence(w, 0));
    rep.window_b.push_back(std::move(w));
  }
  for (const ExponentFit& e : rep.window_exponents)
    if (e.declared && e.value > rep.order_floor.value) rep.order_floor = e;
  return rep;
}

// ---------------------------------------------------------------------------
// Regular-offdiagonal / small-diagonal criterion.
// ---------------------------------------------------------------------------
BerezanskiiReport berezanskii_check(const JacobiParams& j,
                                    std::size_t n_terms) {
  const JacobiParams jj = materialise(j, n_terms);
  const std::size_t m = std::min(n_terms, jj.stored());
  BerezanskiiReport rep;
  if (m < 16) return rep;

  std::vector<double> inv_b(m);
  for (std::size_t n = 0; n < m; ++n) inv_b[n] = 1.0 / jj.b[n];
  rep.inverse_b = series_probe(inv_b, 1);
  rep.inverse_b_convergent = rep.inverse_b.convergent;

  std::vector<double> alpha(m);  // alpha_n = a_n / sqrt(b_{n-1} b_n), n >= 1
  alpha[0] = 0.0;
  for (std::size_t n = 1; n < m; ++n)
    alpha[n] = jj.a[n] / std::sqrt(jj.b[n - 1] * jj.b[n]);
  std::vector<double> dalpha(m >= 2 ? m - 2 : 0);
  for (std::size_t n = 1; n + 1 < m; ++n)
    dalpha[n - 1] = std::abs(alpha[n + 1] - alpha[n]);
  rep.alpha_increments = series_probe(dalpha, 1);

  // Extrapolated limit: alpha_n ~ alpha_inf + c / n over the top half.
  {
    std::vector<double> xs, ys;
    for (std::size_t n = m / 2; n < m; ++n) {
      xs.push_back(1.0 / static_cast<double>(n));
      ys.push_back(alpha[n]);
    }
    const LineFit f = fit_line(xs, ys);
    if (f.ok) {
      rep.alpha_limit = f.intercept;
      double spread = 0.0;
      for (std::size_t i = 0; i < xs.size(); ++i)
        spread = std::max(spread,
                          std::abs(ys[i] - (f.intercept + f.slope * xs[i])));
      rep.alpha_limit_ci = 2.0 * spread;
    } else {
      rep.alpha_limit = alpha.back();
      rep.alpha_limit_ci = kInf;
    }
  }
  rep.diagonal_regular =
      rep.alpha_increments.convergent &&
      std::abs(rep.alpha_limit) + rep.alpha_limit_ci < 2.0 - 1e-6;

  std::vector<double> logreg(m >= 2 ? m - 2 : 0);
  for (std::size_t n = 1; n + 1 < m; ++n)
    logreg[n - 1] =
        std::abs(jj.b[n] / std::sqrt(jj.b[n - 1] * jj.b[n + 1]) - 1.0);
  rep.log_regularity = series_probe(logreg, 1);
  rep.offdiagonal_regular = rep.log_regularity.convergent;

  rep.b_exponent = exponent_from_sequence(jj.b, 0);
  rep.applies = rep.inverse_b_convergent && rep.diagonal_regular &&
                rep.offdiagonal_regular;
  if (rep.applies) rep.predicted_order = rep.b_exponent.value;
  return rep;
}

// ---------------------------------------------------------------------------
// Two-sided coefficient bounds.
// ---------------------------------------------------------------------------
BergSzwarcBounds berg_szwarc_bounds(const JacobiParams& j, double r,
                                    std::size_t max_rows) {
  if (!(r > 0.0)) throw std::invalid_argument("radius must be positive");
  const JacobiParams jj = materialise(j, max_rows);
  const std::size_t m = std::min(max_rows, jj.stored());
  if (m == 0) throw std::invalid_argument("no parameters");

  std::vector<LogAccumulator> cols;
  cols.reserve(64);
  LogAccumulator total;
  std::vector<long double> prev, cur = {1.0L};
  double scale_prev = 0.0, scale_cur = 0.0;
  double last_row_log = 0.0;

  auto add_row = [&](const std::vector<long double>& row, double scale) {
    long double n2 = 0.0L;
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (row[k] == 0.0L) continue;
      if (cols.size() <= k) cols.resize(k + 1);
      const double lt =
          2.0 * scale + 2.0 * static_cast<double>(std::log(std::abs(row[k])));
      cols[k].add(lt);
      n2 += row[k] * row[k];
    }
    last_row_log =
        n2 > 0.0L ? 2.0 * scale + static_cast<double>(std::log(n2)) : -kInf;
    total.add(last_row_log);
    return std::exp(last_row_log - total.log_total());
  };

  BergSzwarcBounds out;
  out.r = r;
  out.tail_certificate = add_row(cur, scale_cur);
  out.rows_used = 1;
  std::size_t quiet = 0;
  std::vector<double> row_logs = {0.0};
  row_logs.reserve(m + 1);

  for (std::size_t n = 0; n < m; ++n) {
    const double bprev = (n == 0) ? -1.0 : jj.b[n - 1];
    const long double f =
        prev.empty() ? 0.0L : std::exp(static_cast<long double>(scale_prev - scale_cur));
    std::vector<long double> next(cur.size() + 1, 0.0L);
    for (std::size_t k = 0; k < next.size(); ++k) {
      long double v = 0.0L;
      if (k >= 1) v += cur[k - 1];
      if (k < cur.size()) v -= static_cast<long double>(jj.a[n]) * cur[k];
      if (k < prev.size())
        v -= static_cast<long double>(bprev) * f * prev[k];
      next[k] = v / static_cast<long double>(jj.b[n]);
    }
    long double mx = 0.0L;
    for (long double x : next) mx = std::max(mx, std::abs(x));
    double scale_next = scale_cur;
    if (mx > 0.0L) {
      for (long double& x : next) x /= mx;
      scale_next += static_cast<double>(std::log(mx));
    }
    prev = std::move(cur);
    scale_prev = scale_cur;
    cur = std::move(next);
    scale_cur = scale_next;

    const double rel = add_row(cur, scale_cur);
    row_logs.push_back(last_row_log);
    out.tail_certificate = rel;
    ++out.rows_used;
    if (rel < 1e-14) {
      if (++quiet >= 50) break;
    } else {
      quiet = 0;
    }
  }
  if (quiet < 50) {
    // Accept a cleanly summable row tail; otherwise the budget was too small.
    const std::size_t half = row_logs.size() / 2;
    const std::vector<double> top(row_logs.begin() + half, row_logs.end());
    const DecayFit fdec = fit_decay(top, half);
    if (!fdec.power.ok ||
        fdec.power.slope + 2.0 * fdec.power.slope_se >= -1.05)
      throw std::runtime_error(
          "coefficient tail does not settle within the row budget");
    out.tail_certificate = std::exp(fdec.log_tail - total.log_total());
  }

  out.log_column_sums.resize(cols.size());
  std::vector<double> lo_terms, up_terms;
  const double lr = std::log(r);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    const double lc = cols[k].log_total();
    out.log_column_sums[k] = lc;
    if (lc == -kInf) continue;
    lo_terms.push_back(lc + 2.0 * k * lr);
    up_terms.push_back(0.5 * lc + k * lr);
  }
  out.log_lower = 0.5 * log_sum_exp(lo_terms);
  out.log_upper = log_sum_exp(up_terms);
  return out;
}

}  // namespace cansys
