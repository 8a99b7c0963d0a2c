#include "cansys/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cansys/quadrature.hpp"
#include "cansys/transfer.hpp"

namespace cansys {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPi = 3.14159265358979323846;

double quad_form(const Mat2& om, double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  return om(0, 0) * c * c + om(1, 1) * s * s + 2.0 * om(0, 1) * s * c;
}

// Pointwise density of xi_phi' H(t) xi_phi from the raw body description.
double raw_direction_density(const HamiltonianBody& b, double t, double phi) {
  struct Eval {
    double t, phi;
    double operator()(const HamburgerBody& hb) const {
      double pos = 0.0;
      for (std::size_t j = 0; j < hb.length.size(); ++j) {
        if (t < pos + hb.length[j]) {
          const double c = std::cos(phi - hb.angle[j]);
          return c * c;
        }
        pos += hb.length[j];
      }
      return 0.0;
    }
    double operator()(const DiagonalBody& db) const {
      const double c = std::cos(phi), s = std::sin(phi);
      return db.h1(t) * c * c + db.h2(t) * s * s;
    }
    double operator()(const RotatingBody& rb) const {
      const double c = std::cos(rb.angle(t) - phi);
      return rb.trace(t) * c * c;
    }
    double operator()(const GeneralBody& gb) const {
      const double c = std::cos(phi), s = std::sin(phi);
      return gb.h1(t) * c * c + gb.h2(t) * s * s + 2.0 * gb.h3(t) * s * c;
    }
  };
  return std::visit(Eval{t, phi}, b);
}

// Directional mass of the raw body over [u, v], v <= b finite, integrated on
// panels graded toward v (where the body may be singular).
double raw_range_mass(const HamiltonianDesc& h, double phi, double u,
                      double v) {
  if (!(v > u)) return 0.0;
  auto f = [&](double t) { return raw_direction_density(h.raw(), t, phi); };
  double total = 0.0;
  double lo = u;
  for (int i = 1; i <= 60 && lo < v; ++i) {
    const double hi = (i == 60) ? v : v - (v - u) * std::pow(2.0, -i);
    if (!(hi > lo)) continue;
    total += integrate(f, lo, hi, 1e-11 * std::max(total, 1.0), 12).value;
    lo = hi;
  }
  return total;
}

// Directional mass of the raw body on [u, b) with divergence detection;
// returns +inf when the window sums stop decaying.
double raw_tail_mass(const HamiltonianDesc& h, double phi, double u) {
  auto f = [&](double t) { return raw_direction_density(h.raw(), t, phi); };
  const double b = h.b;
  double total = 0.0;
  double prev = kInf;
  if (std::isfinite(b)) {
    double lo = u;
    for (int i = 1; i <= 100; ++i) {
      const double hi = b - (b - u) * std::pow(2.0, -i);
      if (!(hi > lo)) break;
      const double w = integrate(f, lo, hi, 1e-12 * std::max(total, 1.0), 10).value;
      total += std::max(w, 0.0);
      if (i > 20 && w > 0.9 * prev && w > 1e-10 * std::max(total, 1e-280))
        return kInf;
      if (i > 20 && w < 1e-15 * std::max(total, 1e-280)) break;
      prev = w;
      lo = hi;
    }
    return total;
  }
  double lo = std::max(u, 1e-8);
  for (int i = 0; i < 360; ++i) {
    const double hi = lo * 2.0;
    const double w = integrate(f, lo, hi, 1e-12 * std::max(total, 1.0), 10).value;
    total += std::max(w, 0.0);
    if (i > 12 && w > 0.9 * prev && w > 1e-10 * std::max(total, 1e-280))
      return kInf;
    if (w < 1e-15 * std::max(total, 1e-280) && i > 12) break;
    prev = w;
    lo = hi;
  }
  return total;
}

// Directional mass beyond the compiled range, from max(u, t1) to b.
double beyond_mesh_mass(const HamiltonianDesc& h, double phi, double u) {
  const Piecewise& m = h.pw();
  const double start = std::max(u, m.kn.back());
  if (m.tail_infinite && m.tail_angle) {
    const double c = std::cos(phi - *m.tail_angle);
    // An infinite indivisible tail carries mass only along its own direction.
    return std::abs(c) < 1e-9 ? 0.0 : kInf;
  }
  if (std::holds_alternative<HamburgerBody>(h.raw())) {
    if (m.tail_infinite) return kInf;
    return m.tail_dropped;  // isotropic upper estimate for the dropped part
  }
  if (std::isfinite(h.b) && !(start < h.b)) return 0.0;
  return raw_tail_mass(h, phi, start);
}

// Directional tail mass from t to the right endpoint (mesh + beyond).
double dir_tail(const HamiltonianDesc& h, double phi, double t) {
  const Piecewise& m = h.pw();
  const double t1 = m.kn.back();
  double mesh_part = 0.0;
  if (t < t1) mesh_part = quad_form(m.omega(t, t1), phi);
  const double beyond = beyond_mesh_mass(h, phi, std::max(t, t1));
  return mesh_part + beyond;
}

// Directional head mass from the left endpoint to t (mesh + raw excess).
double dir_head(const HamiltonianDesc& h, double phi, double t) {
  const Piecewise& m = h.pw();
  const double t0 = m.kn.front(), t1 = m.kn.back();
  double v = 0.0;
  if (t > t0) v = quad_form(m.omega(t0, std::min(t, t1)), phi);
  if (t > t1 && !std::holds_alternative<HamburgerBody>(h.raw()))
    v += raw_range_mass(h, phi, t1, std::min(t, h.b));
  return v;
}

struct LinFit {
  double slope = 0.0;
  double slope_se = 0.0;
  bool ok = false;
};

LinFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys,
                  std::size_t from) {
  LinFit f;
  const std::size_t n = xs.size();
  if (n < from + 3) return f;
  double sx = 0, sy = 0;
  std::size_t cnt = n - from;
  for (std::size_t i = from; i < n; ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / cnt, my = sy / cnt;
  double sxx = 0, sxy = 0, see = 0;
  for (std::size_t i = from; i < n; ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0) return f;
  f.slope = sxy / sxx;
  for (std::size_t i = from; i < n; ++i) {
    const double e = ys[i] - my - f.slope * (xs[i] - mx);
    see += e * e;
  }
  if (cnt > 2) f.slope_se = std::sqrt(see / ((cnt - 2) * sxx));
  f.ok = true;
  return f;
}

// Exact rotation count of the second monodromy row. Marching the row through
// the mesh accumulates the true (unwrapped) angle swept at a given real z:
// rank-one cells have nilpotent generators, so the row moves on a straight
// line and sweeps less than pi; other cells are substepped until each step
// rotates less than 1.2 rad (the rate is bounded by |z| times the largest
// eigenvalue of the cell). The total angle is monotone in z for a definite
// system, and zeros of w22 are exactly the crossings of pi/2 mod pi, so the
// count of zeros in an interval is exact -- no sampling can miss clustered
// zeros or hide full turns.
double row_rotation(const Piecewise& m, double lam) {
  double vx = 0.0, vy = 1.0;
  double theta = 0.0;
  const std::size_t n = m.cells();
  for (std::size_t k = 0; k < n; ++k) {
    const double e1 = m.e1[k], e2 = m.e2[k], e3 = m.e3[k];
    const double tr = e1 + e2;
    if (!(tr > 0.0)) continue;
    const double d = std::max(e1 * e2 - e3 * e3, 0.0);
    // exp(-lam*Omega*J) with Omega = [[e1,e3],[e3,e2]], J = [[0,-1],[1,0]]:
    // A = -lam*Omega*J = lam*[[-e3, e1], [-e2, e3]], A^2 = -(lam^2 d) I.
    if (d <= 1e-28 * tr * tr) {
      // Nilpotent (rank-one) cell: exact one-shot update, sweep < pi.
      const double nx = vx * (1.0 - lam * e3) + vy * (-lam * e2);
      const double ny = vx * (lam * e1) + vy * (1.0 + lam * e3);
      theta += std::atan2(vx * ny - vy * nx, vx * nx + vy * ny);
      vx = nx;
      vy = ny;
    } else {
      const int nsub = 1 + static_cast<int>(std::abs(lam) * tr / 1.2);
      const double f1 = e1 / nsub, f2 = e2 / nsub, f3 = e3 / nsub;
      const double tau = std::abs(lam) * std::sqrt(d) / nsub;
      const double c = std::cos(tau);
      const double s = tau > 1e-8 ? std::sin(tau) / tau : 1.0 - tau * tau / 6.0;
      const double a11 = c - lam * f3 * s, a12 = lam * f1 * s;
      const double a21 = -lam * f2 * s, a22 = c + lam * f3 * s;
      for (int j = 0; j < nsub; ++j) {
        const double nx = vx * a11 + vy * a21;
        const double ny = vx * a12 + vy * a22;
        theta += std::atan2(vx * ny - vy * nx, vx * nx + vy * ny);
        vx = nx;
        vy = ny;
        const double mag = std::abs(vx) + std::abs(vy);
        if (mag > 1e150 || (mag < 1e-150 && mag > 0.0)) {
          vx /= mag;
          vy /= mag;
        }
      }
    }
    const double mag = std::abs(vx) + std::abs(vy);
    if (mag > 1e150 || (mag < 1e-150 && mag > 0.0)) {
      vx /= mag;
      vy /= mag;
    }
  }
  return theta;
}

// Number of crossings of pi/2 mod pi on the way from angle 0 to theta,
// signed by direction.
long crossings(double theta) {
  return static_cast<long>(std::floor(theta / kPi + 0.5));
}

}  // namespace

// ---------------------------------------------------------------------------
// Eigenvalues.
// ---------------------------------------------------------------------------
int Spectrum::count(double r) const {
  int n = 0;
  for (double lam : eigenvalues)
    if (std::abs(lam) <= r * (1.0 + 1e-12)) ++n;
  return n;
}

Spectrum eigenvalues(const HamiltonianDesc& h, double r_max) {
  if (!(r_max > 0.0))
    throw std::invalid_argument("eigenvalues: scan radius must be positive");
  if (classify(h).boundary != Boundary::LimitCircle)
    throw std::domain_error(
        "eigenvalues: endpoint is limit point; the spectrum need not be "
        "discrete. Use the series/kernel tests instead.");
  const Piecewise& m = h.pw();
  const TransferOptions opt;

  // Split [-r, r] on the exact zero count until each piece isolates one
  // zero, then pin it down by sign bisection on w22.
  struct Seg {
    double a, b;
    long ca, cb;  // crossing counts at the ends
  };
  const long c_lo = crossings(row_rotation(m, -r_max));
  const long c_hi = crossings(row_rotation(m, r_max));

  Spectrum out;
  out.r_max = r_max;
  std::vector<Seg> stack{{-r_max, r_max, c_lo, c_hi}};
  std::size_t evals = 0;
  while (!stack.empty()) {
    Seg s = stack.back();
    stack.pop_back();
    const long zeros = s.cb - s.ca;
    if (zeros <= 0) continue;
    const double width_floor =
        4e-16 * std::max({1.0, std::abs(s.a), std::abs(s.b)});
    if (zeros == 1 || s.b - s.a <= width_floor || evals > (1u << 20)) {
      // Sign bisection; the isolated zero of w22 is simple, so the endpoint
      // signs differ.
      double lo = s.a, hi = s.b;
      const SMat2d wl = monodromy(h, lo, opt);
      int slo = wl.m(1, 1) > 0 ? 1 : -1;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const SMat2d w = monodromy(h, mid, opt);
        const double v = w.m(1, 1);
        const int sm = v > 0 ? 1 : (v < 0 ? -1 : 0);
        if (sm == 0) {
          lo = hi = mid;
          break;
        }
        if (sm == slo)
          lo = mid;
        else
          hi = mid;
        if (hi - lo <= 1e-12 * std::max(1.0, std::abs(mid))) break;
      }
      for (long dup = 0; dup < zeros; ++dup) {
        out.eigenvalues.push_back(0.5 * (lo + hi));
        out.bracket_widths.push_back(hi - lo);
      }
      continue;
    }
    const double mid = 0.5 * (s.a + s.b);
    const long cm = crossings(row_rotation(m, mid));
    ++evals;
    stack.push_back({s.a, mid, s.ca, cm});
    stack.push_back({mid, s.b, cm, s.cb});
  }

  std::vector<std::size_t> order(out.eigenvalues.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return out.eigenvalues[a] < out.eigenvalues[b];
  });
  Spectrum sorted;
  sorted.r_max = r_max;
  for (std::size_t i : order) {
    sorted.eigenvalues.push_back(out.eigenvalues[i]);
    sorted.bracket_widths.push_back(out.bracket_widths[i]);
  }
  return sorted;
}

int count(const HamiltonianDesc& h, double r) {
  if (!(r > 0.0))
    throw std::invalid_argument("count: scan radius must be positive");
  if (classify(h).boundary != Boundary::LimitCircle)
    throw std::domain_error(
        "count: endpoint is limit point; the spectrum need not be discrete. "
        "Use the series/kernel tests instead.");
  const Piecewise& m = h.pw();
  return static_cast<int>(crossings(row_rotation(m, r)) -
                          crossings(row_rotation(m, -r)));
}

double log_abs_w22_imag(const HamiltonianDesc& h, double r) {
  return log_abs_w22_ir(h, r);
}

// ---------------------------------------------------------------------------
// Trace identities.
// ---------------------------------------------------------------------------
TraceReport trace_formulas(const HamiltonianDesc& h, double r_max) {
  TraceReport rep;
  rep.r_max = r_max;
  const Spectrum sp = eigenvalues(h, r_max);

  // Power sums in ascending |lambda| order; opposite signs pair up first.
  std::vector<double> lam = sp.eigenvalues;
  std::sort(lam.begin(), lam.end(),
            [](double a, double b) { return std::abs(a) < std::abs(b); });
  long double s1 = 0, s2 = 0, s3 = 0;
  for (double l : lam) {
    const long double inv = 1.0L / static_cast<long double>(l);
    s1 += inv;
    s2 += inv * inv;
    s3 += inv * inv * inv;
  }
  rep.sum1 = static_cast<double>(s1);
  rep.sum2 = static_cast<double>(s2);
  rep.sum3 = static_cast<double>(s3);

  // Exact low-order series coefficients of w22 from the compiled mesh: the
  // matrix polynomial of the ordered cell product is accumulated through
  // order z^3 (each cell factor is exp(-z*Omega*J), whose powers close via
  // (Omega*J)^2 = -det(Omega) I). Newton's identities then convert the
  // coefficients into the spectral power sums of the zero set.
  const Piecewise& m = h.pw();
  struct M2x2 {
    long double a = 0, b = 0, c = 0, d = 0;  // [[a, b], [c, d]]
  };
  auto mul = [](const M2x2& x, const M2x2& y) {
    M2x2 r;
    r.a = x.a * y.a + x.b * y.c;
    r.b = x.a * y.b + x.b * y.d;
    r.c = x.c * y.a + x.d * y.c;
    r.d = x.c * y.b + x.d * y.d;
    return r;
  };
  auto axpy = [](M2x2& r, const M2x2& x, long double s) {
    r.a += x.a * s;
    r.b += x.b * s;
    r.c += x.c * s;
    r.d += x.d * s;
  };
  M2x2 M1, M2, M3;
  const M2x2 ident{1, 0, 0, 1};
  for (std::size_t k = 0; k < m.cells(); ++k) {
    const long double e1 = m.e1[k], e2 = m.e2[k], e3 = m.e3[k];
    const long double det = std::max<long double>(e1 * e2 - e3 * e3, 0.0L);
    // A = Omega*J = [[e3, -e1], [e2, -e3]]; cell factor is
    // I - z A - z^2 (det/2) I + z^3 (det/6) A + O(z^4).
    const M2x2 A{e3, -e1, e2, -e3};
    M2x2 nM3 = M3;
    axpy(nM3, mul(M2, A), -1.0L);
    axpy(nM3, M1, -det / 2.0L);
    axpy(nM3, A, det / 6.0L);
    M2x2 nM2 = M2;
    axpy(nM2, mul(M1, A), -1.0L);
    axpy(nM2, ident, -det / 2.0L);
    axpy(M1, A, -1.0L);
    M2 = nM2;
    M3 = nM3;
  }
  const long double c1 = M1.d, c2 = M2.d, c3 = M3.d;
  rep.rhs1 = static_cast<double>(-c1);
  rep.rhs2 = static_cast<double>(c1 * c1 - 2.0L * c2);
  rep.rhs3 = static_cast<double>(-c1 * c1 * c1 + 3.0L * c1 * c2 - 3.0L * c3);

  // Dyadic tail bounds from the counting estimate n(r) <= (2/log 2) log|w22(ir)|.
  auto tail = [&](int p) -> double {
    double s = 0.0, prev = kInf, t = r_max;
    for (int j = 0; j < 60; ++j) {
      const double lw = log_abs_w22_ir(h, 2.0 * t);
      const double nb = std::max(lw, 0.0) * (2.0 / std::log(2.0));
      const double term = nb / std::pow(t, p);
      s += term;
      if (term < 1e-17 * std::max(s, 1e-300)) return s;
      if (j > 6 && term > 0.97 * prev) return kInf;
      prev = term;
      t *= 2.0;
      if (t > 1e280) break;
    }
    return s;
  };
  rep.tail1 = tail(1);
  rep.tail2 = tail(2);
  rep.tail3 = tail(3);
  rep.resid1 = std::abs(rep.sum1 - rep.rhs1);
  rep.resid2 = std::abs(rep.sum2 - rep.rhs2);
  rep.resid3 = std::abs(rep.sum3 - rep.rhs3);
  rep.offset_shift = false;  // w22(0) = 1 by the normalisation W(a, 0) = I
  return rep;
}

// ---------------------------------------------------------------------------
// Discreteness.
// ---------------------------------------------------------------------------
std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::Discrete:
      return "discrete";
    case Verdict::NotDiscrete:
      return "not-discrete";
    case Verdict::GapBracket:
      return "gap-bracket";
    case Verdict::Inconclusive:
      return "inconclusive";
  }
  return "?";
}

DiscretenessReport discreteness(const HamiltonianDesc& h,
                                std::optional<double> phi_opt) {
  DiscretenessReport rep;
  const Classification cls = classify(h);
  if (cls.boundary == Boundary::LimitCircle) {
    rep.verdict = Verdict::Discrete;
    rep.via_limit_circle = true;
    return rep;
  }

  const Piecewise& m = h.pw();
  const double t0 = m.kn.front(), t1 = m.kn.back();
  // Anchor for the integrability test: past most of the compiled trace.
  double anchor = t1;
  {
    const double target = 0.9 * m.total_trace();
    double lo = t0, hi = t1;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (m.trace_prefix(mid) < target ? lo : hi) = mid;
    }
    anchor = 0.5 * (lo + hi);
  }

  double phi = 0.0;
  bool have = false;
  if (phi_opt) {
    phi = *phi_opt;
    have = std::isfinite(dir_tail(h, phi, anchor));
  } else {
    std::vector<double> cands;
    if (m.tail_angle) cands.push_back(*m.tail_angle + kPi / 2.0);
    for (int k = 0; k < 180; ++k) cands.push_back(k * kPi / 180.0);
    for (double c : cands) {
      if (std::isfinite(dir_tail(h, c, anchor))) {
        phi = c;
        have = true;
        break;
      }
    }
  }
  if (!have) {
    rep.no_integrable_direction = true;
    rep.verdict = Verdict::NotDiscrete;
    return rep;
  }
  rep.phi = phi;
  const double psi = phi + kPi / 2.0;

  // Probes marching geometrically toward the singular endpoint, continuing
  // past the compiled range through the raw body where possible.
  std::vector<double> probes;
  const bool raw_ok = !std::holds_alternative<HamburgerBody>(h.raw());
  if (std::isfinite(h.b) && raw_ok) {
    for (int i = 1; i <= 56; ++i) {
      const double t = h.b - (h.b - t0) * std::pow(2.0, -i);
      if (t > t0) probes.push_back(t);
    }
  } else if (!std::isfinite(h.b) && raw_ok) {
    const double w0 = std::max((t1 - t0) * std::pow(2.0, -30), 1e-12);
    for (int i = 0; i <= 52; ++i) {
      const double t = t0 + w0 * std::pow(2.0, i);
      if (t > t0) probes.push_back(t);
    }
  } else {
    // Mesh-bound probes at dyadic remaining-trace quantiles.
    const double tot = m.total_trace();
    for (int i = 1; i <= 44; ++i) {
      const double target = tot * (1.0 - std::pow(2.0, -i));
      double lo = t0, hi = t1;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (m.trace_prefix(mid) < target ? lo : hi) = mid;
      }
      probes.push_back(0.5 * (lo + hi));
    }
  }

  std::vector<double> idx, la;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const double t = probes[i];
    const double F = dir_tail(h, phi, t);
    const double G = dir_head(h, psi, t);
    if (!std::isfinite(F) || !(G > 0.0) || !(F > 0.0)) continue;
    const double alpha = F * G;
    rep.sample_t.push_back(t);
    rep.alpha_values.push_back(alpha);
    idx.push_back(static_cast<double>(i));
    la.push_back(std::log(std::max(alpha, 1e-300)));
  }
  if (la.size() < 6) {
    rep.verdict = Verdict::Inconclusive;
    return rep;
  }

  const LinFit fit = linear_fit(idx, la, la.size() / 2);

  // Tail suprema/infima with a relative-agreement convergence check.
  const std::size_t n = rep.alpha_values.size();
  std::vector<double> sups(n), infs(n);
  double cs = -kInf, ci = kInf;
  for (std::size_t i = n; i-- > 0;) {
    cs = std::max(cs, rep.alpha_values[i]);
    ci = std::min(ci, rep.alpha_values[i]);
    sups[i] = cs;
    infs[i] = ci;
  }
  const std::size_t tail_from = n - std::min<std::size_t>(n / 2, 12);
  rep.alpha_limsup = sups[tail_from];
  rep.alpha_liminf = infs[tail_from];
  bool sup_converged = true;
  for (std::size_t i = tail_from; i + 1 < std::min(tail_from + 3, n); ++i) {
    if (std::abs(sups[i] - sups[i + 1]) >
        1e-3 * std::max(std::abs(sups[i]), 1e-300))
      sup_converged = false;
  }

  if (fit.ok && fit.slope < -0.1) {
    rep.verdict = Verdict::Discrete;
  } else if (fit.ok && fit.slope > 0.1) {
    rep.verdict = Verdict::NotDiscrete;
  } else if (sup_converged) {
    rep.verdict = Verdict::GapBracket;
  } else {
    rep.verdict = Verdict::Inconclusive;
  }

  const double gam_minus = 0.25;
  const double gam_plus = 2.0 / (3.0 - std::sqrt(5.0));
  rep.gap_lower =
      rep.alpha_limsup > 0 ? gam_minus / std::sqrt(rep.alpha_limsup) : kInf;
  rep.gap_upper =
      rep.alpha_liminf > 0 ? gam_plus / std::sqrt(rep.alpha_liminf) : kInf;

  if (std::holds_alternative<DiagonalBody>(h.raw())) {
    const double mod = std::fmod(std::fmod(phi, kPi) + kPi, kPi);
    if (std::min(mod, kPi - mod) < 1e-9 || std::abs(mod - kPi / 2) < 1e-9) {
      rep.diagonal_refined = true;
      rep.diag_lower = rep.alpha_limsup > 0
                           ? 0.5 / std::sqrt(rep.alpha_limsup)
                           : kInf;
      rep.diag_upper = rep.alpha_liminf > 0
                           ? 0.5 / std::sqrt(rep.alpha_liminf)
                           : kInf;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Growth fitting.
// ---------------------------------------------------------------------------
GrowthFit fit_growth(const std::vector<GrowthSample>& samples,
                     const ComparisonFunction& comparison) {
  std::vector<GrowthSample> s = samples;
  std::sort(s.begin(), s.end(),
            [](const GrowthSample& a, const GrowthSample& b) {
              return a.r < b.r;
            });
  std::vector<double> xs, ys, rs, vs;
  for (const auto& g : s) {
    if (g.r > 1.0 && g.value > 0.0) {
      xs.push_back(std::log(g.r));
      ys.push_back(std::log(g.value));
      rs.push_back(g.r);
      vs.push_back(g.value);
    }
  }
  if (xs.size() < 4)
    throw std::invalid_argument("fit_growth: need at least 4 usable samples");

  GrowthFit fit;
  const std::size_t from = xs.size() / 2;
  const LinFit lf = linear_fit(xs, ys, from);
  fit.order = lf.slope;
  fit.order_ci = 2.0 * lf.slope_se;
  fit.window_begin = rs[from];
  double tmax = -kInf, tmin = kInf;
  for (std::size_t i = from; i < rs.size(); ++i) {
    const double g = comparison(rs[i]);
    if (!(g > 0.0)) continue;
    const double ratio = vs[i] / g;
    tmax = std::max(tmax, ratio);
    tmin = std::min(tmin, ratio);
  }
  fit.type = tmax;
  fit.type_spread = (tmin > 0 && std::isfinite(tmax)) ? tmax / tmin : kInf;
  fit.short_range = std::log10(rs.back() / rs.front()) < 3.0;
  for (std::size_t i = 0; i + 1 < vs.size(); ++i)
    if (vs[i + 1] < vs[i] * (1.0 - 1e-9)) fit.non_monotone = true;
  return fit;
}

GrowthFit fit_order(const HamiltonianDesc& h, double r_lo, double r_hi,
                    int n_samples) {
  if (!(r_hi > r_lo) || !(r_lo > 1.0) || n_samples < 4)
    throw std::invalid_argument("fit_order: bad sampling window");
  std::vector<GrowthSample> samples;
  for (int i = 0; i < n_samples; ++i) {
    const double r =
        r_lo * std::pow(r_hi / r_lo, i / double(n_samples - 1));
    samples.push_back({r, std::max(log_abs_w22_ir(h, r), 0.0)});
  }
  // First pass for the exponent, second pass for type against r^order.
  std::vector<double> xs, ys;
  for (const auto& g : samples)
    if (g.value > 0) {
      xs.push_back(std::log(g.r));
      ys.push_back(std::log(g.value));
    }
  if (xs.size() < 4)
    throw std::runtime_error("fit_order: growth samples vanish on the window");
  const LinFit lf = linear_fit(xs, ys, xs.size() / 2);
  ComparisonFunction g;
  g.alpha = lf.slope;
  return fit_growth(samples, g);
}

// ---------------------------------------------------------------------------
// Series test via the two-sided endpoint integral.
// ---------------------------------------------------------------------------
DenseReport dense_tests(const HamiltonianDesc& h, double phi, double rho) {
  if (!(rho > 0.0))
    throw std::invalid_argument("dense_tests: exponent must be positive");
  DenseReport rep;
  rep.rho = rho;
  rep.phi = phi;
  const double psi = phi + kPi / 2.0;
  const Piecewise& m = h.pw();
  const double t1 = m.kn.back();
  const double beyond = beyond_mesh_mass(h, phi, t1);
  if (!std::isfinite(beyond))
    throw std::invalid_argument(
        "dense_tests: chosen direction carries infinite mass");

  const double f_total = quad_form(m.total(), phi) + beyond;
  if (!(f_total > 0.0))
    throw std::invalid_argument("dense_tests: direction carries no mass");
  const double s = 0.5 * rho;

  // Per-cell accumulation; the decreasing tail mass F is exact at knots and
  // integrates in closed form against its own density.
  std::vector<double> windows(64, 0.0);
  long double integral = 0.0;
  double F_lo = f_total;
  for (std::size_t k = 0; k < m.cells(); ++k) {
    const double fmass = quad_form(m.cell(k), phi);
    const double F_hi = std::max(F_lo - fmass, 0.0);
    if (fmass > 0.0 && F_lo > 0.0) {
      const double g_mid = quad_form(m.prefix(k), psi) +
                           0.5 * quad_form(m.cell(k), psi);
      const double contrib = (g_mid > 0.0)
                                 ? std::pow(g_mid, s) *
                                       (std::pow(F_lo, s) - std::pow(F_hi, s)) / s
                                 : 0.0;
      integral += contrib;
      const double f_mid = 0.5 * (F_lo + F_hi);
      int wi = static_cast<int>(
          std::floor(-std::log2(std::max(f_mid / f_total, 1e-18))));
      wi = std::min(std::max(wi, 0), 63);
      windows[wi] += contrib;
    }
    F_lo = F_hi;
  }

  // Convergence from the dyadic window sums: geometric decay rate c (nats
  // per halving of the remaining mass).
  std::vector<double> wj;
  for (double w : windows)
    if (w > 0.0) wj.push_back(w);
  rep.integral = static_cast<double>(integral);
  if (wj.size() >= 5) {
    std::vector<double> ix(wj.size()), ly(wj.size());
    for (std::size_t i = 0; i < wj.size(); ++i) {
      ix[i] = static_cast<double>(i);
      ly[i] = std::log(wj[i]);
    }
    const LinFit lf = linear_fit(ix, ly, wj.size() > 8 ? wj.size() - 8 : 0);
    if (lf.ok && lf.slope < -0.02) {
      rep.converges = true;
      const double q = std::exp(lf.slope);
      rep.integral += wj.back() * q / (1.0 - std::min(q, 0.96));
    } else {
      rep.converges = false;
    }
  } else {
    rep.converges = true;  // mass exhausted within a few windows
  }

  // Dyadic split points of the remaining mass and the paired sequence.
  double prev_c = m.kn.front();
  for (int nw = 1; nw <= 40; ++nw) {
    const double target = f_total * std::pow(2.0, -nw);
    if (target <= std::max(beyond, 1e-14 * f_total)) break;
    double lo = prev_c, hi = t1;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double F = quad_form(m.omega(mid, t1), phi) + beyond;
      (F > target ? lo : hi) = mid;
      if (hi - lo < 1e-14 * (t1 - m.kn.front())) break;
    }
    const double c_n = 0.5 * (lo + hi);
    const double g_between = quad_form(m.omega(prev_c, c_n), psi);
    rep.c_points.push_back(c_n);
    rep.omega.push_back(std::pow(2.0, -0.5 * nw) *
                        std::sqrt(std::max(g_between, 0.0)));
    prev_c = c_n;
  }
  if (rep.omega.size() >= 6) {
    double ratio_acc = 0.0;
    int cnt = 0;
    for (std::size_t i = rep.omega.size() - 5; i + 1 < rep.omega.size(); ++i) {
      if (rep.omega[i] > 0 && rep.omega[i + 1] > 0) {
        ratio_acc += std::pow(rep.omega[i + 1] / rep.omega[i], rho);
        ++cnt;
      }
    }
    rep.omega_summable = cnt > 0 && (ratio_acc / cnt) < 0.98;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Kernel-based series test.
// ---------------------------------------------------------------------------
SparseReport sparse_tests(const HamiltonianDesc& h,
                          const ComparisonFunction& g, double r0, double r1) {
  SparseReport rep;
  rep.index = g.alpha;

  // Companion function on the Lindelof scale.
  ComparisonFunction gs = g;
  gs.eval_override = nullptr;
  const double tol = 1e-12;
  if (g.alpha > tol && g.alpha < 2.0 - tol) {
    // gs = g
  } else if (std::abs(g.alpha) <= tol || std::abs(g.alpha - 2.0) <= tol) {
    std::size_t first = 0;
    while (first < g.beta.size() && g.beta[first] == 0.0) ++first;
    if (first == g.beta.size())
      throw std::invalid_argument(
          "sparse_tests: boundary index needs iterated-log structure");
    if (std::abs(g.alpha) <= tol && !(g.beta[first] > 0.0))
      throw std::invalid_argument(
          "sparse_tests: index-0 comparison must grow");
    if (std::abs(g.alpha - 2.0) <= tol && !(g.beta[first] < 0.0))
      throw std::invalid_argument(
          "sparse_tests: index-2 comparison must stay below r^2");
    gs.beta = pad_to(g.beta, std::max(g.beta.size(), first + 1));
    if (std::abs(g.alpha) <= tol) gs.beta[0] += 1.0;  // extra log factor
    for (std::size_t j = 0; j <= first; ++j) gs.beta[j] += 1.0;
  } else {
    throw std::invalid_argument(
        "sparse_tests: comparison index must lie in [0, 2]");
  }

  const double det_total = det_psd(h.pw().total());
  if (!(det_total > 0.0))
    throw std::domain_error("sparse_tests: determinant mass vanishes");
  const double r_min = std::max(r0, 1.05 / std::sqrt(det_total));
  if (!(r1 > 2.0 * r_min))
    throw std::invalid_argument("sparse_tests: radius window too small");
  const CompatiblePair pair = compatible_pair(h, 0.99 * r_min);

  const int n = 28;
  std::vector<double> fr(n);
  double slack = -kInf;
  for (int i = 0; i < n; ++i) {
    const double r = r_min * std::pow(r1 / r_min, i / double(n - 1));
    const KernelIntegral ki = k_kernel_integral(h, r, pair);
    rep.r_samples.push_back(r);
    rep.kernel_totals.push_back(ki.total());
    fr[i] = ki.total() / (r * gs(r));
    slack = std::max(slack, ki.first - 2.0 * std::log(r));
  }
  rep.first_summand_log_slack = slack;

  // Integrate f(r) dr = (f(r) r) dlog r by trapezoid on the geometric grid,
  // and classify the tail from the per-octave decay of the integrand.
  long double total = 0.0;
  std::vector<double> lx(n), ly(n);
  for (int i = 0; i < n; ++i) {
    lx[i] = std::log(rep.r_samples[i]);
    ly[i] = std::log(std::max(fr[i] * rep.r_samples[i], 1e-300));
  }
  for (int i = 0; i + 1 < n; ++i)
    total += 0.5 * (fr[i] * rep.r_samples[i] + fr[i + 1] * rep.r_samples[i + 1]) *
             (lx[i + 1] - lx[i]);
  const LinFit lf = linear_fit(lx, ly, n / 2);
  rep.integral = static_cast<double>(total);
  if (lf.ok && lf.slope < -0.05) {
    rep.converges = true;
    // Geometric extrapolation of the remaining tail in log r.
    const double last = fr[n - 1] * rep.r_samples[n - 1];
    rep.integral += last / std::max(-lf.slope, 0.05);
  } else {
    rep.converges = false;
  }
  return rep;
}

}  // namespace cansys
