#include "cansys/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "cansys/quadrature.hpp"

namespace cansys {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double get_param(const std::map<std::string, double>& p, const std::string& key,
                 const std::string& fn) {
  auto it = p.find(key);
  if (it == p.end())
    throw std::invalid_argument("function '" + fn + "' needs parameter '" + key + "'");
  return it->second;
}

double get_param_or(const std::map<std::string, double>& p, const std::string& key,
                    double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

}  // namespace

NamedFn make_named_fn(const std::string& name,
                      const std::map<std::string, double>& params) {
  NamedFn out;
  out.name = name;
  out.params = params;
  if (name == "const") {
    double c = get_param(params, "c", name);
    out.fn = [c](double) { return c; };
  } else if (name == "linear") {
    double c0 = get_param_or(params, "c0", 0.0);
    double c1 = get_param(params, "c1", name);
    out.fn = [c0, c1](double t) { return c0 + c1 * t; };
  } else if (name == "power") {
    double c = get_param_or(params, "c", 1.0);
    double p = get_param(params, "p", name);
    out.fn = [c, p](double t) { return c * std::pow(t, p); };
  } else if (name == "power1m") {
    double c = get_param_or(params, "c", 1.0);
    double p = get_param(params, "p", name);
    out.fn = [c, p](double t) { return c * std::pow(1.0 - t, p); };
  } else if (name == "powerlog") {
    double c = get_param_or(params, "c", 1.0);
    double p = get_param(params, "p", name);
    double q = get_param_or(params, "q", 0.0);
    double ref = get_param_or(params, "ref", std::exp(1.0));
    out.fn = [c, p, q, ref](double t) {
      double lg = std::log(ref / t);
      return c * std::pow(t, p) * std::pow(lg, q);
    };
  } else if (name == "chirp_angle") {
    double gamma = get_param(params, "gamma", name);
    double beta = get_param(params, "beta", name);
    out.fn = [gamma, beta](double t) {
      return std::pow(t, gamma) * std::sin(std::pow(t, -beta));
    };
  } else if (name == "weier_angle") {
    double alpha = get_param(params, "alpha", name);
    double freq = get_param(params, "freq", name);
    int terms = static_cast<int>(get_param_or(params, "terms", 24));
    out.fn = [alpha, freq, terms](double t) {
      long double acc = 0.0L, amp = 1.0L, om = 1.0L;
      for (int n = 0; n < terms; ++n) {
        long double arg = std::fmod(om * static_cast<long double>(t), 2.0L);
        acc += amp * std::cos(static_cast<long double>(M_PI) * arg);
        amp *= alpha;
        om *= freq;
        if (amp < 1e-19L) break;
      }
      return static_cast<double>(acc);
    };
  } else {
    throw std::invalid_argument("unknown function name '" + name + "'");
  }
  return out;
}

NamedFn make_derived_fn(const std::string& label,
                        std::function<double(double)> f) {
  NamedFn out;
  out.name = "derived:" + label;
  out.fn = std::move(f);
  return out;
}

std::vector<std::string> registered_fn_names() {
  return {"const",       "linear",      "power",     "power1m",
          "powerlog",    "chirp_angle", "weier_angle"};
}

// ---------------------------------------------------------------------------
// Piecewise accessors.
// ---------------------------------------------------------------------------

std::size_t Piecewise::locate(double t) const {
  if (t <= kn.front()) return 0;
  if (t >= kn.back()) return cells() - 1;
  auto it = std::upper_bound(kn.begin(), kn.end(), t);
  std::size_t k = static_cast<std::size_t>(it - kn.begin()) - 1;
  if (k >= cells()) k = cells() - 1;
  return k;
}

Mat2 Piecewise::range_omega(std::size_t i, std::size_t j) const {
  Mat2 m = Mat2::Zero();
  if (j <= i) return m;
  if (j - i <= 64) {
    double w1 = 0, w2 = 0, w3 = 0;
    for (std::size_t k = i; k < j; ++k) {
      w1 += e1[k];
      w2 += e2[k];
      w3 += e3[k];
    }
    m << w1, w3, w3, w2;
  } else {
    m = prefix(j) - prefix(i);
  }
  return m;
}

Mat2 Piecewise::omega(double lo, double hi) const {
  double sign = 1.0;
  if (hi < lo) {
    std::swap(lo, hi);
    sign = -1.0;
  }
  lo = std::clamp(lo, kn.front(), kn.back());
  hi = std::clamp(hi, kn.front(), kn.back());
  if (hi <= lo) return Mat2::Zero();
  std::size_t i = locate(lo), j = locate(hi);
  auto partial = [&](std::size_t k, double u, double v) -> Mat2 {
    double w = cell_width(k);
    double frac = w > 0 ? (v - u) / w : 0.0;
    Mat2 m;
    m << e1[k] * frac, e3[k] * frac, e3[k] * frac, e2[k] * frac;
    return m;
  };
  Mat2 out;
  if (i == j) {
    out = partial(i, lo, hi);
  } else {
    out = partial(i, lo, kn[i + 1]) + range_omega(i + 1, j) +
          partial(j, kn[j], hi);
  }
  return sign * out;
}

double Piecewise::trace_prefix(double t) const {
  Mat2 m = omega(kn.front(), t);
  return m(0, 0) + m(1, 1);
}

double det_psd(const Mat2& m) {
  double d = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  return d > 0 ? d : 0.0;
}

// ---------------------------------------------------------------------------
// Cell integration: vector-valued Gauss-Kronrod with bounded local bisection.
// ---------------------------------------------------------------------------
namespace {

using Vec3 = Eigen::Vector3d;

template <class F>
void vec3_panel(F& f, double u, double v, Vec3& kron, double& err) {
  double c = 0.5 * (u + v), h = 0.5 * (v - u);
  Vec3 gauss = Vec3::Zero();
  kron = Vec3::Zero();
  for (int i = 0; i < 15; ++i) {
    Vec3 val = f(c + h * GK15::node[i]);
    kron += GK15::wk[i] * val;
    if (i % 2 == 1) gauss += GK15::wg[i / 2] * val;
  }
  kron *= h;
  gauss *= h;
  err = (kron - gauss).cwiseAbs().maxCoeff();
}

template <class F>
Vec3 integrate_cell(F& f, double u, double v, double tol, int depth) {
  Vec3 val;
  double err;
  vec3_panel(f, u, v, val, err);
  if (err <= tol || depth <= 0) return val;
  double mid = 0.5 * (u + v);
  return integrate_cell(f, u, mid, 0.5 * tol, depth - 1) +
         integrate_cell(f, mid, v, 0.5 * tol, depth - 1);
}

// Density of the body as (h1, h2, h3) at a point.
std::function<Vec3(double)> density_of(const HamiltonianBody& body) {
  if (auto* d = std::get_if<DiagonalBody>(&body)) {
    auto h1 = d->h1.fn, h2 = d->h2.fn;
    return [h1, h2](double t) { return Vec3(h1(t), h2(t), 0.0); };
  }
  if (auto* r = std::get_if<RotatingBody>(&body)) {
    auto tr = r->trace.fn, ang = r->angle.fn;
    return [tr, ang](double t) {
      double w = tr(t), phi = ang(t);
      double c = std::cos(phi), s = std::sin(phi);
      return Vec3(w * c * c, w * s * s, w * s * c);
    };
  }
  if (auto* g = std::get_if<GeneralBody>(&body)) {
    auto h1 = g->h1.fn, h2 = g->h2.fn, h3 = g->h3.fn;
    return [h1, h2, h3](double t) { return Vec3(h1(t), h2(t), h3(t)); };
  }
  throw std::logic_error("density_of: sequence body has no pointwise density");
}

// Number of parts a cell wants, from sampled angle path and trace variation.
int cell_need(const HamiltonianBody& body, const std::function<Vec3(double)>& dens,
              double u, double v, const GridSpec& spec) {
  constexpr int kSamples = 9;
  double path_angle = 0.0, path_logtr = 0.0;
  if (auto* r = std::get_if<RotatingBody>(&body)) {
    // The raw angle function is a continuous lift: use it directly.
    double prev_phi = r->angle(u), prev_tr = std::abs(r->trace(u)) + 1e-300;
    for (int i = 1; i < kSamples; ++i) {
      double t = u + (v - u) * i / (kSamples - 1);
      double phi = r->angle(t), tr = std::abs(r->trace(t)) + 1e-300;
      path_angle += std::abs(phi - prev_phi);
      path_logtr += std::abs(std::log(tr / prev_tr));
      prev_phi = phi;
      prev_tr = tr;
    }
  } else {
    Vec3 p = dens(u);
    double prev_th = 0.5 * std::atan2(2 * p[2], p[0] - p[1]);
    double prev_tr = p[0] + p[1] + 1e-300;
    bool first = true;
    for (int i = 1; i < kSamples; ++i) {
      double t = u + (v - u) * i / (kSamples - 1);
      Vec3 q = dens(t);
      double th = 0.5 * std::atan2(2 * q[2], q[0] - q[1]);
      double tr = q[0] + q[1] + 1e-300;
      double dth = th - prev_th;
      while (dth > M_PI / 2) dth -= M_PI;
      while (dth < -M_PI / 2) dth += M_PI;
      if (!first || true) path_angle += std::abs(dth);
      path_logtr += std::abs(std::log(tr / prev_tr));
      prev_th = th;
      prev_tr = tr;
      first = false;
    }
  }
  double need = std::max(path_angle / spec.angle_step,
                         path_logtr / spec.trace_log_step);
  int n = static_cast<int>(std::ceil(need));
  return std::clamp(n, 1, 16);
}

std::vector<double> initial_knots(double lo, double hi, const GridSpec& spec) {
  std::vector<double> kn;
  int n = std::max(spec.base_cells, 1);
  kn.reserve(n + 1 + spec.knots.size());
  if (spec.grading == GridSpec::Grading::Uniform) {
    for (int i = 0; i <= n; ++i) kn.push_back(lo + (hi - lo) * i / n);
  } else {
    // Geometric sizes, smallest cell ~ geometric_floor * range at the marked end.
    double rho = std::pow(spec.geometric_floor, 1.0 / std::max(n - 1, 1));
    std::vector<double> sizes(n);
    double s = 1.0, total = 0.0;
    for (int i = 0; i < n; ++i) {
      sizes[i] = s;
      total += s;
      s *= rho;
    }
    // sizes decrease; orient so the small end is at the graded boundary.
    if (spec.grading == GridSpec::Grading::GeometricToA)
      std::reverse(sizes.begin(), sizes.end());
    kn.push_back(lo);
    double acc = lo;
    for (int i = 0; i < n; ++i) {
      acc += sizes[i] / total * (hi - lo);
      kn.push_back(i + 1 == n ? hi : acc);
    }
  }
  for (double t : spec.knots)
    if (t > lo && t < hi) kn.push_back(t);
  std::sort(kn.begin(), kn.end());
  kn.erase(std::unique(kn.begin(), kn.end(),
                       [&](double x, double y) {
                         return std::abs(y - x) <= 1e-15 * (hi - lo);
                       }),
           kn.end());
  return kn;
}

// Trace mass of the density on windows shrinking geometrically toward `edge`.
// Returns the total if convergent, infinity otherwise.
double probe_mass(const std::function<Vec3(double)>& dens, double inner,
                  double edge) {
  if (inner == edge) return 0.0;
  auto tr = [&](double t) {
    Vec3 v = dens(t);
    return v[0] + v[1];
  };
  double sum = 0.0;
  bool to_infinity = std::isinf(edge);
  double last = inner;
  double prev_piece = kInf, prev2_piece = kInf;
  for (int k = 0; k < 256; ++k) {
    double next;
    if (to_infinity) {
      next = last * 2.0 + 1.0;
      if (next > 1e250) return kInf;
    } else {
      next = edge - (edge - last) * 0.5;
      // Window width at the floating-point resolution limit near the edge:
      // decide from the trend of the last two whole-window pieces. Halving
      // windows of an integrable power singularity shrink geometrically, so
      // a clear decay certifies the remainder; anything else is treated as
      // divergent.
      const double width = std::abs(edge - last) * 0.5;
      if (width < 32.0 * 2.2e-16 * std::max(std::abs(edge), std::abs(last))) {
        if (k >= 3 && std::isfinite(prev_piece) && std::isfinite(prev2_piece) &&
            prev2_piece > 0.0) {
          const double rho = prev_piece / prev2_piece;
          if (rho < 0.95) return sum + prev_piece * rho / (1.0 - rho);
          if (prev_piece <= 1e-12 * (1.0 + sum)) return sum;
        }
        return kInf;
      }
    }
    QuadResult q = integrate(tr, std::min(last, next), std::max(last, next),
                             1e-13 * (1.0 + sum), 18);
    if (!std::isfinite(q.value)) return kInf;
    sum += q.value;
    if (sum > 1e14) return kInf;
    if (!to_infinity && std::abs(edge - next) < 1e-14 * std::abs(edge - inner) &&
        q.value < 1e-11 * (1.0 + sum))
      return sum;
    if (q.value < 1e-13 * (1.0 + sum) && q.value <= prev_piece) return sum;
    prev2_piece = prev_piece;
    prev_piece = q.value;
    last = next;
  }
  // No clear convergence: treat a still-growing series as divergent.
  return prev_piece > 1e-10 * (1.0 + sum) ? kInf : sum;
}

Piecewise compile_function_mesh(double a, double b, const HamiltonianBody& body,
                                const GridSpec& spec) {
  Piecewise pw;
  pw.a = a;
  pw.b = b;
  double lo = spec.t_lo.value_or(a);
  double hi = spec.t_hi.value_or(b);
  if (std::isinf(hi))
    throw std::invalid_argument(
        "function body on an infinite interval needs an explicit upper "
        "truncation point");
  if (!(lo < hi))
    throw std::invalid_argument("empty compile range");
  pw.t0 = lo;
  pw.t1 = hi;
  auto dens = density_of(body);

  std::vector<double> kn = initial_knots(lo, hi, spec);
  // Refinement sweeps with a global budget.
  for (int sweep = 0; sweep < 48; ++sweep) {
    std::size_t m = kn.size() - 1;
    if (static_cast<int>(m) >= spec.max_cells) break;
    std::vector<int> need(m, 1);
    long want = 0;
    for (std::size_t k = 0; k < m; ++k) {
      need[k] = cell_need(body, dens, kn[k], kn[k + 1], spec);
      want += need[k] - 1;
    }
    if (want == 0) break;
    double scale =
        std::min(1.0, static_cast<double>(spec.max_cells - m) / want);
    std::vector<double> out;
    out.reserve(kn.size() + static_cast<std::size_t>(want * scale) + 1);
    bool any = false;
    for (std::size_t k = 0; k < m; ++k) {
      out.push_back(kn[k]);
      int parts = 1 + static_cast<int>(std::floor(scale * (need[k] - 1)));
      for (int j = 1; j < parts; ++j)
        out.push_back(kn[k] + (kn[k + 1] - kn[k]) * j / parts);
      if (parts > 1) any = true;
    }
    out.push_back(kn.back());
    kn = std::move(out);
    if (!any) break;
  }

  std::size_t m = kn.size() - 1;
  pw.kn = kn;
  pw.e1.resize(m);
  pw.e2.resize(m);
  pw.e3.resize(m);
  pw.c1.assign(m + 1, 0.0);
  pw.c2.assign(m + 1, 0.0);
  pw.c3.assign(m + 1, 0.0);
  long double a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t k = 0; k < m; ++k) {
    Vec3 cellv = integrate_cell(dens, kn[k], kn[k + 1], 1e-14, 4);
    double w1 = cellv[0], w2 = cellv[1], w3 = cellv[2];
    double scale = std::abs(w1) + std::abs(w2);
    if (w1 < -1e-9 * scale || w2 < -1e-9 * scale)
      throw std::invalid_argument("Hamiltonian density is not PSD");
    w1 = std::max(w1, 0.0);
    w2 = std::max(w2, 0.0);
    double cap = std::sqrt(w1 * w2);
    w3 = std::clamp(w3, -cap, cap);
    pw.e1[k] = w1;
    pw.e2[k] = w2;
    pw.e3[k] = w3;
    a1 += w1;
    a2 += w2;
    a3 += w3;
    pw.c1[k + 1] = static_cast<double>(a1);
    pw.c2[k + 1] = static_cast<double>(a2);
    pw.c3[k + 1] = static_cast<double>(a3);
  }

  if (lo > a) {
    pw.head_dropped = probe_mass(dens, lo, a);
    if (std::isinf(pw.head_dropped))
      throw std::invalid_argument("trace mass diverges at the left endpoint");
  }
  if (hi < b) {
    pw.tail_dropped = probe_mass(dens, hi, b);
    if (std::isinf(pw.tail_dropped)) {
      pw.tail_dropped = 0.0;
      pw.tail_infinite = true;
    }
  }
  return pw;
}

Piecewise compile_hamburger_mesh(double a, const HamburgerBody& body) {
  std::size_t n = body.length.size();
  if (n == 0 || body.angle.size() != n)
    throw std::invalid_argument("sequence body needs matching lengths/angles");
  if (n > (1u << 22))
    throw std::invalid_argument("sequence body too long to compile");
  Piecewise pw;
  pw.a = a;
  pw.kn.resize(n + 1);
  pw.e1.resize(n);
  pw.e2.resize(n);
  pw.e3.resize(n);
  pw.c1.assign(n + 1, 0.0);
  pw.c2.assign(n + 1, 0.0);
  pw.c3.assign(n + 1, 0.0);
  pw.kn[0] = a;
  long double pos = a, a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double l = body.length[k];
    if (!(l > 0) || !std::isfinite(l))
      throw std::invalid_argument("segment lengths must be positive");
    double c = std::cos(body.angle[k]), s = std::sin(body.angle[k]);
    pw.e1[k] = l * c * c;
    pw.e2[k] = l * s * s;
    pw.e3[k] = l * s * c;
    pos += l;
    a1 += pw.e1[k];
    a2 += pw.e2[k];
    a3 += pw.e3[k];
    pw.kn[k + 1] = static_cast<double>(pos);
    pw.c1[k + 1] = static_cast<double>(a1);
    pw.c2[k + 1] = static_cast<double>(a2);
    pw.c3[k + 1] = static_cast<double>(a3);
  }
  pw.t0 = a;
  pw.t1 = pw.kn.back();
  if (std::isinf(body.tail_trace)) {
    pw.tail_infinite = true;
    pw.b = kInf;
  } else {
    pw.tail_dropped = body.tail_trace;
    pw.b = pw.t1 + body.tail_trace;
  }
  return pw;
}

}  // namespace

HamiltonianDesc make_hamiltonian(double a, double b, HamiltonianBody body,
                                 const GridSpec& spec, std::string origin) {
  HamiltonianDesc d;
  d.origin = std::move(origin);
  auto shared_body = std::make_shared<HamiltonianBody>(std::move(body));
  d.body = shared_body;
  if (auto* h = std::get_if<HamburgerBody>(shared_body.get())) {
    auto pw = std::make_shared<Piecewise>(compile_hamburger_mesh(a, *h));
    d.a = a;
    d.b = pw->b;
    d.mesh = pw;
  } else {
    auto pw =
        std::make_shared<Piecewise>(compile_function_mesh(a, b, *shared_body, spec));
    d.a = a;
    d.b = b;
    d.mesh = pw;
  }
  return d;
}

HamiltonianDesc assemble_hamiltonian(double a, double b, HamiltonianBody body,
                                     std::vector<double> knots,
                                     std::vector<double> e1,
                                     std::vector<double> e2,
                                     std::vector<double> e3,
                                     double head_dropped, double tail_dropped,
                                     bool tail_infinite, std::string origin) {
  const std::size_t m = e1.size();
  if (m == 0 || e2.size() != m || e3.size() != m || knots.size() != m + 1)
    throw std::invalid_argument("cell arrays and knots are inconsistent");
  if (!(a <= knots.front()) || !(knots.back() <= b))
    throw std::invalid_argument("knots leave the declared interval");
  for (std::size_t k = 0; k < m; ++k)
    if (!(knots[k] < knots[k + 1]))
      throw std::invalid_argument("knots are not strictly increasing");
  if (head_dropped < 0 || tail_dropped < 0)
    throw std::invalid_argument("dropped trace mass must be nonnegative");

  Piecewise pw;
  pw.a = a;
  pw.b = b;
  pw.t0 = knots.front();
  pw.t1 = knots.back();
  pw.kn = std::move(knots);
  pw.e1 = std::move(e1);
  pw.e2 = std::move(e2);
  pw.e3 = std::move(e3);
  pw.c1.assign(m + 1, 0.0);
  pw.c2.assign(m + 1, 0.0);
  pw.c3.assign(m + 1, 0.0);
  long double a1 = 0, a2 = 0, a3 = 0;
  for (std::size_t k = 0; k < m; ++k) {
    double w1 = pw.e1[k], w2 = pw.e2[k], w3 = pw.e3[k];
    const double scale = std::abs(w1) + std::abs(w2);
    if (!std::isfinite(w1) || !std::isfinite(w2) || !std::isfinite(w3) ||
        w1 < -1e-9 * scale || w2 < -1e-9 * scale)
      throw std::invalid_argument("precomputed cell is not PSD");
    w1 = std::max(w1, 0.0);
    w2 = std::max(w2, 0.0);
    const double cap = std::sqrt(w1 * w2);
    w3 = std::clamp(w3, -cap, cap);
    pw.e1[k] = w1;
    pw.e2[k] = w2;
    pw.e3[k] = w3;
    a1 += w1;
    a2 += w2;
    a3 += w3;
    pw.c1[k + 1] = static_cast<double>(a1);
    pw.c2[k + 1] = static_cast<double>(a2);
    pw.c3[k + 1] = static_cast<double>(a3);
  }
  pw.head_dropped = head_dropped;
  pw.tail_dropped = tail_infinite ? 0.0 : tail_dropped;
  pw.tail_infinite = tail_infinite;

  HamiltonianDesc d;
  d.a = a;
  d.b = b;
  d.origin = std::move(origin);
  d.body = std::make_shared<HamiltonianBody>(std::move(body));
  d.mesh = std::make_shared<Piecewise>(std::move(pw));
  return d;
}

Mat2 omega(const HamiltonianDesc& h, double s, double t) {
  return h.pw().omega(s, t);
}

Classification classify(const HamiltonianDesc& h) {
  const Piecewise& pw = h.pw();
  Classification c;
  c.trace_mass = pw.total_trace() + pw.head_dropped + pw.tail_dropped;
  c.boundary = pw.tail_infinite ? Boundary::LimitPoint : Boundary::LimitCircle;
  double mass = pw.total_trace();
  double d = det_psd(pw.total());
  c.definite = d > 1e-24 * mass * mass;
  c.whole_indivisible = d <= 1e-18 * mass * mass;
  return c;
}

std::vector<IndivisibleInterval> indivisible_intervals(const HamiltonianDesc& h,
                                                       double det_tol,
                                                       double angle_tol) {
  const Piecewise& pw = h.pw();
  std::vector<IndivisibleInterval> out;
  auto cell_angle = [&](std::size_t k) {
    double th = std::atan2(pw.e3[k], pw.e1[k]);
    if (pw.e1[k] == 0 && pw.e3[k] == 0) th = M_PI / 2;
    if (th < 0) th += M_PI;
    if (th >= M_PI) th -= M_PI;
    return th;
  };
  auto angle_close = [&](double x, double y) {
    double d = std::abs(x - y);
    d = std::min(d, M_PI - d);
    return d <= angle_tol;
  };
  std::size_t m = pw.cells();
  std::size_t k = 0;
  while (k < m) {
    double trk = pw.e1[k] + pw.e2[k];
    bool rank_one = det_psd(pw.cell(k)) <= det_tol * trk * trk && trk > 0;
    if (!rank_one) {
      ++k;
      continue;
    }
    double th = cell_angle(k);
    std::size_t j = k + 1;
    Mat2 acc = pw.cell(k);
    while (j < m) {
      double trj = pw.e1[j] + pw.e2[j];
      if (trj == 0) {
        ++j;
        continue;
      }
      bool r1 = det_psd(pw.cell(j)) <= det_tol * trj * trj;
      if (!r1 || !angle_close(cell_angle(j), th)) break;
      Mat2 test = acc + pw.cell(j);
      double trt = test(0, 0) + test(1, 1);
      if (det_psd(test) > det_tol * trt * trt) break;
      acc = test;
      ++j;
    }
    out.push_back({pw.kn[k], pw.kn[j], th});
    k = j;
  }
  if (pw.tail_infinite && pw.tail_angle) {
    double th = *pw.tail_angle;
    if (!out.empty() && out.back().to >= pw.t1 - 1e-300 &&
        angle_close(out.back().type_angle, th)) {
      out.back().to = kInf;
    } else {
      out.push_back({pw.t1, kInf, th});
    }
  }
  return out;
}

HamiltonianDesc rotate(const HamiltonianDesc& h, double psi) {
  const Piecewise& pw = h.pw();
  auto npw = std::make_shared<Piecewise>(pw);
  double c = std::cos(psi), s = std::sin(psi);
  auto rot = [&](double& w1, double& w2, double& w3) {
    double r1 = c * c * w1 + 2 * c * s * w3 + s * s * w2;
    double r2 = s * s * w1 - 2 * c * s * w3 + c * c * w2;
    double r3 = s * c * (w2 - w1) + (c * c - s * s) * w3;
    w1 = r1;
    w2 = r2;
    w3 = r3;
  };
  for (std::size_t k = 0; k < npw->cells(); ++k)
    rot(npw->e1[k], npw->e2[k], npw->e3[k]);
  for (std::size_t k = 0; k <= npw->cells(); ++k)
    rot(npw->c1[k], npw->c2[k], npw->c3[k]);
  if (npw->tail_angle) {
    double th = std::fmod(*npw->tail_angle - psi, M_PI);
    if (th < 0) th += M_PI;
    npw->tail_angle = th;
  }

  HamiltonianDesc out;
  out.a = h.a;
  out.b = h.b;
  out.mesh = npw;
  out.origin = "rotate(" + h.origin + ")";
  HamiltonianBody nb;
  if (auto* hb = std::get_if<HamburgerBody>(h.body.get())) {
    HamburgerBody r = *hb;
    for (double& phi : r.angle) phi -= psi;
    nb = std::move(r);
  } else if (auto* rb = std::get_if<RotatingBody>(h.body.get())) {
    auto ang = rb->angle.fn;
    RotatingBody r;
    r.trace = rb->trace;
    r.angle = make_derived_fn("rotated_angle",
                              [ang, psi](double t) { return ang(t) - psi; });
    nb = std::move(r);
  } else {
    auto dens = density_of(*h.body);
    GeneralBody g;
    g.h1 = make_derived_fn("rot_h1", [dens, c, s](double t) {
      Vec3 v = dens(t);
      return c * c * v[0] + 2 * c * s * v[2] + s * s * v[1];
    });
    g.h2 = make_derived_fn("rot_h2", [dens, c, s](double t) {
      Vec3 v = dens(t);
      return s * s * v[0] - 2 * c * s * v[2] + c * c * v[1];
    });
    g.h3 = make_derived_fn("rot_h3", [dens, c, s](double t) {
      Vec3 v = dens(t);
      return s * c * (v[1] - v[0]) + (c * c - s * s) * v[2];
    });
    nb = std::move(g);
  }
  out.body = std::make_shared<HamiltonianBody>(std::move(nb));
  return out;
}

HamiltonianDesc reparameterise_trace_normalised(const HamiltonianDesc& h) {
  const Piecewise& pw = h.pw();
  auto npw = std::make_shared<Piecewise>();
  std::size_t m = pw.cells();
  npw->kn.reserve(m + 1);
  npw->e1.reserve(m);
  npw->e2.reserve(m);
  npw->e3.reserve(m);
  npw->kn.push_back(0.0);
  std::vector<double> nc1{0.0}, nc2{0.0}, nc3{0.0};
  for (std::size_t k = 0; k < m; ++k) {
    double tr = pw.e1[k] + pw.e2[k];
    if (tr <= 0) continue;  // null cells vanish under the time change
    npw->e1.push_back(pw.e1[k]);
    npw->e2.push_back(pw.e2[k]);
    npw->e3.push_back(pw.e3[k]);
    npw->kn.push_back(npw->kn.back() + tr);
    nc1.push_back(nc1.back() + pw.e1[k]);
    nc2.push_back(nc2.back() + pw.e2[k]);
    nc3.push_back(nc3.back() + pw.e3[k]);
  }
  npw->c1 = std::move(nc1);
  npw->c2 = std::move(nc2);
  npw->c3 = std::move(nc3);
  npw->a = 0.0;
  npw->t0 = 0.0;
  npw->t1 = npw->kn.back();
  npw->head_dropped = pw.head_dropped;
  npw->tail_dropped = pw.tail_dropped;
  npw->tail_infinite = pw.tail_infinite;
  npw->tail_angle = pw.tail_angle;
  npw->b = pw.tail_infinite ? kInf : npw->t1 + pw.tail_dropped;

  HamiltonianDesc out;
  out.a = 0.0;
  out.b = npw->b;
  out.mesh = npw;
  out.origin = "trace_reparam(" + h.origin + ")";
  auto mesh_ref = out.mesh;
  auto entry = [mesh_ref](double t, int which) {
    const Piecewise& q = *mesh_ref;
    std::size_t k = q.locate(t);
    double w = q.cell_width(k);
    if (w <= 0) return 0.0;
    double v = which == 0 ? q.e1[k] : (which == 1 ? q.e2[k] : q.e3[k]);
    return v / w;
  };
  GeneralBody g;
  g.h1 = make_derived_fn("reparam_h1", [entry](double t) { return entry(t, 0); });
  g.h2 = make_derived_fn("reparam_h2", [entry](double t) { return entry(t, 1); });
  g.h3 = make_derived_fn("reparam_h3", [entry](double t) { return entry(t, 2); });
  out.body = std::make_shared<HamiltonianBody>(std::move(g));
  return out;
}

HamiltonianDesc cut_out(const HamiltonianDesc& h,
                        const std::vector<std::pair<double, double>>& keep) {
  const Piecewise& pw = h.pw();
  std::vector<std::pair<double, double>> iv;
  for (auto [lo, hi] : keep) {
    lo = std::clamp(lo, pw.t0, pw.t1);
    hi = std::clamp(hi, pw.t0, pw.t1);
    if (hi > lo) iv.push_back({lo, hi});
  }
  std::sort(iv.begin(), iv.end());
  for (std::size_t i = 1; i < iv.size(); ++i)
    if (iv[i].first < iv[i - 1].second)
      throw std::invalid_argument("cut_out intervals must be disjoint");

  auto npw = std::make_shared<Piecewise>();
  npw->kn.push_back(0.0);
  std::vector<double> nc1{0.0}, nc2{0.0}, nc3{0.0};
  auto push_cell = [&](double width, double w1, double w2, double w3) {
    if (width <= 0) return;
    npw->e1.push_back(w1);
    npw->e2.push_back(w2);
    npw->e3.push_back(w3);
    npw->kn.push_back(npw->kn.back() + width);
    nc1.push_back(nc1.back() + w1);
    nc2.push_back(nc2.back() + w2);
    nc3.push_back(nc3.back() + w3);
  };
  for (auto [lo, hi] : iv) {
    std::size_t i = pw.locate(lo), j = pw.locate(hi);
    for (std::size_t k = i; k <= j && k < pw.cells(); ++k) {
      double u = std::max(lo, pw.kn[k]);
      double v = std::min(hi, pw.kn[k + 1]);
      if (v <= u) continue;
      double w = pw.cell_width(k);
      double frac = w > 0 ? (v - u) / w : 0.0;
      push_cell(v - u, pw.e1[k] * frac, pw.e2[k] * frac, pw.e3[k] * frac);
    }
  }
  if (npw->e1.empty()) throw std::invalid_argument("cut_out keeps nothing");
  npw->c1 = std::move(nc1);
  npw->c2 = std::move(nc2);
  npw->c3 = std::move(nc3);
  npw->a = 0.0;
  npw->t0 = 0.0;
  npw->t1 = npw->kn.back();
  bool keeps_end = !iv.empty() && iv.back().second >= pw.t1 - 1e-300;
  npw->tail_infinite = keeps_end && pw.tail_infinite;
  npw->tail_dropped = keeps_end ? pw.tail_dropped : 0.0;
  npw->tail_angle = npw->tail_infinite ? pw.tail_angle : std::nullopt;
  npw->b = npw->tail_infinite ? kInf : npw->t1 + npw->tail_dropped;

  HamiltonianDesc out;
  out.a = 0.0;
  out.b = npw->b;
  out.mesh = npw;
  out.origin = "cut_out(" + h.origin + ")";
  auto mesh_ref = out.mesh;
  auto entry = [mesh_ref](double t, int which) {
    const Piecewise& q = *mesh_ref;
    std::size_t k = q.locate(t);
    double w = q.cell_width(k);
    if (w <= 0) return 0.0;
    double v = which == 0 ? q.e1[k] : (which == 1 ? q.e2[k] : q.e3[k]);
    return v / w;
  };
  GeneralBody g;
  g.h1 = make_derived_fn("cut_h1", [entry](double t) { return entry(t, 0); });
  g.h2 = make_derived_fn("cut_h2", [entry](double t) { return entry(t, 1); });
  g.h3 = make_derived_fn("cut_h3", [entry](double t) { return entry(t, 2); });
  out.body = std::make_shared<HamiltonianBody>(std::move(g));
  return out;
}

namespace {

// One half of the splitting transform. Roles: time runs along the
// `time_entry` component, the other component's prefix is the step function.
// kind = 0 builds [[x^2, x],[x, 1]], kind = 1 builds [[1, -y],[-y, y^2]].
HamiltonianDesc split_half(const HamiltonianDesc& h, int kind) {
  const Piecewise& pw = h.pw();
  auto npw = std::make_shared<Piecewise>();
  npw->kn.push_back(0.0);
  std::vector<double> nc1{0.0}, nc2{0.0}, nc3{0.0};
  std::size_t m = pw.cells();
  double total_time = 0.0;
  for (std::size_t k = 0; k < m; ++k)
    total_time += kind == 0 ? pw.e2[k] : pw.e1[k];
  double share_target = total_time / 32768.0;
  auto push_cell = [&](double width, double w1, double w2, double w3) {
    if (width <= 0) return;
    npw->e1.push_back(w1);
    npw->e2.push_back(w2);
    npw->e3.push_back(w3);
    npw->kn.push_back(npw->kn.back() + width);
    nc1.push_back(nc1.back() + w1);
    nc2.push_back(nc2.back() + w2);
    nc3.push_back(nc3.back() + w3);
  };
  double x = 0.0;  // running prefix of the step component
  for (std::size_t k = 0; k < m; ++k) {
    double p = pw.e1[k], q = pw.e2[k];
    double dt = kind == 0 ? q : p;    // time advanced in this cell
    double dx = kind == 0 ? p : q;    // step component advanced in this cell
    if (dt <= 0) {
      x += dx;
      continue;
    }
    double x1 = x + dx;
    int nsub = 1;
    if (dx > 0) {
      double dang = std::abs(std::atan(x1) - std::atan(x));
      nsub = std::max(nsub, static_cast<int>(std::ceil(dang / 0.004)));
    }
    if (share_target > 0)
      nsub = std::max(nsub, static_cast<int>(std::ceil(dt / share_target)));
    nsub = std::clamp(nsub, 1, 64);
    for (int j = 0; j < nsub; ++j) {
      double u0 = x + dx * j / nsub;
      double u1 = x + dx * (j + 1) / nsub;
      double w = dt / nsub;
      double ix2, ix;
      if (dx > 0) {
        double lam = dx / dt;  // du/dtime
        ix2 = (u1 * u1 * u1 - u0 * u0 * u0) / (3.0 * lam);
        ix = (u1 * u1 - u0 * u0) / (2.0 * lam);
      } else {
        ix2 = w * u0 * u0;
        ix = w * u0;
      }
      if (kind == 0)
        push_cell(w, ix2, w, ix);
      else
        push_cell(w, w, ix2, -ix);
    }
    x = x1;
  }
  if (npw->e1.empty())
    throw std::invalid_argument("splitting produced an empty Hamiltonian");
  npw->c1 = std::move(nc1);
  npw->c2 = std::move(nc2);
  npw->c3 = std::move(nc3);
  npw->a = 0.0;
  npw->t0 = 0.0;
  npw->t1 = npw->kn.back();
  // An infinite parent tail along the time component extends the child's time
  // axis; along the step component it freezes the step value forever.
  if (pw.tail_infinite && pw.tail_angle) {
    bool tail_is_h1 = std::abs(*pw.tail_angle) < M_PI / 4 ||
                      std::abs(*pw.tail_angle - M_PI) < M_PI / 4;
    bool extends_time = (kind == 0) ? !tail_is_h1 : tail_is_h1;
    if (!extends_time) {
      npw->tail_infinite = true;
      double th = kind == 0 ? std::atan2(1.0, x) : std::atan2(-x, 1.0);
      if (th < 0) th += M_PI;
      npw->tail_angle = th;
    }
  }
  npw->b = npw->tail_infinite ? kInf : npw->t1;

  HamiltonianDesc out;
  out.a = 0.0;
  out.b = npw->b;
  out.mesh = npw;
  out.origin = (kind == 0 ? "split_first(" : "split_second(") + h.origin + ")";
  auto mesh_ref = out.mesh;
  auto entry = [mesh_ref](double t, int which) {
    const Piecewise& q = *mesh_ref;
    std::size_t k = q.locate(t);
    double w = q.cell_width(k);
    if (w <= 0) return 0.0;
    double v = which == 0 ? q.e1[k] : (which == 1 ? q.e2[k] : q.e3[k]);
    return v / w;
  };
  GeneralBody g;
  g.h1 = make_derived_fn("split_h1", [entry](double t) { return entry(t, 0); });
  g.h2 = make_derived_fn("split_h2", [entry](double t) { return entry(t, 1); });
  g.h3 = make_derived_fn("split_h3", [entry](double t) { return entry(t, 2); });
  out.body = std::make_shared<HamiltonianBody>(std::move(g));
  return out;
}

}  // namespace

std::pair<HamiltonianDesc, HamiltonianDesc> split_diagonal(
    const HamiltonianDesc& h) {
  const Piecewise& pw = h.pw();
  for (std::size_t k = 0; k < pw.cells(); ++k) {
    double tr = pw.e1[k] + pw.e2[k];
    if (std::abs(pw.e3[k]) > 1e-12 * (tr + 1e-300))
      throw std::invalid_argument("split_diagonal needs a diagonal Hamiltonian");
  }
  return {split_half(h, 0), split_half(h, 1)};
}

HamiltonianDesc string_to_hamiltonian(const StringSpec& s, int base_cells) {
  if (!(s.length > 0) || !std::isfinite(s.length))
    throw std::invalid_argument("string length must be positive and finite");
  std::vector<std::pair<double, double>> atoms = s.atoms;
  std::sort(atoms.begin(), atoms.end());
  for (auto& [x, mass] : atoms) {
    if (x < 0 || x > s.length)
      throw std::invalid_argument("string atom outside [0, length]");
    if (!(mass > 0)) throw std::invalid_argument("string atom mass must be positive");
  }

  std::vector<double> xk;
  xk.push_back(0.0);
  for (int i = 1; i < base_cells; ++i)
    xk.push_back(s.length * i / base_cells);
  xk.push_back(s.length);
  for (auto& [x, mass] : atoms) xk.push_back(x);
  std::sort(xk.begin(), xk.end());
  xk.erase(std::unique(xk.begin(), xk.end(),
                       [&](double u, double v) {
                         return std::abs(v - u) <= 1e-15 * s.length;
                       }),
           xk.end());

  auto npw = std::make_shared<Piecewise>();
  npw->kn.push_back(0.0);
  std::vector<double> nc1{0.0}, nc2{0.0}, nc3{0.0};
  auto push_cell = [&](double width, double w1, double w2) {
    if (width <= 0) return;
    npw->e1.push_back(w1);
    npw->e2.push_back(w2);
    npw->e3.push_back(0.0);
    npw->kn.push_back(npw->kn.back() + width);
    nc1.push_back(nc1.back() + w1);
    nc2.push_back(nc2.back() + w2);
    nc3.push_back(nc3.back());
  };
  std::size_t ai = 0;
  auto flush_atoms_at = [&](double x) {
    while (ai < atoms.size() && atoms[ai].first <= x + 1e-300 &&
           std::abs(atoms[ai].first - x) <= 1e-14 * (1.0 + s.length)) {
      push_cell(atoms[ai].second, 0.0, atoms[ai].second);
      ++ai;
    }
  };
  flush_atoms_at(0.0);
  for (std::size_t k = 0; k + 1 < xk.size(); ++k) {
    double u = xk[k], v = xk[k + 1];
    double mu = 0.0;
    if (s.density) {
      auto f = s.density->fn;
      QuadResult q = integrate(f, u, v, 1e-14, 10);
      mu = std::max(q.value, 0.0);
    }
    push_cell(v - u + mu, v - u, mu);
    flush_atoms_at(v);
  }
  // Beyond tau(length) the system continues indivisibly; keep a long finite
  // window so truncation artifacts stay negligible, and flag the real tail.
  double body_end = npw->kn.back();
  double tail_len = std::max(1000.0, 1000.0 * body_end);
  for (int j = 0; j < 64; ++j) push_cell(tail_len / 64.0, 0.0, tail_len / 64.0);
  npw->c1 = std::move(nc1);
  npw->c2 = std::move(nc2);
  npw->c3 = std::move(nc3);
  npw->a = 0.0;
  npw->b = kInf;
  npw->t0 = 0.0;
  npw->t1 = npw->kn.back();
  npw->tail_infinite = true;
  npw->tail_angle = M_PI / 2;

  HamiltonianDesc out;
  out.a = 0.0;
  out.b = kInf;
  out.mesh = npw;
  out.origin = "string";
  auto mesh_ref = out.mesh;
  auto entry = [mesh_ref](double t, int which) {
    const Piecewise& q = *mesh_ref;
    std::size_t k = q.locate(t);
    double w = q.cell_width(k);
    if (w <= 0) return 0.0;
    return (which == 0 ? q.e1[k] : q.e2[k]) / w;
  };
  DiagonalBody d;
  d.h1 = make_derived_fn("string_h1", [entry](double t) { return entry(t, 0); });
  d.h2 = make_derived_fn("string_h2", [entry](double t) { return entry(t, 1); });
  out.body = std::make_shared<HamiltonianBody>(std::move(d));
  return out;
}

}  // namespace cansys
