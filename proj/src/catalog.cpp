#include "cansys/catalog.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>

#include "cansys/growth.hpp"
#include "cansys/jacobi.hpp"
#include "cansys/quadrature.hpp"

namespace cansys::catalog {
namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();

using Params = std::map<std::string, double>;

[[noreturn]] void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

void need(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// Overlay user parameters on the defaults; unknown keys are an error.
Params resolve(const std::string& name, const Params& defaults, Params user) {
  for (const auto& [k, v] : user) {
    if (defaults.find(k) == defaults.end())
      fail("catalog entry '" + name + "' has no parameter '" + k + "'");
    if (!std::isfinite(v))
      fail("catalog entry '" + name + "': parameter '" + k + "' is not finite");
  }
  Params out = defaults;
  for (auto& kv : user) out[kv.first] = kv.second;
  return out;
}

std::size_t size_param(const Params& p, const std::string& k,
                       std::size_t cap = (std::size_t{1} << 24)) {
  const double v = p.at(k);
  if (!(v >= 1.0) || v != std::floor(v) || v > static_cast<double>(cap))
    fail("parameter '" + k + "' must be an integer in [1, " +
         std::to_string(cap) + "]");
  return static_cast<std::size_t>(v);
}

std::string cache_key(const std::string& name, const Params& p) {
  std::ostringstream os;
  os << name;
  for (const auto& [k, v] : p) {
    os << '|' << k << '=' << std::hexfloat << v;
  }
  return os.str();
}

double bessel_j0(double x) {
  x = std::abs(x);
  if (x < 1e-12) return 1.0;
  if (x > 1e4) {
    // Leading asymptotic term; magnitude is already below 1e-2 here.
    return std::sqrt(2.0 / (kPi * x)) * std::cos(x - kPi / 4.0);
  }
  return std::cyl_bessel_j(0.0, x);
}

// ---------------------------------------------------------------------------
// Cell integrals of a rank-one rotating density
//   H(t) = m(t) * [cos f; sin f][cos f; sin f]^T
// on [a, b], by fixed-panel Gauss-Kronrod. Panels are chosen by the caller so
// that the angle f is resolvable (at most a few radians per panel).
// ---------------------------------------------------------------------------
void rank_one_cell(const std::function<double(double)>& angle,
                   const std::function<double(double)>& weight, double a,
                   double b, int panels, double& o1, double& o2, double& o3) {
  o1 = o2 = o3 = 0.0;
  const double step = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double c = a + (p + 0.5) * step, h = 0.5 * step;
    double k1 = 0.0, k2 = 0.0, k3 = 0.0;
    for (int i = 0; i < GK15::n; ++i) {
      const double t = c + h * GK15::node[i];
      const double f = angle(t);
      const double w = weight ? weight(t) : 1.0;
      const double cs = std::cos(f), sn = std::sin(f);
      k1 += GK15::wk[i] * w * cs * cs;
      k2 += GK15::wk[i] * w * sn * sn;
      k3 += GK15::wk[i] * w * sn * cs;
    }
    o1 += k1 * h;
    o2 += k2 * h;
    o3 += k3 * h;
  }
}

double gk_panels(const std::function<double(double)>& f, double a, double b,
                 int panels) {
  double out = 0.0;
  const double step = (b - a) / panels;
  for (int p = 0; p < panels; ++p) {
    const double c = a + (p + 0.5) * step, h = 0.5 * step;
    double k = 0.0;
    for (int i = 0; i < GK15::n; ++i) k += GK15::wk[i] * f(c + h * GK15::node[i]);
    out += k * h;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Knot marching for rank-one bodies with rapidly rotating angle, downward
// from t_hi towards t_stop. Widths balance two budgets:
//   * angle resolution: |f'| * w <= angle_cap (keeps cell integrals exact),
//   * propagation accuracy: w = magnus_c * |f'|^{-1/3} keeps the summed
//     second-order commutator defect of the cell-exponential product small
//     at the design radius baked into magnus_c.
// Returns knots in descending order; the march stops early if max_cells is
// exhausted (callers treat the reached point as the crossover).
// ---------------------------------------------------------------------------
std::vector<double> march_down(const std::function<double(double)>& slope,
                               double t_hi, double t_stop, double angle_cap,
                               double magnus_c, std::size_t max_cells) {
  std::vector<double> kn{t_hi};
  double t = t_hi;
  while (t > t_stop && kn.size() <= max_cells) {
    const double B = std::max(slope(t), 1e-300);
    double w = std::min(angle_cap / B, magnus_c * std::pow(B, -1.0 / 3.0));
    w = std::min(w, 0.2 * t);
    w = std::max(w, 1e-9 * t);
    t = (t - w <= t_stop * 1.0000001) ? t_stop : t - w;
    kn.push_back(t);
  }
  return kn;
}

// Magnus width coefficient for a design radius: w = C * slope^{-1/3} keeps
// sum(r^2 w^2 dphi)/4 ~ eps over the marched range, where S = int slope^{1/3}.
double magnus_coefficient(const std::function<double(double)>& slope,
                          double t_lo, double t_hi, double r_design,
                          double eps = 5.0) {
  const double S =
      integrate([&](double t) { return std::cbrt(std::max(slope(t), 0.0)); },
                t_lo, t_hi, 1e-9)
          .value;
  return std::sqrt(4.0 * eps / (r_design * r_design * std::max(S, 1e-12)));
}

// ---------------------------------------------------------------------------
// chirp: H = xi_f xi_f^T on (0,1) with f(t) = t^gamma sin(t^-beta).
// Exact cells while the rotation is resolvable; below the crossover the
// rotation is phase-averaged in closed form: over full oscillations of
// A sin(theta) the squared direction components average to
// (1 +- J0(2A))/2 and the cross term to 0.
// ---------------------------------------------------------------------------
HamiltonianDesc build_chirp_like(double gamma, double beta, bool monotone,
                                 const std::string& origin,
                                 HamiltonianBody body) {
  const double r_mesh = 2e5;  // design radius of the propagation budget
  const double t_floor = 1e-7;
  auto slope = [=](double t) {
    const double amp = gamma != 0.0
                           ? std::abs(gamma) * std::pow(t, gamma - 1.0)
                           : 0.0;
    return amp + beta * std::pow(t, gamma - beta - 1.0);
  };
  auto angle = [=](double t) {
    const double ph = std::pow(t, -beta);
    return monotone ? ph : std::pow(t, gamma) * std::sin(ph);
  };

  double t_star = std::pow(1.0 / (kPi * r_mesh), 1.0 / (beta + 1.0));
  t_star = std::clamp(t_star, t_floor, 0.3);
  const double c_mag = magnus_coefficient(slope, t_star, 1.0, r_mesh);
  std::vector<double> desc = march_down(slope, 1.0, t_star, 1.0, c_mag, 600000);
  const double t_osc = desc.back();

  // Ascending knots: averaged region first, then the exact region.
  std::vector<double> kn, e1, e2, e3;
  if (t_osc > 1.05 * t_floor) {
    // Geometric cells sized to hold several full oscillations each.
    double c_avg =
        std::clamp(6.0 * kPi * std::pow(t_osc, beta) / beta, 2e-5, 0.5);
    std::size_t n_avg = static_cast<std::size_t>(
        std::ceil(std::log(t_osc / t_floor) / std::log1p(c_avg)));
    if (n_avg > 60000) n_avg = 60000;
    const double lr = std::log(t_floor), hr = std::log(t_osc);
    kn.reserve(n_avg + desc.size() + 1);
    for (std::size_t k = 0; k <= n_avg; ++k) {
      kn.push_back(std::exp(lr + (hr - lr) * (double(k) / double(n_avg))));
    }
    kn.front() = t_floor;
    kn.back() = t_osc;
    for (std::size_t k = 0; k + 1 < kn.size(); ++k) {
      const double u = kn[k], v = kn[k + 1], w = v - u;
      double ij = 0.0;
      if (!monotone) {
        // Oscillation amplitude 2 t^gamma; once it is large the Bessel
        // factor is below ~0.11 and the cell is within that of a half-trace
        // split, so it is dropped.
        const double a_big = 2.0 * std::pow(gamma < 0.0 ? u : v, gamma);
        if (!(a_big > 50.0)) {
          ij = gk_panels(
              [&](double s) { return bessel_j0(2.0 * std::pow(s, gamma)); }, u,
              v, 2);
          ij = std::clamp(ij, -w, w);
        }
      }
      e1.push_back(0.5 * (w + ij));
      e2.push_back(0.5 * (w - ij));
      e3.push_back(0.0);
    }
  } else {
    kn.push_back(desc.back());
  }
  // Exact region.
  for (std::size_t i = desc.size(); i-- > 1;) {
    const double u = desc[i], v = desc[i - 1];
    double o1, o2, o3;
    rank_one_cell(angle, nullptr, u, v, 2, o1, o2, o3);
    kn.push_back(v);
    e1.push_back(o1);
    e2.push_back(o2);
    e3.push_back(o3);
  }
  return assemble_hamiltonian(0.0, 1.0, std::move(body), std::move(kn),
                              std::move(e1), std::move(e2), std::move(e3),
                              /*head_dropped=*/t_floor, 0.0, false, origin);
}

// ---------------------------------------------------------------------------
// Entry builders. Each fills everything except name/params.
// ---------------------------------------------------------------------------
struct Builder {
  std::string summary;
  Params defaults;
  std::function<void(const Params&, CatalogEntry&)> fn;
};

void attach_jacobi_hamiltonian(CatalogEntry& e, std::size_t segments = 4096) {
  HamburgerConversion conv = jacobi_to_hamburger(*e.jacobi, segments);
  HamiltonianDesc d = conv.desc;
  d.origin = "catalog:" + e.name;
  e.hamiltonian = std::move(d);
}

void build_two_segment(const Params&, CatalogEntry& e) {
  HamburgerBody hb;
  hb.length = {1.0, 1.0};
  hb.angle = {kPi / 2.0, 0.0};
  hb.tail_trace = 0.0;
  e.hamiltonian =
      make_hamiltonian(0.0, 2.0, hb, {}, "catalog:two_segment");
  e.facts = {
      {"eigenvalue_low", -1.0, "smaller eigenvalue of the two-cell system"},
      {"eigenvalue_high", 1.0, "larger eigenvalue of the two-cell system"},
      {"recip_sum", 0.0, "sum of reciprocal eigenvalues"},
      {"recip_square_sum", 2.0, "sum of squared reciprocal eigenvalues"},
  };
  e.r_lo = 1.0;
  e.r_hi = 10.0;
}

void build_diag_constant(const Params& p, CatalogEntry& e) {
  const double h1 = p.at("h1"), h2 = p.at("h2");
  need(h1 > 0 && h2 > 0, "diag_constant needs h1 > 0 and h2 > 0");
  GridSpec gs;
  gs.base_cells = 512;
  e.hamiltonian = make_hamiltonian(
      0.0, 1.0,
      DiagonalBody{make_named_fn("const", {{"c", h1}}),
                   make_named_fn("const", {{"c", h2}})},
      gs, "catalog:diag_constant");
  const double om = std::sqrt(h1 * h2);
  e.facts = {
      {"eig_density", 2.0 * om / kPi,
       "limit of n(r)/r for the constant-coefficient system"},
      {"type", om, "exponential type of the monodromy entries"},
      {"logw22_exponent", 1.0, "log-log slope of log|w22(ir)|"},
  };
  e.r_lo = 10.0;
  e.r_hi = 1e4;
}

void build_chirp(const Params& p, CatalogEntry& e) {
  const double gamma = p.at("gamma"), beta = p.at("beta");
  need(beta > 0.0, "chirp needs beta > 0");
  need(gamma > -1.0, "chirp needs gamma > -1");
  RotatingBody body{make_named_fn("const", {{"c", 1.0}}),
                    make_named_fn("chirp_angle",
                                  {{"gamma", gamma}, {"beta", beta}})};
  e.hamiltonian =
      build_chirp_like(gamma, beta, false, "catalog:chirp", body);
  double kexp;
  std::string note = "tabulated growth exponent for oscillating rank-one "
                     "densities of this kind";
  if (beta > gamma + 1.0) {
    kexp = gamma >= 0.0 ? beta / (beta + gamma + 1.0)
                        : (beta - gamma) / (beta - gamma + 1.0);
  } else if (beta == gamma + 1.0) {
    kexp = 0.5;
    note += "; boundary case, carries an extra log factor";
  } else {
    kexp = 0.5;
  }
  e.facts = {
      {"kappa_exponent", kexp, note},
      {"logw22_exponent", kexp,
       "for this family log|w22(ir)| grows like the partition count"},
  };
  e.r_lo = 100.0;
  e.r_hi = 2e5;
}

void build_weierstrass(const Params& p, CatalogEntry& e) {
  const double alpha = p.at("alpha"), beta = p.at("beta");
  const std::size_t cells = size_param(p, "cells", std::size_t{1} << 20);
  need(alpha > 0.0 && alpha < 1.0, "weierstrass needs alpha in (0,1)");
  need(beta > 1.0, "weierstrass needs beta > 1");
  if (!(beta == std::floor(beta) && std::fmod(beta, 2.0) == 0.0))
    e.warnings.push_back(
        "growth statement proven for even integer frequency ratios");
  if (!(alpha * beta > 1.0 + kPi / 2.0))
    e.warnings.push_back(
        "frequency ratio below the proven threshold (1 + pi/2)/alpha");

  int N = 0;
  while (std::pow(alpha, N + 1) / (1.0 - alpha) >= 1e-10 && N < 200) ++N;
  const double w = 1.0 / static_cast<double>(cells);
  int m = 0;
  while (m <= N && std::pow(beta, m) * kPi * w <= 8.0) ++m;
  double D = 1.0;
  for (int n = m; n <= N; ++n) D *= bessel_j0(2.0 * std::pow(alpha, n));
  const int m_res = m;
  auto g2 = [=](double t) {
    double s = 0.0, amp = 1.0, om = kPi;
    for (int n = 0; n < m_res; ++n) {
      s += amp * std::cos(om * t);
      amp *= alpha;
      om *= beta;
    }
    return 2.0 * s;
  };

  std::vector<double> kn(cells + 1), e1(cells), e2(cells), e3(cells);
  for (std::size_t k = 0; k <= cells; ++k)
    kn[k] = static_cast<double>(k) / static_cast<double>(cells);
  for (std::size_t k = 0; k < cells; ++k) {
    const double u = kn[k], v = kn[k + 1], cw = v - u;
    const double ic = gk_panels([&](double t) { return std::cos(g2(t)); }, u,
                                v, 2);
    const double is = gk_panels([&](double t) { return std::sin(g2(t)); }, u,
                                v, 2);
    e1[k] = 0.5 * (cw + D * ic);
    e2[k] = 0.5 * (cw - D * ic);
    e3[k] = 0.5 * D * is;
  }
  RotatingBody body{
      make_named_fn("const", {{"c", 1.0}}),
      make_named_fn("weier_angle", {{"alpha", alpha},
                                    {"freq", beta},
                                    {"terms", double(N + 1)}})};
  e.hamiltonian = assemble_hamiltonian(0.0, 1.0, body, std::move(kn),
                                       std::move(e1), std::move(e2),
                                       std::move(e3), 0.0, 0.0, false,
                                       "catalog:weierstrass");
  const double hoel = std::log(1.0 / alpha) / std::log(beta);
  e.facts = {
      {"kappa_exponent", 1.0 / (1.0 + hoel),
       "growth exponent from the Hoelder exponent of the angle function"},
      {"logw22_exponent", 1.0 / (1.0 + hoel),
       "monodromy entries share the partition-count exponent"},
      {"hoelder_exponent", hoel, "Hoelder exponent of the angle function"},
  };
  e.r_lo = 30.0;
  e.r_hi = 3e3;
}

void build_u186(const Params& p, CatalogEntry& e) {
  const double alpha = p.at("alpha");
  need(alpha > 0.0, "u186 needs alpha > 0");
  GridSpec gs;
  gs.grading = GridSpec::Grading::GeometricToB;
  gs.geometric_floor = 1e-12;
  gs.base_cells = 2048;
  gs.max_cells = 1 << 16;
  // Keep the graded mesh clear of the singular endpoint; the dropped sliver
  // is probed separately and, in the divergent regimes, keeping cells out of
  // the deepest scale also keeps per-cell transfer arguments representable.
  gs.t_hi = alpha < 1.0 ? 1.0 - 1e-12 : 1.0 - 1e-6;
  e.hamiltonian = make_hamiltonian(
      0.0, 1.0,
      DiagonalBody{make_named_fn("const", {{"c", 1.0}}),
                   make_named_fn("power1m", {{"p", -alpha}})},
      gs, "catalog:u186");
  e.limit_circle = alpha < 1.0;
  if (alpha >= 1.0 && alpha < 2.0) {
    e.facts.push_back({"pontryagin_index",
                       std::floor(1.0 / (2.0 - alpha)),
                       "negative index of the associated indefinite space"});
    e.facts.push_back({"discrete", 1.0, "spectrum is discrete"});
  } else if (alpha < 1.0) {
    e.facts.push_back({"discrete", 1.0, "finite total trace forces a "
                                        "discrete spectrum"});
  } else if (alpha == 2.0) {
    e.facts.push_back({"gap_lower", 0.25,
                       "no spectrum in (-gamma/sqrt(limsup), "
                       "gamma/sqrt(limsup)) around zero"});
    e.facts.push_back({"gap_upper", (3.0 + std::sqrt(5.0)) / 2.0,
                       "spectrum intersects the closed interval of this "
                       "half-width around zero"});
    e.facts.push_back({"alpha_limit", 1.0,
                       "limit of the tail product governing the zero gap"});
  } else {
    e.facts.push_back({"discrete", 0.0, "essential spectrum reaches zero"});
  }
  e.r_lo = 10.0;
  e.r_hi = alpha < 1.0 ? 1e3 : 1e2;
}

void build_u36(const Params& p, CatalogEntry& e) {
  const double alpha = p.at("alpha");
  need(alpha > 0.0, "u36 needs alpha > 0");
  auto m_fn = [alpha](double t) {
    const double u = -std::log1p(-t);
    return 1.0 / ((1.0 - t) * std::pow(1.0 + u, alpha));
  };
  GridSpec gs;
  gs.grading = GridSpec::Grading::GeometricToB;
  gs.geometric_floor = 1e-9;
  gs.base_cells = 2048;
  gs.max_cells = 1 << 15;
  gs.t_hi = 1.0 - 1e-6;
  e.hamiltonian = make_hamiltonian(
      0.0, 1.0,
      GeneralBody{make_named_fn("const", {{"c", 1.0}}),
                  make_derived_fn("boundary_layer_sq",
                                  [m_fn](double t) {
                                    const double m = m_fn(t);
                                    return m * m;
                                  }),
                  make_derived_fn("boundary_layer_neg",
                                  [m_fn](double t) { return -m_fn(t); })},
      gs, "catalog:u36");
  e.limit_circle = false;
  e.facts = {
      {"conv_exponent", alpha < 2.0 ? 1.0 / alpha : 0.5,
       "convergence exponent of the (discrete) spectrum"},
      {"conv_exponent_diagonal", alpha < 1.0 ? 1.0 / alpha : 1.0,
       "convergence exponent after dropping the off-diagonal entries"},
  };
  e.r_lo = 10.0;
  e.r_hi = 300.0;
}

void build_u42(const Params& p, CatalogEntry& e) {
  const double a1 = p.at("alpha1"), a2 = p.at("alpha2");
  need(a1 >= 0.0 && a2 >= 0.0, "u42 needs alpha1, alpha2 >= 0");
  need(a1 > 0.0 || a2 > 0.0, "u42 needs (alpha1, alpha2) != (0, 0)");
  auto h_fn = [a1, a2](double t) {
    const double u = -std::log1p(-t);  // log 1/(1-t), positive for t in (0,1)
    const double v = u > 1.0 ? std::log(u) : 0.0;
    return std::pow(1.0 - t, -2.0) * std::pow(1.0 + u, -a1) *
           std::pow(1.0 + v, -a2);
  };
  GridSpec gs;
  gs.grading = GridSpec::Grading::GeometricToB;
  gs.geometric_floor = 1e-9;
  gs.base_cells = 2048;
  gs.max_cells = 1 << 15;
  gs.t_hi = 1.0 - 1e-6;
  e.hamiltonian = make_hamiltonian(
      0.0, 1.0,
      DiagonalBody{make_named_fn("const", {{"c", 1.0}}),
                   make_derived_fn("boundary_layer_loglog", h_fn)},
      gs, "catalog:u42");
  e.limit_circle = false;
  if (a1 == 0.0) {
    e.facts.push_back({"discrete", 1.0,
                       "discrete spectrum with infinite convergence exponent"});
  } else if (a1 < 2.0) {
    e.facts.push_back({"conv_exponent", 2.0 / a1,
                       "convergence exponent of the spectrum"});
    e.facts.push_back({"count_exponent", 2.0 / a1,
                       "power of r in the eigenvalue counting function"});
    e.facts.push_back({"count_log_power", -a2 / a1,
                       "log-power correction of the counting function"});
  } else {
    e.facts.push_back({"conv_exponent", 1.0,
                       "convergence exponent of the spectrum"});
  }
  e.r_lo = 10.0;
  e.r_hi = 100.0;
}

void build_bochkov(const Params& p, CatalogEntry& e) {
  const double pw = p.at("p");
  const std::size_t n = size_param(p, "n");
  need(pw > 1.0, "bochkov needs p > 1");
  JacobiParams j;
  j.rule = [pw](std::size_t k) {
    return std::make_pair(0.0, std::pow(double(k) + 1.0, pw));
  };
  j.rule_name = "offdiag_power";
  j.rule_params = {pw};
  j.truncation = n;
  e.jacobi = std::move(j);
  attach_jacobi_hamiltonian(e);
  e.facts = {
      {"order", 1.0 / pw, "growth order of the square-sum aggregate"},
      {"type", power_weight_type(pw),
       "type constant from the power-weight quadrature"},
  };
  e.r_lo = 10.0;
  e.r_hi = 1e6;
}

void build_power_asymptotics(const Params& p, CatalogEntry& e) {
  const double b1 = p.at("beta1"), b2 = p.at("beta2");
  const double x0 = p.at("x0"), x1 = p.at("x1"), x2 = p.at("x2");
  const double y0 = p.at("y0"), y1 = p.at("y1"), y2 = p.at("y2");
  const std::size_t n = size_param(p, "n");
  need(b1 > 0.0, "power_asymptotics needs beta1 > 0");
  need(x0 > 0.0, "power_asymptotics needs x0 > 0");

  JacobiParams j;
  j.rule = [=](std::size_t k) {
    const double m = double(k) + 1.0;
    const double b = std::pow(m, b1) * (x0 + x1 / m + x2 / (m * m));
    const double a = std::pow(m, b2) * (y0 + y1 / m + y2 / (m * m));
    return std::make_pair(a, b);
  };
  j.rule_name = "power_asymptotics";
  j.rule_params = {b1, b2, x0, x1, x2, y0, y1, y2};
  j.truncation = n;
  for (std::size_t k = 0; k < 8; ++k)
    need(j.rule(k).second > 0.0,
         "power_asymptotics off-diagonal must stay positive");
  e.jacobi = std::move(j);
  attach_jacobi_hamiltonian(e);

  // Boundary classification from the leading asymptotics. A vanishing
  // leading diagonal coefficient shifts the effective diagonal power down
  // to the first nonvanishing term (and no diagonal at all counts as
  // strictly dominated).
  double eff_b2 = b2, eff_y0 = y0, eff_y1 = y1;
  if (y0 == 0.0) {
    if (y1 != 0.0) {
      eff_b2 = b2 - 1.0;
      eff_y0 = y1;
      eff_y1 = y2;
    } else if (y2 != 0.0) {
      eff_b2 = b2 - 2.0;
      eff_y0 = y2;
      eff_y1 = 0.0;
    } else {
      eff_b2 = -kInf;
      eff_y0 = 0.0;
      eff_y1 = 0.0;
    }
  }
  bool lc = false;
  double order = 0.0;
  bool have_order = false;
  const bool same_power = eff_b2 == b1;
  if (eff_b2 < b1 || (same_power && std::abs(eff_y0) < 2.0 * x0)) {
    lc = b1 > 1.0;
    order = 1.0 / b1;
    have_order = lc;
  } else if (eff_b2 > b1 || (same_power && std::abs(eff_y0) > 2.0 * x0)) {
    lc = false;
  } else {
    // Critical scaling |y0| = 2 x0 with equal powers.
    const double tshift = x1 / x0 - eff_y1 / eff_y0;
    if (1.5 < b1 && b1 < 2.0 * tshift) {
      lc = true;
      have_order = true;
      if (b1 > 2.0)
        order = 1.0 / b1;
      else if (b1 < 2.0)
        order = 1.0 / (2.0 * (b1 - 1.0));
      else
        order = 0.5;
    } else if (b1 == 2.0 * tshift) {
      // Boundary of the critical window: decide numerically.
      BoundaryTest bt = limit_circle_test(*e.jacobi, 1u << 15);
      lc = bt.verdict == BoundaryGuess::LimitCircle;
      e.warnings.push_back(
          "critical boundary case classified numerically");
    } else {
      lc = false;
    }
  }
  e.limit_circle = lc;
  if (have_order)
    e.facts.push_back({"order", order,
                       "growth order from the power-asymptotics "
                       "classification"});
  if (!lc)
    e.facts.push_back({"limit_point", 1.0,
                       "coefficients outside the square-summable window"});
  e.r_lo = 10.0;
  e.r_hi = 150.0;
}

// Shared generator for power-log sequence families.
void powerlog_sequences(double dl, double al, double dphi, double aphi,
                        bool alternating, std::size_t n,
                        std::vector<double>& L, std::vector<double>& A,
                        double& tail) {
  L.resize(n);
  A.resize(n);
  long double phi = 0.0L;
  for (std::size_t k = 1; k <= n; ++k) {
    const double lk = double(k);
    L[k - 1] = std::pow(lk, -dl) * std::pow(1.0 + std::log(lk), -al);
    const double d = std::pow(lk, -dphi) * std::pow(1.0 + std::log(lk), -aphi);
    phi += alternating ? ((k % 2 == 0) ? d : -d) : d;
    A[k - 1] = static_cast<double>(phi);
  }
  const double nn = double(n);
  if (dl > 1.0) {
    tail = std::pow(nn, 1.0 - dl) * std::pow(1.0 + std::log(nn), -al) /
           (dl - 1.0);
  } else if (dl == 1.0 && al > 1.0) {
    tail = std::pow(1.0 + std::log(nn), 1.0 - al) / (al - 1.0);
  } else {
    tail = kInf;
  }
}

void build_powerlog_hamburger(const Params& p, CatalogEntry& e) {
  const double dl = p.at("delta_l"), al = p.at("alpha_l");
  const double dphi = p.at("delta_phi"), aphi = p.at("alpha_phi");
  const bool monotone = p.at("monotone") != 0.0;
  const std::size_t n = size_param(p, "n", std::size_t{1} << 22);
  need(dl >= 0.0 && dphi >= 0.0,
       "powerlog_hamburger needs nonnegative decay powers");
  std::vector<double> L, A;
  double tail = 0.0;
  powerlog_sequences(dl, al, dphi, aphi, !monotone, n, L, A, tail);
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = tail;
  e.hamiltonian =
      make_hamiltonian(0.0, 0.0, hb, {}, "catalog:powerlog_hamburger");
  e.limit_circle = std::isfinite(tail);

  ComparisonFunction cl;
  cl.alpha = -dl;
  cl.beta = {-al};
  ComparisonFunction cp;
  cp.alpha = -dphi;
  cp.beta = {-aphi};
  RegionReport reg = classify_rv_regions(cl, cp);
  e.facts.push_back({"order_lower", reg.order_lower,
                     "lower growth estimate from the region classification"});
  e.facts.push_back({"order_upper", reg.order_upper,
                     "upper growth estimate from the region classification"});
  if (!monotone && dl + dphi > 2.0) {
    e.facts.push_back({"order", 1.0 / (dl + dphi),
                       "exact order for alternating sequences in the "
                       "small-rotation region"});
    e.facts.push_back({"order_log_power", (al + aphi) / (dl + dphi),
                       "log-power correction of the maximum modulus"});
  }
  e.r_lo = 10.0;
  e.r_hi = 5e3;
}

void build_u173(const Params& p, CatalogEntry& e) {
  const int variant = static_cast<int>(p.at("variant"));
  const double dl = p.at("delta_l"), dphi = p.at("delta_phi");
  const std::size_t n = size_param(p, "n", std::size_t{1} << 22);
  need(variant == 1 || variant == 2, "u173 variant must be 1 or 2");
  need(dl >= 1.0 && dl < 2.0, "u173 needs delta_l in [1, 2)");
  need(dphi >= 0.0 && dphi < std::min(1.0, 2.0 - dl),
       "u173 needs delta_phi in [0, min(1, 2 - delta_l))");

  std::vector<double> L(n), A(n);
  long double phi = 0.0L;
  for (std::size_t k = 1; k <= n; ++k) {
    const double lk = double(k);
    if (k == 1) {
      L[0] = 1.0;
    } else if (dl > 1.0) {
      L[k - 1] = std::pow(lk, -dl);
    } else {
      const double lg = std::log(lk);
      L[k - 1] = 1.0 / (lk * lg * lg);
    }
    const double d = std::pow(lk, -dphi);
    phi += (variant == 1) ? ((k % 2 == 0) ? d : -d) : d;
    A[k - 1] = static_cast<double>(phi);
  }
  double tail;
  if (dl > 1.0)
    tail = std::pow(double(n), 1.0 - dl) / (dl - 1.0);
  else
    tail = 1.0 / std::log(double(n));
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = tail;
  e.hamiltonian = make_hamiltonian(0.0, 0.0, hb, {}, "catalog:u173");

  const double order = variant == 1 ? 1.0 / (dl + dphi)
                                    : (1.0 - dphi) / (dl - dphi);
  e.facts = {
      {"order", order, variant == 1
                           ? "exact order for the alternating-increment family"
                           : "exact order for the one-sided-increment family"},
      {"kappa_exponent", order,
       "partition counts share the growth order for these sequences"},
  };
  e.r_lo = 10.0;
  e.r_hi = variant == 1 ? 5e3 : 5e2;
}

void build_u171(const Params& p, CatalogEntry& e) {
  const double nu = p.at("nu");
  need(nu > 1.0 && nu < 2.0, "u171 needs nu in (1, 2)");
  // Continuum representative in the variable u (= log of the segment index):
  // trace density u^-nu, angle u. The growth exponent depends only on these
  // asymptotics.
  const double u0 = std::log(2.0);
  const double u_star = 2500.0;
  const double r_mesh = 4000.0;
  const double S =
      integrate([&](double u) { return std::pow(u, -2.0 * nu / 3.0); }, u0,
                u_star, 1e-9)
          .value;
  const double C = std::sqrt(20.0 / (r_mesh * r_mesh * std::max(S, 1e-12)));

  std::vector<double> kn{u0};
  std::vector<double> e1, e2, e3;
  auto angle = [](double u) { return u; };
  auto weight = [nu](double u) { return std::pow(u, -nu); };
  double u = u0;
  while (u < u_star && kn.size() < 200000) {
    double w = std::min(1.0, C * std::pow(u, 2.0 * nu / 3.0));
    w = std::max(w, 1e-4);
    const double v = std::min(u + w, u_star);
    double o1, o2, o3;
    rank_one_cell(angle, weight, u, v, 2, o1, o2, o3);
    kn.push_back(v);
    e1.push_back(o1);
    e2.push_back(o2);
    e3.push_back(o3);
    u = v;
  }
  // Averaged half-trace cells over many full turns each.
  const double u_max = 4e7;
  const double c_avg = 6.0 * kPi / u_star;
  const std::size_t n_avg = static_cast<std::size_t>(
      std::ceil(std::log(u_max / u_star) / std::log1p(c_avg)));
  const double lr = std::log(u_star), hr = std::log(u_max);
  double prev = u_star;
  for (std::size_t k = 1; k <= n_avg; ++k) {
    const double v =
        (k == n_avg) ? u_max
                     : std::exp(lr + (hr - lr) * (double(k) / double(n_avg)));
    const double mass =
        (std::pow(prev, 1.0 - nu) - std::pow(v, 1.0 - nu)) / (nu - 1.0);
    kn.push_back(v);
    e1.push_back(0.5 * mass);
    e2.push_back(0.5 * mass);
    e3.push_back(0.0);
    prev = v;
  }
  const double tail = std::pow(u_max, 1.0 - nu) / (nu - 1.0);
  RotatingBody body{make_named_fn("power", {{"p", -nu}}),
                    make_named_fn("linear", {{"c0", 0.0}, {"c1", 1.0}})};
  e.hamiltonian = assemble_hamiltonian(u0, kInf, body, std::move(kn),
                                       std::move(e1), std::move(e2),
                                       std::move(e3), 0.0, tail, false,
                                       "catalog:u171");
  e.facts = {
      {"order", 1.0 / nu, "growth order for slowly decaying trace with "
                          "harmonic angle increments"},
      {"kappa_exponent", 1.0 / nu,
       "partition counts share the growth order for this family"},
      {"logw22_exponent", 1.0 / nu, "monodromy entries share the order"},
  };
  e.r_lo = 10.0;
  e.r_hi = 4e3;
}

void build_inverse_grid(const Params& p, CatalogEntry& e) {
  const double rho = p.at("rho");
  const std::size_t n = size_param(p, "n", std::size_t{1} << 22);
  need(rho > 0.0 && rho < 1.0, "inverse_grid needs rho in (0, 1)");
  if (rho == 0.5)
    e.warnings.push_back("order 1/2 is excluded from the inverse recipe");
  // Target growth r^rho; lengths follow the inverse function of the target.
  std::vector<double> L(n), A(n);
  for (std::size_t k = 1; k <= n; ++k) {
    L[k - 1] = std::pow(double(k), -1.0 / rho);
    A[k - 1] = double(k) * kPi / 2.0;
  }
  const double tail =
      std::pow(double(n), 1.0 - 1.0 / rho) / (1.0 / rho - 1.0);
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = tail;
  e.hamiltonian = make_hamiltonian(0.0, 0.0, hb, {}, "catalog:inverse_grid");
  e.facts = {
      {"order", rho, "designed growth order of the quarter-turn chain"},
      {"logw_exponent", rho, "maximum modulus follows the designed target"},
  };
  e.r_lo = 10.0;
  e.r_hi = 5e2;
}

void build_inverse_continuous(const Params& p, CatalogEntry& e) {
  const double rho = p.at("rho");
  need(rho > 0.5 && rho < 1.0, "inverse_continuous needs rho in (1/2, 1)");
  const double q = rho / (1.0 - rho);  // angle t^-q, monotone rotation
  RotatingBody body{
      make_named_fn("const", {{"c", 1.0}}),
      make_named_fn("power", {{"p", -q}})};
  e.hamiltonian = build_chirp_like(0.0, q, true, "catalog:inverse_continuous",
                                   body);
  e.facts = {
      {"order", rho, "designed growth order of the rotating density"},
      {"kappa_exponent", rho, "partition counts share the designed order"},
      {"logw22_exponent", rho, "monodromy entries share the designed order"},
  };
  e.r_lo = 10.0;
  e.r_hi = 1e4;
}

void build_dots(const Params& p, CatalogEntry& e) {
  const std::size_t depth = size_param(p, "depth", 600);
  // Geometrically shrinking indivisible cells alternating between the two
  // coordinate directions; stored with the accumulation point on the right.
  std::vector<double> L(depth), A(depth);
  const double scale = 1.0 - std::exp(-1.0);
  for (std::size_t j = 1; j <= depth; ++j) {
    L[j - 1] = std::exp(-(double(j) - 1.0)) * scale;
    A[j - 1] = (j % 2 == 1) ? 0.0 : kPi / 2.0;
  }
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = std::exp(-double(depth));
  e.hamiltonian =
      make_hamiltonian(0.0, 0.0, hb, {}, "catalog:dots_hamiltonian");
  e.facts = {
      {"log_growth_power", 2.0,
       "log of the maximum modulus grows like (log r)^2"},
      {"kappa_log_power", 1.0, "partition count grows like log r"},
  };
  e.r_lo = 10.0;
  e.r_hi = 1e6;
}

void build_alternating_lengths(const Params& p, CatalogEntry& e) {
  const double a0 = p.at("alpha0"), a1 = p.at("alpha1");
  const std::size_t n = size_param(p, "n", std::size_t{1} << 22);
  need(a0 > 1.0, "alternating_lengths needs alpha0 > 1");
  need(a1 > a0, "alternating_lengths needs alpha1 > alpha0");
  std::vector<double> L(n), A(n);
  for (std::size_t j = 1; j <= n; ++j) {
    L[j - 1] = std::pow(double(j), (j % 2 == 0) ? -a0 : -a1);
    A[j - 1] = double(j) * kPi / 4.0;
  }
  const double tail = std::pow(double(n), 1.0 - a0) / (a0 - 1.0);
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = tail;
  e.hamiltonian =
      make_hamiltonian(0.0, 0.0, hb, {}, "catalog:alternating_lengths");
  e.facts = {
      {"order", 1.0 / a0, "growth order, achieved by the slower-decaying "
                          "length subsequence"},
      {"conv_exponent_b2", 2.0 / (a0 + a1),
       "convergence exponent of the two-cell window determinants"},
      {"conv_exponent_b3", 1.0 / a0,
       "convergence exponent of the three-cell window determinants"},
  };
  e.r_lo = 10.0;
  e.r_hi = 1e3;
}

void build_random_hamburger(const Params& p, CatalogEntry& e) {
  const std::size_t n = size_param(p, "n", 4096);
  const std::size_t seed = size_param(p, "seed", (std::size_t{1} << 31));
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> L(n), A(n);
  L[0] = 1.0;
  A[0] = kPi / 2.0;
  for (std::size_t j = 1; j < n; ++j) {
    L[j] = 0.2 + uni(rng);
    const double step = 0.3 + uni(rng) * (kPi - 0.6);
    const bool up = uni(rng) < 0.5;
    A[j] = A[j - 1] + (up ? step : -step);
  }
  HamburgerBody hb;
  hb.length = std::move(L);
  hb.angle = std::move(A);
  hb.tail_trace = 0.0;
  e.hamiltonian =
      make_hamiltonian(0.0, 0.0, hb, {}, "catalog:random_hamburger");
  e.r_lo = 1.0;
  e.r_hi = 100.0;
}

// ---------------------------------------------------------------------------
// Registry.
// ---------------------------------------------------------------------------
const std::vector<std::pair<std::string, Builder>>& builders() {
  static const std::vector<std::pair<std::string, Builder>> b = [] {
    std::vector<std::pair<std::string, Builder>> v;
    v.push_back({"two_segment",
                 {"two indivisible unit cells; eigenvalues -1 and 1",
                  {},
                  build_two_segment}});
    v.push_back({"diag_constant",
                 {"constant diagonal density on (0,1)",
                  {{"h1", 1.0}, {"h2", 4.0}},
                  build_diag_constant}});
    v.push_back({"chirp",
                 {"rank-one density with angle t^gamma sin(t^-beta)",
                  {{"gamma", 1.0}, {"beta", 4.0}},
                  build_chirp}});
    v.push_back({"weierstrass",
                 {"rank-one density with a lacunary-series angle",
                  {{"alpha", 0.5}, {"beta", 8.0}, {"cells", 65536.0}},
                  build_weierstrass}});
    v.push_back({"u186",
                 {"diagonal density diag(1, (1-t)^-alpha)",
                  {{"alpha", 0.5}},
                  build_u186}});
    v.push_back({"u36",
                 {"rank-one boundary layer with log damping",
                  {{"alpha", 1.0}},
                  build_u36}});
    v.push_back({"u42",
                 {"diagonal boundary layer with iterated-log damping",
                  {{"alpha1", 1.0}, {"alpha2", 1.0}},
                  build_u42}});
    v.push_back({"bochkov",
                 {"tridiagonal family with power off-diagonal (n+1)^p",
                  {{"p", 2.0}, {"n", double(std::size_t{1} << 20)}},
                  build_bochkov}});
    v.push_back({"power_asymptotics",
                 {"tridiagonal family with two-term power asymptotics",
                  {{"beta1", 5.0 / 3.0},
                   {"beta2", 5.0 / 3.0},
                   {"x0", 1.0},
                   {"x1", 0.0},
                   {"x2", 0.0},
                   {"y0", 2.0},
                   {"y1", -2.0},
                   {"y2", 0.0},
                   {"n", double(std::size_t{1} << 20)}},
                  build_power_asymptotics}});
    v.push_back({"powerlog_hamburger",
                 {"segment chain with power-log lengths and increments",
                  {{"delta_l", 2.0},
                   {"alpha_l", 0.0},
                   {"delta_phi", 0.5},
                   {"alpha_phi", 0.0},
                   {"monotone", 0.0},
                   {"n", double(std::size_t{1} << 20)}},
                  build_powerlog_hamburger}});
    v.push_back({"u173",
                 {"segment chains with power-decay angle increments",
                  {{"variant", 1.0},
                   {"delta_l", 1.5},
                   {"delta_phi", 0.25},
                   {"n", double(std::size_t{1} << 20)}},
                  build_u173}});
    v.push_back({"u171",
                 {"slow trace decay with harmonic angle increments",
                  {{"nu", 1.5}},
                  build_u171}});
    v.push_back({"inverse_grid",
                 {"quarter-turn chain realising a prescribed growth order",
                  {{"rho", 0.6}, {"n", double(std::size_t{1} << 18)}},
                  build_inverse_grid}});
    v.push_back({"inverse_continuous",
                 {"rotating density realising a prescribed order above 1/2",
                  {{"rho", 0.75}},
                  build_inverse_continuous}});
    v.push_back({"dots_hamiltonian",
                 {"geometric two-direction chain with (log r)^2 growth",
                  {{"depth", 60.0}},
                  build_dots}});
    v.push_back({"alternating_lengths",
                 {"alternating power lengths with quarter-turn increments",
                  {{"alpha0", 2.0}, {"alpha1", 3.0}, {"n", 65536.0}},
                  build_alternating_lengths}});
    v.push_back({"random_hamburger",
                 {"seeded random segment chain",
                  {{"n", 6.0}, {"seed", 1.0}},
                  build_random_hamburger}});
    return v;
  }();
  return b;
}

const Builder* find_builder(const std::string& name) {
  for (const auto& [n, b] : builders())
    if (n == name) return &b;
  return nullptr;
}

std::mutex g_mu;
std::map<std::string, CatalogEntry>& cache() {
  static std::map<std::string, CatalogEntry> c;
  return c;
}

}  // namespace

bool CatalogEntry::has_fact(const std::string& key) const {
  for (const auto& f : facts)
    if (f.key == key) return true;
  return false;
}

double CatalogEntry::fact(const std::string& key) const {
  for (const auto& f : facts)
    if (f.key == key) return f.value;
  throw std::invalid_argument("catalog entry '" + name +
                              "' has no expected fact '" + key + "'");
}

const HamiltonianDesc& CatalogEntry::ham() const {
  if (!hamiltonian)
    throw std::invalid_argument("catalog entry '" + name +
                                "' has no Hamiltonian form");
  return *hamiltonian;
}

const JacobiParams& CatalogEntry::jac() const {
  if (!jacobi)
    throw std::invalid_argument("catalog entry '" + name +
                                "' has no tridiagonal form");
  return *jacobi;
}

const std::vector<EntryInfo>& registry() {
  static const std::vector<EntryInfo> reg = [] {
    std::vector<EntryInfo> v;
    for (const auto& [name, b] : builders())
      v.push_back({name, b.summary, b.defaults});
    return v;
  }();
  return reg;
}

std::vector<std::string> names() {
  std::vector<std::string> v;
  for (const auto& [name, b] : builders()) v.push_back(name);
  return v;
}

std::vector<std::string> limit_circle_names() {
  std::vector<std::string> v;
  for (const auto& [name, b] : builders()) {
    if (name == "u36" || name == "u42") continue;  // infinite trace defaults
    v.push_back(name);
  }
  return v;
}

CatalogEntry build(const std::string& name, Params params) {
  const Builder* b = find_builder(name);
  if (!b) fail("unknown catalog entry '" + name + "'");
  Params resolved = resolve(name, b->defaults, std::move(params));
  const std::string key = cache_key(name, resolved);
  {
    std::lock_guard<std::mutex> lk(g_mu);
    auto it = cache().find(key);
    if (it != cache().end()) return it->second;
  }
  CatalogEntry e;
  e.name = name;
  e.params = resolved;
  b->fn(resolved, e);
  {
    std::lock_guard<std::mutex> lk(g_mu);
    cache().emplace(key, e);
  }
  return e;
}

void clear_cache() {
  std::lock_guard<std::mutex> lk(g_mu);
  cache().clear();
}

double power_weight_type(double p) {
  need(p > 1.0, "power weight type needs p > 1");
  // p * int_0^1 (1 - t^(2p))^(-1/p) dt. Substituting u = 1 - t and writing
  // 1 - (1-u)^(2p) = -expm1(2p*log1p(-u)) keeps the integrand accurate all
  // the way into the corner, where the direct form cancels catastrophically.
  auto f = [p](double u) {
    return p * std::pow(-std::expm1(2.0 * p * std::log1p(-u)), -1.0 / p);
  };
  double total = 0.0;
  double hi = 1.0;
  for (int k = 0; k < 52; ++k) {
    const double lo = std::pow(2.0, -(k + 1));
    total += gk_panels(f, lo, hi, 4);
    hi = lo;
  }
  // Analytic closure of the remaining sliver where 1 - (1-u)^(2p) ~ 2p*u.
  const double eps = hi;
  total += p * std::pow(2.0 * p, -1.0 / p) * std::pow(eps, 1.0 - 1.0 / p) /
           (1.0 - 1.0 / p);
  return total;
}

}  // namespace cansys::catalog
