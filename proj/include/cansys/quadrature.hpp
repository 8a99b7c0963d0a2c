#pragma once

#include <cmath>
#include <cstddef>
#include <functional>

namespace cansys {

// Gauss-Kronrod 15(7) nodes/weights on [-1,1]; the embedded 7-point Gauss
// rule provides the error estimate. All Kronrod weights are positive, so
// integrals of nonnegative integrands stay nonnegative.
struct GK15 {
  static constexpr int n = 15;
  static constexpr double node[n] = {
      -0.991455371120813, -0.949107912342759, -0.864864423359769,
      -0.741531185599394, -0.586087235467691, -0.405845151377397,
      -0.207784955007898, 0.0,                0.207784955007898,
      0.405845151377397,  0.586087235467691,  0.741531185599394,
      0.864864423359769,  0.949107912342759,  0.991455371120813};
  static constexpr double wk[n] = {
      0.022935322010529, 0.063092092629979, 0.104790010322250,
      0.140653259715525, 0.169004726639267, 0.190350578064785,
      0.204432940075298, 0.209482141084728, 0.204432940075298,
      0.190350578064785, 0.169004726639267, 0.140653259715525,
      0.104790010322250, 0.063092092629979, 0.022935322010529};
  // Gauss-7 weights aligned with odd Kronrod indices 1,3,...,13.
  static constexpr double wg[7] = {
      0.129484966168870, 0.279705391489277, 0.381830050505119,
      0.417959183673469, 0.381830050505119, 0.279705391489277,
      0.129484966168870};
};

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  std::size_t evaluations = 0;
  bool converged = true;
};

template <class F>
void gk15_panel(F&& f, double a, double b, double& kron, double& err) {
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double k = 0.0, g = 0.0;
  for (int i = 0; i < GK15::n; ++i) {
    const double v = f(c + h * GK15::node[i]);
    k += GK15::wk[i] * v;
    if (i % 2 == 1) g += GK15::wg[i / 2] * v;
  }
  kron = k * h;
  err = std::abs((k - g) * h);
}

// Adaptive bisection driven by the embedded error estimate.
template <class F>
QuadResult integrate(F&& f, double a, double b, double abs_tol,
                     int max_depth = 30) {
  QuadResult out;
  struct Seg {
    double a, b, tol;
    int depth;
  };
  std::function<void(Seg)> rec = [&](Seg s) {
    double v, e;
    gk15_panel(f, s.a, s.b, v, e);
    out.evaluations += GK15::n;
    if (e <= s.tol || s.depth >= max_depth) {
      out.value += v;
      out.error += e;
      if (e > s.tol) out.converged = false;
      return;
    }
    const double m = 0.5 * (s.a + s.b);
    rec({s.a, m, 0.5 * s.tol, s.depth + 1});
    rec({m, s.b, 0.5 * s.tol, s.depth + 1});
  };
  if (a == b) return out;
  rec({a, b, abs_tol, 0});
  return out;
}

// Non-adaptive single panel (used for cell integrals on prepared meshes).
template <class F>
double gk15(F&& f, double a, double b) {
  double v, e;
  gk15_panel(f, a, b, v, e);
  return v;
}

}  // namespace cansys
