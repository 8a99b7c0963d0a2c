#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cansys {

// Comparison function c * r^alpha * (log r)^{beta[0]} * (loglog r)^{beta[1]} * ...
// The symbolic fields support an exact leading-order calculus (products,
// powers, composition, Karamata integrals, asymptotic inverse). An optional
// refined evaluator overrides pointwise evaluation without touching the
// symbolic part; it is installed by asymptotic_inverse so that composition
// residuals vanish to solver tolerance.
struct ComparisonFunction {
  double scale = 1.0;
  double alpha = 0.0;
  std::vector<double> beta;  // iterated-log exponents, beta[0] at level log r
  std::function<double(double)> eval_override;

  double index() const { return alpha; }

  // Iterated logs guarded away from zero; valid comparisons use large r.
  static double iter_log(double r, int level) {
    double v = r;
    for (int i = 0; i <= level; ++i) v = std::log(std::max(v, 1.0000001));
    return std::max(v, 1e-3);
  }

  double symbolic_eval(double r) const {
    double v = scale * std::pow(r, alpha);
    for (std::size_t k = 0; k < beta.size(); ++k)
      if (beta[k] != 0.0) v *= std::pow(iter_log(r, static_cast<int>(k)), beta[k]);
    return v;
  }

  double operator()(double r) const {
    return eval_override ? eval_override(r) : symbolic_eval(r);
  }

  std::string to_string() const {
    std::string s = std::to_string(scale) + " * r^" + std::to_string(alpha);
    for (std::size_t k = 0; k < beta.size(); ++k) {
      if (beta[k] == 0.0) continue;
      s += " * log^[" + std::to_string(k + 1) + "](r)^" + std::to_string(beta[k]);
    }
    return s;
  }
};

inline std::vector<double> pad_to(const std::vector<double>& v, std::size_t n) {
  std::vector<double> r(n, 0.0);
  for (std::size_t i = 0; i < v.size() && i < n; ++i) r[i] = v[i];
  return r;
}

inline ComparisonFunction cf_mul(const ComparisonFunction& a,
                                 const ComparisonFunction& b) {
  const std::size_t n = std::max(a.beta.size(), b.beta.size());
  ComparisonFunction r;
  r.scale = a.scale * b.scale;
  r.alpha = a.alpha + b.alpha;
  r.beta = pad_to(a.beta, n);
  const auto bb = pad_to(b.beta, n);
  for (std::size_t i = 0; i < n; ++i) r.beta[i] += bb[i];
  return r;
}

inline ComparisonFunction cf_pow(const ComparisonFunction& a, double p) {
  ComparisonFunction r = a;
  r.eval_override = nullptr;
  r.scale = std::pow(a.scale, p);
  r.alpha = a.alpha * p;
  for (auto& x : r.beta) x *= p;
  return r;
}

// Leading-order composition a(b(r)) for Ind b > 0.
inline ComparisonFunction cf_compose(const ComparisonFunction& a,
                                     const ComparisonFunction& b) {
  if (b.alpha <= 0.0)
    throw std::invalid_argument("cf_compose: inner function needs positive index");
  const std::size_t n = std::max(a.beta.size(), b.beta.size());
  ComparisonFunction r;
  r.alpha = a.alpha * b.alpha;
  r.beta = pad_to(b.beta, n);
  for (auto& x : r.beta) x *= a.alpha;
  const auto ab = pad_to(a.beta, n);
  for (std::size_t i = 0; i < n; ++i) r.beta[i] += ab[i];
  r.scale = a.scale * std::pow(b.scale, a.alpha);
  if (!a.beta.empty() && a.beta[0] != 0.0) r.scale *= std::pow(b.alpha, a.beta[0]);
  return r;
}

// Leading-order Karamata tail integral T(r) = int_r^inf g(t) dt/t, finite for
// negative index (or zero index with log-exponent < -1, recursively).
inline ComparisonFunction cf_karamata_tail(const ComparisonFunction& g) {
  if (g.alpha < 0.0) {
    ComparisonFunction r = g;
    r.eval_override = nullptr;
    r.scale /= -g.alpha;
    return r;
  }
  if (g.alpha > 0.0)
    throw std::invalid_argument("cf_karamata_tail: divergent integral");
  // Slowly varying: descend one log level. In u = log t the integrand becomes
  // u^{beta0} (log u)^{beta1} ... du.
  ComparisonFunction inner;
  inner.scale = g.scale;
  inner.alpha = g.beta.empty() ? 0.0 : g.beta[0];
  inner.beta.assign(g.beta.begin() + (g.beta.empty() ? 0 : 1), g.beta.end());
  if (inner.alpha >= -1.0)
    throw std::invalid_argument("cf_karamata_tail: divergent integral");
  // int_u^inf x^{a} L(x) dx ~ u^{a+1} L(u) / (-a-1).
  ComparisonFunction t;
  t.scale = inner.scale / (-inner.alpha - 1.0);
  t.alpha = inner.alpha + 1.0;
  t.beta = inner.beta;
  // Lift back: variable u = log r.
  ComparisonFunction r;
  r.scale = t.scale;
  r.alpha = 0.0;
  r.beta.assign(1, t.alpha);
  r.beta.insert(r.beta.end(), t.beta.begin(), t.beta.end());
  return r;
}

// Leading-order head integral int_{r0}^r g(t) dt/t, for positive index (or
// zero index with log-exponent > -1).
inline ComparisonFunction cf_karamata_head(const ComparisonFunction& g) {
  if (g.alpha > 0.0) {
    ComparisonFunction r = g;
    r.eval_override = nullptr;
    r.scale /= g.alpha;
    return r;
  }
  if (g.alpha < 0.0)
    throw std::invalid_argument("cf_karamata_head: tail-dominated integral");
  const double b0 = g.beta.empty() ? 0.0 : g.beta[0];
  if (b0 <= -1.0)
    throw std::invalid_argument("cf_karamata_head: not head-dominated");
  ComparisonFunction r = g;
  r.eval_override = nullptr;
  r.beta = pad_to(g.beta, std::max<std::size_t>(1, g.beta.size()));
  r.beta[0] = b0 + 1.0;
  r.scale = g.scale / (b0 + 1.0);
  return r;
}

// Does sum_j g(j) converge (g evaluated on integers, index < -1, or = -1
// with log-exponent < -1, etc.)? Pure index test on the Lindelof scale.
inline bool cf_series_converges(const ComparisonFunction& g) {
  if (g.alpha < -1.0) return true;
  if (g.alpha > -1.0) return false;
  for (std::size_t k = 0; k < g.beta.size(); ++k) {
    if (g.beta[k] < -1.0) return true;
    if (g.beta[k] > -1.0) return false;
  }
  return false;
}

// Asymptotic inverse of an eventually increasing comparison function with
// positive index. Symbolic part: if g(r) = c r^a h(log r) with h slowly
// varying of index b0, then f(x) = a^{b0/a} (x/c)^{1/a} h(log x)^{-1/a}
// evaluated to leading order. The pointwise evaluator refines this by a
// monotone solve of g(f) = x so that composition residuals are at solver
// tolerance; the symbolic fields are the canonical asymptotic form and
// applying the construction twice restores them exactly.
inline ComparisonFunction asymptotic_inverse(const ComparisonFunction& g) {
  if (g.alpha <= 0.0)
    throw std::invalid_argument("asymptotic_inverse: needs positive index");
  ComparisonFunction f;
  f.alpha = 1.0 / g.alpha;
  f.beta = g.beta;
  for (auto& x : f.beta) x *= -1.0 / g.alpha;
  const double b0 = g.beta.empty() ? 0.0 : g.beta[0];
  f.scale = std::pow(g.alpha, b0 / g.alpha) * std::pow(g.scale, -1.0 / g.alpha);
  ComparisonFunction gc = g;  // copy for the closure (symbolic eval only)
  gc.eval_override = g.eval_override;
  ComparisonFunction fsym = f;
  f.eval_override = [gc, fsym](double x) {
    if (x <= 0.0) return 0.0;
    // Bracket the root of g(r) = x around the symbolic guess in log r.
    double lo = std::log(std::max(fsym.symbolic_eval(x), 2.0)) - 8.0;
    double hi = lo + 16.0;
    lo = std::max(lo, std::log(1.5));
    auto gv = [&](double lr) { return gc(std::exp(lr)); };
    while (gv(hi) < x && hi < 1e4) hi += 4.0;
    while (gv(lo) > x && lo > std::log(1.5) + 1e-12) lo = std::max(std::log(1.5), lo - 4.0);
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (gv(mid) < x ? lo : hi) = mid;
      if (hi - lo < 1e-14 * std::max(1.0, std::abs(hi))) break;
    }
    return std::exp(0.5 * (lo + hi));
  };
  return f;
}

}  // namespace cansys
