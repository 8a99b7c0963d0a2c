#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cansys/hamiltonian.hpp"
#include "cansys/scaled.hpp"
#include "cansys/transfer.hpp"

namespace cansys {

// ---------------------------------------------------------------------------
// Tridiagonal parameter set: diagonal entries a_n (real) and off-diagonal
// entries b_n (positive). Sequences may be given explicitly, or extended on
// demand from a deterministic generator rule up to `truncation` terms.
// ---------------------------------------------------------------------------
struct JacobiParams {
  std::vector<double> a;
  std::vector<double> b;
  std::size_t truncation = 1u << 16;
  // n -> (a_n, b_n); optional, used to extend the stored vectors.
  std::function<std::pair<double, double>(std::size_t)> rule;
  std::string rule_name;            // serialisable provenance of `rule`
  std::vector<double> rule_params;  // parameters of `rule`

  std::size_t stored() const { return std::min(a.size(), b.size()); }
  void validate() const;  // finite a_n, b_n > 0; throws invalid_argument
};

// Copy with at least n_terms pairs stored (throws if no rule and too short).
JacobiParams materialise(const JacobiParams& j, std::size_t n_terms);

// ---------------------------------------------------------------------------
// First/second-kind orthonormal polynomial values at a fixed point, from the
// three-term recurrence
//     z p_n = b_n p_{n+1} + a_n p_n + b_{n-1} p_{n-1},
// seeded with p_{-1} = 0, p_0 = 1 and q_{-1} = -1, q_0 = 0 (b_{-1} = -1).
// Values are stored as mantissa * exp(logscale[n]); p[n] and q[n] share a
// scale so their ratio and joint magnitude stay meaningful for long runs.
// ---------------------------------------------------------------------------
struct PolyPair {
  Cplx z{0.0, 0.0};
  std::vector<Cplx> p, q;        // mantissas, index n = 0..N
  std::vector<double> logscale;  // shared scale per index
  // Max deviation of the cross-product invariant
  // b_n (p_{n+1} q_n - p_n q_{n+1}) from its seeded value 1.
  double invariant_drift = 0.0;

  std::size_t size() const { return p.size(); }
  Cplx p_value(std::size_t n) const { return p[n] * std::exp(logscale[n]); }
  Cplx q_value(std::size_t n) const { return q[n] * std::exp(logscale[n]); }
  double log_abs_p(std::size_t n) const;
  double log_abs_q(std::size_t n) const;
};

PolyPair eval_polys(const JacobiParams& j, Cplx z, std::size_t n_max);

// Monomial coefficients of p_0..p_n_max in plain doubles; intended for small
// degrees (coefficient checks, Gram matrices). Throws on overflow.
std::vector<std::vector<double>> poly_coefficients(const JacobiParams& j,
                                                   std::size_t n_max);

// Power moments s_0..s_n_max of the measure attached to the parameters
// (s_0 = 1): s_n is the top-left entry of the n-th power of the tridiagonal
// matrix, computed exactly via band vectors v_m with s_{2m} = |v_m|^2 and
// s_{2m+1} = <v_m, v_{m+1}>. Entries overflowing double are reported as inf.
std::vector<double> moments(const JacobiParams& j, std::size_t n_max);

// log s_{2m} for m = 0..count-1, computed in scaled arithmetic (no overflow).
std::vector<double> even_moment_logs(const JacobiParams& j, std::size_t count);

// ---------------------------------------------------------------------------
// Series diagnostics: partial-sum traces with a fitted tail.
// ---------------------------------------------------------------------------
struct SeriesTrace {
  std::vector<double> partial;  // sampled partial sums (geometric index grid)
  double increment_slope = 0.0;  // fitted slope of log-increment vs log-index
  double slope_ci = 0.0;         // two-sigma half-width of the slope
  double tail_estimate = 0.0;    // extrapolated remaining mass (inf if divergent)
  bool convergent = false;
  bool divergent = false;
};

enum class BoundaryGuess { LimitCircle, LimitPoint, Undecided };
std::string to_string(BoundaryGuess g);

struct BoundaryTest {
  BoundaryGuess verdict = BoundaryGuess::Undecided;
  SeriesTrace inverse_b;        // sum 1/b_n        (divergence forces limit point)
  SeriesTrace mixed;            // sum |a_{n+1}|/(b_n b_{n+1})   (same role)
  SeriesTrace principal_mass;   // sum p_n(0)^2 + q_n(0)^2  (convergence <=> limit circle)
  std::size_t terms_used = 0;
};

BoundaryTest limit_circle_test(const JacobiParams& j,
                               std::size_t n_budget = 4096);

// ---------------------------------------------------------------------------
// Bidirectional correspondence with trace-normalised rank-one segment chains.
// Forward direction: solve the recurrence at z = 0 and set
//     l_{n+1} = p_n(0)^2 + q_n(0)^2,
//     phi_{n+1} = atan2(p_n(0), -q_n(0)) reduced to [0, pi),
// so l_1 = 1, phi_1 = pi/2. A consistency residual against the closed-form
// off-diagonal identity b_k * sqrt(l_{k+1} l_{k+2}) * |sin(phi_{k+2}-phi_{k+1})| = 1
// is recorded; drift beyond 1e-8 triggers a higher-precision re-solve.
// ---------------------------------------------------------------------------
struct HamburgerConversion {
  HamiltonianDesc desc;              // body holds the segment chain
  std::vector<double> length;        // l_1..l_N (copy of body data)
  std::vector<double> angle;         // phi_1..phi_N in [0, pi)
  double drift = 0.0;                // max consistency residual
  bool high_precision = false;       // re-solve was needed
  SeriesTrace length_tail;           // tail behaviour of the lengths
};

HamburgerConversion jacobi_to_hamburger(const JacobiParams& j,
                                        std::size_t n_terms = 0);

// Inverse direction. Requires a rank-one segment-chain body normalised to
// l_1 = 1, phi_1 = pi/2 (mod pi); rejects anything else. Consecutive angles
// equal mod pi are a breakdown (reported with the offending index).
JacobiParams hamburger_to_jacobi(const HamiltonianDesc& h);

// ---------------------------------------------------------------------------
// 2x2 entire matrix attached to a limit-circle parameter set, obtained from
// the monodromy W_H of the associated segment chain as
//     W(z) = diag(1,-1) * W_H(z) * J * diag(1,-1).
// det W = 1; entries are real on the real axis.
// ---------------------------------------------------------------------------
struct NevanlinnaEval {
  SMat2c w;                 // scaled entries [[A, C], [B, D]]
  double tail_bound = 0.0;  // |z| * dropped trace: first-order truncation effect
  std::size_t segments = 0;
};

NevanlinnaEval nevanlinna_matrix(const HamiltonianDesc& hamburger, Cplx z,
                                 const TransferOptions& opt = {});
NevanlinnaEval nevanlinna_matrix(const JacobiParams& j, Cplx z,
                                 std::size_t n_terms = 0,
                                 const TransferOptions& opt = {});

// ---------------------------------------------------------------------------
// Square-summed polynomial aggregate Delta(z) = (sum_n |p_n(z)|^2)^{1/2}.
// The series is truncated once 50 consecutive relative increments fall below
// tol; the last relative increment is kept as a tail certificate. Divergence
// (limit-point data at nonreal z) raises domain_error.
// ---------------------------------------------------------------------------
struct DeltaResult {
  double log_delta = 0.0;
  std::size_t terms_used = 0;
  double tail_certificate = 0.0;  // last relative increment
  double value() const { return std::exp(log_delta); }
};

DeltaResult delta(const JacobiParams& j, Cplx z, double tol = 1e-14,
                  std::size_t max_terms = 1u << 18);

// ---------------------------------------------------------------------------
// Growth floor package: entire comparison series and window determinants.
//   log_G(r): log of sum_{n>=1} r^{2n} / (b_0...b_{n-1})^2
//   log_F(r): log of sum_{n>=0} r^{2n} / s_{2n}        (F <= G pointwise)
//   window_b[k-2][n] = [ (1/2) sum_{i,j=n+1..n+k} l_i l_j sin^2(phi_i-phi_j) ]^{-1/2},
// the k-window rotation determinants of the associated segment chain; the
// growth order is bounded below by each sequence's convergence exponent.
// ---------------------------------------------------------------------------
struct ExponentFit {
  double value = 0.0;
  double ci = 0.0;        // two-sigma width propagated from the slope fit
  bool declared = false;  // true when ci < 0.05 and the fit is usable
};

struct LowerBoundReport {
  std::vector<double> log_b_prefix;      // [n] = sum_{j<n} log b_j, [0] = 0
  std::vector<double> log_even_moments;  // [m] = log s_{2m}
  std::vector<std::vector<double>> window_b;   // k = 2.. (index k-2)
  std::vector<ExponentFit> window_exponents;   // convergence exponents per k
  ExponentFit order_floor;  // best declared convergence exponent

  double log_G(double r) const;
  double log_F(double r) const;
};

LowerBoundReport lower_bounds(const JacobiParams& j, int k_max = 5,
                              std::size_t n_terms = 4096);

// ---------------------------------------------------------------------------
// Regular-offdiagonal/small-diagonal criterion. With
// alpha_n = a_n / sqrt(b_{n-1} b_n), the criterion applies when
//   (1) sum 1/b_n converges,
//   (2) sum |alpha_{n+1} - alpha_n| converges and lim alpha_n lies in (-2, 2),
//   (3) sum |b_n / sqrt(b_{n-1} b_{n+1}) - 1| converges;
// then the data is limit circle and the growth order equals the convergence
// exponent of (b_n).
// ---------------------------------------------------------------------------
struct BerezanskiiReport {
  bool applies = false;
  std::optional<double> predicted_order;
  bool inverse_b_convergent = false;
  bool diagonal_regular = false;
  bool offdiagonal_regular = false;
  double alpha_limit = 0.0;     // extrapolated limit of alpha_n
  double alpha_limit_ci = 0.0;  // two-sigma width of the extrapolation
  ExponentFit b_exponent;
  SeriesTrace inverse_b, alpha_increments, log_regularity;
};

BerezanskiiReport berezanskii_check(const JacobiParams& j,
                                    std::size_t n_terms = 4096);

// ---------------------------------------------------------------------------
// Two-sided coefficient bounds for max_{|z|=r} Delta(z). Writing
// p_n(z) = sum_k c_{k,n} z^k and column sums C_k = sum_{n>=k} c_{k,n}^2:
//   lower = ( sum_k C_k r^{2k} )^{1/2},  upper = sum_k sqrt(C_k) r^k.
// Columns are truncated with monitored tails; if the rows do not settle
// within the budget a runtime_error is raised.
// ---------------------------------------------------------------------------
struct BergSzwarcBounds {
  double r = 0.0;
  double log_lower = 0.0;
  double log_upper = 0.0;
  std::vector<double> log_column_sums;  // log C_k
  std::size_t rows_used = 0;
  double tail_certificate = 0.0;  // last relative row contribution
  double lower() const { return std::exp(log_lower); }
  double upper() const { return std::exp(log_upper); }
};

BergSzwarcBounds berg_szwarc_bounds(const JacobiParams& j, double r,
                                    std::size_t max_rows = 4096);

}  // namespace cansys
