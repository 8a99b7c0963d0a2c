#pragma once
// Spectral toolkit: eigenvalue location for limit-circle systems, counting
// functions, trace identities, discreteness verdicts, growth fits, and
// convergence tests for eigenvalue series.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "growth.hpp"
#include "hamiltonian.hpp"
#include "lindelof.hpp"

namespace cansys {

// ------------------------------------------------------------------
// Eigenvalues of the selfadjoint realisation with boundary condition
// picking w22: zeros of z -> w22(z), computed by sign scanning plus
// bisection, with interlacing of w21 zeros as the completeness check.
// ------------------------------------------------------------------
struct Spectrum {
    std::vector<double> eigenvalues;     // sorted ascending (signed)
    std::vector<double> bracket_widths;  // final bisection bracket per zero
    double r_max = 0.0;                  // scan radius actually covered
    int count(double r) const;           // #{ |lambda| <= r }
};

Spectrum eigenvalues(const HamiltonianDesc& h, double r_max);

int count(const HamiltonianDesc& h, double r);

double log_abs_w22_imag(const HamiltonianDesc& h, double r);

// ------------------------------------------------------------------
// Trace identities: power sums of reciprocal eigenvalues against exact
// integrals of the primitive matrix entries.
// ------------------------------------------------------------------
struct TraceReport {
    double sum1 = 0.0, rhs1 = 0.0;   // sum 1/lambda   vs -int h3
    double sum2 = 0.0, rhs2 = 0.0;   // sum 1/lambda^2 vs 2*int w2(a,t)h1(t)
    double sum3 = 0.0, rhs3 = 0.0;   // sum 1/lambda^3 vs iterated integral
    double tail1 = 0.0, tail2 = 0.0, tail3 = 0.0; // bounds on missing tail
    double resid1 = 0.0, resid2 = 0.0, resid3 = 0.0;
    double r_max = 0.0;
    bool offset_shift = false;        // scan recentred because w22(0) ~ 0
};

TraceReport trace_formulas(const HamiltonianDesc& h, double r_max = 1e5);

// ------------------------------------------------------------------
// Discreteness: limit-circle systems are discrete outright; limit-point
// systems are tested through the endpoint functional
//   alpha(t) = int_t^b xi_phi' H xi_phi * int_a^t xi_{phi+pi/2}' H xi_{phi+pi/2}
// whose limit decides discreteness (0 yes, infinity no, finite both-gap).
// ------------------------------------------------------------------
enum class Verdict { Discrete, NotDiscrete, GapBracket, Inconclusive };

std::string to_string(Verdict v);

struct DiscretenessReport {
    Verdict verdict = Verdict::Inconclusive;
    bool via_limit_circle = false;
    std::optional<double> phi;        // integrable direction used, if any
    std::vector<double> sample_t;     // probe points approaching the endpoint
    std::vector<double> alpha_values; // alpha(t) at the probes
    double alpha_limsup = 0.0;
    double alpha_liminf = 0.0;
    double gap_lower = 0.0;           // 1/4 / sqrt(alpha_limsup) style bound
    double gap_upper = 0.0;
    bool diagonal_refined = false;    // sharper constants for diagonal H
    double diag_lower = 0.0;
    double diag_upper = 0.0;
    bool no_integrable_direction = false;
};

DiscretenessReport discreteness(const HamiltonianDesc& h,
                                std::optional<double> phi = std::nullopt);

// ------------------------------------------------------------------
// Growth fitting: order/type of a positive sample set against a
// comparison function, with a crude confidence interval from the
// regression residuals over the top half of the window.
// ------------------------------------------------------------------
struct GrowthSample {
    double r = 0.0;
    double value = 0.0; // e.g. log|w22(ir)| or kappa(r)
};

struct GrowthFit {
    double order = 0.0;
    double order_ci = 0.0;       // half-width of the slope CI
    double type = 0.0;           // sup of value / g(r) over top window
    double type_spread = 0.0;    // max/min ratio over the top window
    double window_begin = 0.0;   // first radius used in the fit
    bool short_range = false;    // fewer than three decades of radii
    bool non_monotone = false;
};

GrowthFit fit_growth(const std::vector<GrowthSample>& samples,
                     const ComparisonFunction& comparison);

// Convenience: sample log|w22(ir)| on a geometric radius grid and fit
// against r^order.
GrowthFit fit_order(const HamiltonianDesc& h, double r_lo, double r_hi,
                    int n_samples = 16);

// ------------------------------------------------------------------
// Series tests for limit-point systems with a chosen direction phi:
// convergence of sum |lambda|^-rho through the two-sided integral
//   int (int_t^b f_phi)^(rho/2-1) (int_a^t f_psi)^(rho/2) f_phi(t) dt
// with psi = phi + pi/2, plus the dyadic tail sequence certificate.
// ------------------------------------------------------------------
struct DenseReport {
    double rho = 0.0;
    double phi = 0.0;
    double integral = 0.0;
    bool converges = false;
    std::vector<double> c_points;   // dyadic tail-mass split points
    std::vector<double> omega;      // omega_n sequence
    bool omega_summable = false;    // sum omega_n^rho' behaviour probe
};

DenseReport dense_tests(const HamiltonianDesc& h, double phi, double rho);

// ------------------------------------------------------------------
// Kernel-based series tests: convergence of sum 1/g(|lambda|) through
//   int_{r0}^inf (r g*(r))^-1 int K_H(t; r) dt dr
// where g* is the upper-recipe companion of g (depends on Ind g).
// ------------------------------------------------------------------
struct SparseReport {
    double integral = 0.0;
    bool converges = false;
    double index = 0.0;                  // Ind g
    double first_summand_log_slack = 0.0; // max over r of first(r) - 2 log r
    std::vector<double> r_samples;
    std::vector<double> kernel_totals;
};

SparseReport sparse_tests(const HamiltonianDesc& h,
                          const ComparisonFunction& g,
                          double r0 = 8.0, double r1 = 1e6);

} // namespace cansys
