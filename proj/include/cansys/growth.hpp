#pragma once
// Growth toolkit: determinant equipartitions, kernel integrals for counting
// bounds, discretisation upper bounds, covering sums, and order-bracket
// classification for regularly varying Hamburger data.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hamiltonian.hpp"
#include "lindelof.hpp"

namespace cansys {

// ------------------------------------------------------------------
// Determinant equipartition: sigma_0 = left end, then each next point
// solves det Omega(sigma_{j-1}, sigma_j) = 1/r^2 until the remaining
// tail has det Omega <= 1/r^2.
// ------------------------------------------------------------------
struct KappaPartition {
    double r = 0.0;
    std::vector<double> points; // sigma_0 < sigma_1 < ... < sigma_kappa
    int kappa() const { return static_cast<int>(points.size()) - 1; }
};

KappaPartition kappa(const HamiltonianDesc& h, double r);

// Upper bound floor(r*sqrt(det Omega_total)) + 1 for the segment count.
double kappa_segment_cap(const HamiltonianDesc& h, double r);

// ------------------------------------------------------------------
// Two-sided growth check: segment counts below, the discretisation
// bound with explicit constants above.
// ------------------------------------------------------------------
struct SandwichRow {
    double r = 0.0;
    int kappa_r = 0;
    int kappa_r_over_logr = 0;
    double log_max = 0.0;        // max of log||W|| over boundary probes + ir
    double log_abs_w22_ir = 0.0;
    double upper_bound = 0.0;    // kappa(r/log r)*(4 log r + gamma) + log r + gamma'
    bool upper_ok = true;        // log_max <= upper_bound
};

struct SandwichReport {
    double gamma = 0.0;          // log+ TrOmega + 3 + 2 log 2
    double gamma_prime = 0.0;    // log+ TrOmega + log 2
    std::vector<SandwichRow> rows;
    double kappa_exponent = 0.0;   // top-window log-log slope of kappa(r)
    double logw_exponent = 0.0;    // same for log|w22(ir)|
    // Slope from the fit log kappa = a + rho log r + b log log r, which
    // absorbs slowly varying corrections; needs >= 6 usable grid points.
    double kappa_exponent_detrended = 0.0;
    bool upper_violations = false;
};

SandwichReport kappa_sandwich(const HamiltonianDesc& h,
                              const std::vector<double>& r_grid);

// ------------------------------------------------------------------
// Compatible pair: t_hat(r) with c-/r^2 <= det Omega(a, t_hat) <= c+/r^2
// and s_hat(t, r) <= t with the same bracket for det Omega(s_hat, t).
// Both are produced by bisection on the monotone determinant.
// ------------------------------------------------------------------
class CompatiblePair {
public:
    CompatiblePair(std::shared_ptr<const Piecewise> mesh, double r0,
                   double c_minus, double c_plus);

    double r0() const { return r0_; }
    double c_minus() const { return c_minus_; }
    double c_plus() const { return c_plus_; }

    bool valid_at(double r) const;
    double t_hat(double r) const;             // throws if r <= r0 or invalid
    double s_hat(double t, double r) const;   // requires t >= t_hat(r)

private:
    std::shared_ptr<const Piecewise> mesh_;
    double r0_ = 0.0, c_minus_ = 0.0, c_plus_ = 0.0;
    double det_total_ = 0.0;
};

CompatiblePair compatible_pair(const HamiltonianDesc& h, double r0,
                               double c_minus = 1.0, double c_plus = 1.0);

// ------------------------------------------------------------------
// Counting kernel: first summand w2*h1/(c+/r^2 + w3^2) on [a, t_hat),
// second summand h1/w1(s_hat(t,r), t) on [t_hat, b).
// ------------------------------------------------------------------
struct KernelIntegral {
    double r = 0.0;
    double t_hat = 0.0;
    double first = 0.0;
    double second = 0.0;
    double total() const { return first + second; }
};

KernelIntegral k_kernel_integral(const HamiltonianDesc& h, double r,
                                 const CompatiblePair& pair);

// ------------------------------------------------------------------
// Discretisation bound for rank-one Hamiltonians: partition y, rotation
// parameters psi, distortions a in (0,1]; the bound is
//   r*(A1+A2) + A3 + A4.
// ------------------------------------------------------------------
struct RotationApproxParams {
    std::vector<double> y;    // y_0 < ... < y_N, endpoints included
    std::vector<double> psi;  // size N
    std::vector<double> a;    // size N, each in (0,1]
    int segments() const { return static_cast<int>(psi.size()); }
};

struct RotationApproxBound {
    double a1 = 0.0, a2 = 0.0, a3 = 0.0, a4 = 0.0;
    double r = 0.0;
    double value() const { return r * (a1 + a2) + a3 + a4; }
};

RotationApproxBound romanov1_bound(const HamiltonianDesc& h,
                                   const RotationApproxParams& p, double r);

// Warm start from the determinant equipartition at r/log r: per-segment
// principal angle and eigenvalue-ratio distortion.
RotationApproxParams romanov1_auto_params(const HamiltonianDesc& h, double r);

// Coordinate descent over (psi_j, a_j) starting from p; returns improved
// parameters (best-effort, no optimality claim).
RotationApproxParams romanov1_optimise(const HamiltonianDesc& h,
                                       RotationApproxParams p, double r,
                                       int sweeps = 3);

// ------------------------------------------------------------------
// Covering sums: the determinant equipartition with kappa(r(N)) = N and
// its sum of sqrt(det Omega) over segments.
// ------------------------------------------------------------------
struct FiniteRankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CoveringSum {
    int requested = 0;
    int achieved = 0;   // kappa at the chosen radius (plateaus may skip N)
    double r = 0.0;     // smallest radius with kappa(r) >= requested
    double sum = 0.0;   // sum over segments of sqrt(det Omega(c_j, d_j))
};

CoveringSum romanov2_covering_sum(const HamiltonianDesc& h, int n_segments);

// ------------------------------------------------------------------
// Region classification for Hamburger data with regularly varying
// length/angle-difference envelopes d_l, d_phi (indices delta_l >= 1,
// delta_phi >= 0).  Returns the region tag, the order bracket, the lower
// bound function k(r) (asymptotic inverse of 1/(d_l*d_phi)) and a
// numeric upper-bound evaluator chosen by the convergence/divergence of
// the integral of sqrt(d_l*d_phi).
// ------------------------------------------------------------------
enum class RVRegion { I, II, III, IV };

std::string to_string(RVRegion r);

struct RegionReport {
    RVRegion region = RVRegion::I;
    double delta_l = 0.0;
    double delta_phi = 0.0;
    double order_lower = 0.0;
    double order_upper = 0.0;
    ComparisonFunction lower_fn;                 // k(r)
    std::function<double(double)> upper_fn;      // log-growth upper bound
    std::string upper_case;                      // which recipe was used
};

RegionReport classify_rv_regions(const ComparisonFunction& d_l,
                                 const ComparisonFunction& d_phi);

} // namespace cansys
