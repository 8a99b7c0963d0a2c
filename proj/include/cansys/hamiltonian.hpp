#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cansys/scaled.hpp"

namespace cansys {

// ---------------------------------------------------------------------------
// Scalar functions of t, serializable when built from the named registry.
// ---------------------------------------------------------------------------
struct NamedFn {
  std::string name;                       // registry key, or "derived:*"
  std::map<std::string, double> params;
  std::function<double(double)> fn;

  double operator()(double t) const { return fn(t); }
  bool serialisable() const { return !name.empty() && name.rfind("derived:", 0) != 0; }
};

// Registry lookup; throws std::invalid_argument for unknown names.
NamedFn make_named_fn(const std::string& name,
                      const std::map<std::string, double>& params);
// Wrap an ad-hoc closure (not serialisable by name).
NamedFn make_derived_fn(const std::string& label, std::function<double(double)> f);
std::vector<std::string> registered_fn_names();

// ---------------------------------------------------------------------------
// Hamiltonian bodies.
// ---------------------------------------------------------------------------

// Sequence of indivisible segments: H = xi_{phi_j} xi_{phi_j}^T on a segment
// of length l_j (trace-parameterised). Angles are stored unreduced; adjacent
// angles must differ mod pi. tail_trace records trace mass beyond the stored
// segments (infinity if the full sequence diverges).
struct HamburgerBody {
  std::vector<double> length;
  std::vector<double> angle;
  double tail_trace = 0.0;
};

struct DiagonalBody {
  NamedFn h1, h2;
};

// H = trace(t) * xi_{angle(t)} xi_{angle(t)}^T.
struct RotatingBody {
  NamedFn trace, angle;
};

struct GeneralBody {
  NamedFn h1, h2, h3;
};

using HamiltonianBody =
    std::variant<HamburgerBody, DiagonalBody, RotatingBody, GeneralBody>;

// ---------------------------------------------------------------------------
// Compiled piecewise-constant view. All downstream computation acts on this
// discretisation exactly, so additivity and determinant monotonicity hold to
// rounding. Cell integrals come from a positive-weight quadrature, hence each
// cell matrix is PSD by construction.
// ---------------------------------------------------------------------------
struct Piecewise {
  double a = 0.0, b = 1.0;  // declared interval (b may be +inf)
  double t0 = 0.0, t1 = 1.0;  // compiled range [t0, t1] subset of [a, b]
  std::vector<double> kn;                  // knots, size M+1
  std::vector<double> c1, c2, c3;          // cumulative omega entries at knots
  std::vector<double> e1, e2, e3;          // per-cell omega entries, size M
  double head_dropped = 0.0, tail_dropped = 0.0;  // truncated trace mass
  bool tail_infinite = false;
  std::optional<double> tail_angle;  // direction of an infinite indivisible tail

  std::size_t cells() const { return e1.size(); }
  std::size_t locate(double t) const;
  Mat2 cell(std::size_t k) const {
    Mat2 m;
    m << e1[k], e3[k], e3[k], e2[k];
    return m;
  }
  double cell_width(std::size_t k) const { return kn[k + 1] - kn[k]; }
  Mat2 prefix(std::size_t k) const {
    Mat2 m;
    m << c1[k], c3[k], c3[k], c2[k];
    return m;
  }
  // Integral over [lo, hi] of the discretised Hamiltonian (partial cells by
  // linear share). Narrow spans are summed cell-by-cell to avoid cancellation.
  Mat2 omega(double lo, double hi) const;
  // Integral over a whole-cell index range [i, j).
  Mat2 range_omega(std::size_t i, std::size_t j) const;
  double trace_prefix(double t) const;  // trace mass on [t0, t]
  double total_trace() const { return c1.back() + c2.back(); }
  Mat2 total() const { return prefix(cells()); }
};

double det_psd(const Mat2& m);  // clamped determinant of a PSD matrix

// ---------------------------------------------------------------------------
// Mesh construction control.
// ---------------------------------------------------------------------------
struct GridSpec {
  std::optional<double> t_lo, t_hi;  // truncation bounds (default: a, b)
  int base_cells = 4096;
  int max_cells = 1 << 19;
  double angle_step = 0.05;       // target angle variation per cell
  double trace_log_step = 0.7;    // target log-trace variation per cell
  enum class Grading { Uniform, GeometricToA, GeometricToB };
  Grading grading = Grading::Uniform;
  double geometric_floor = 1e-12;  // relative size of the smallest graded cell
  std::vector<double> knots;       // must-have knots (kinks, atoms)
};

// ---------------------------------------------------------------------------
// Descriptor: interval + body + compiled mesh + provenance info.
// ---------------------------------------------------------------------------
struct HamiltonianDesc {
  double a = 0.0, b = 1.0;
  std::shared_ptr<const HamiltonianBody> body;
  std::shared_ptr<const Piecewise> mesh;
  std::string origin;  // construction note ("catalog:chirp", "rotate(...)", ...)

  const Piecewise& pw() const { return *mesh; }
  const HamiltonianBody& raw() const { return *body; }
};

HamiltonianDesc make_hamiltonian(double a, double b, HamiltonianBody body,
                                 const GridSpec& spec = {},
                                 std::string origin = {});

// Build a descriptor from explicitly precomputed cell integrals. Used for
// bodies whose cell values come from closed-form averaging rather than
// pointwise quadrature (rapidly rotating angles). Knots must be strictly
// increasing inside [a, b]; cells are PSD-clamped exactly like the function
// compiler, and cumulative sums are recomputed here.
HamiltonianDesc assemble_hamiltonian(double a, double b, HamiltonianBody body,
                                     std::vector<double> knots,
                                     std::vector<double> e1,
                                     std::vector<double> e2,
                                     std::vector<double> e3,
                                     double head_dropped = 0.0,
                                     double tail_dropped = 0.0,
                                     bool tail_infinite = false,
                                     std::string origin = {});

// ---------------------------------------------------------------------------
// Core operations.
// ---------------------------------------------------------------------------

// Integral of H over [s, t] (clamped to the compiled range).
Mat2 omega(const HamiltonianDesc& h, double s, double t);

enum class Boundary { LimitCircle, LimitPoint };

struct Classification {
  Boundary boundary = Boundary::LimitCircle;
  bool definite = true;
  double trace_mass = 0.0;     // total trace including recorded tails
  bool whole_indivisible = false;
};
Classification classify(const HamiltonianDesc& h);

struct IndivisibleInterval {
  double from, to;
  double type_angle;  // in [0, pi)
};
// Maximal runs where the discretised H is rank-one with constant direction.
// Resolution is limited by the compiled mesh.
std::vector<IndivisibleInterval> indivisible_intervals(
    const HamiltonianDesc& h, double det_tol = 1e-9, double angle_tol = 1e-7);

// Conjugation H_psi(t) = R_psi H(t) R_psi^{-1}; preserves trace and det of
// every local integral. Hamburger angles shift by -psi.
HamiltonianDesc rotate(const HamiltonianDesc& h, double psi);

// Change of scale s = int_a^t tr H; result lives on (0, total trace) and has
// unit trace density. Exact on the compiled view.
HamiltonianDesc reparameterise_trace_normalised(const HamiltonianDesc& h);

// Keep only the part of (a,b) inside the union of [from,to] intervals and
// shift left (time change chi). keep = {{a,b}} is the identity.
HamiltonianDesc cut_out(const HamiltonianDesc& h,
                        const std::vector<std::pair<double, double>>& keep);

// Diagonal H -> the two rank-one Hamiltonians of the splitting transform.
// first: on (0, int h2), entries [[x^2, x],[x, 1]] with x = (int h1) at the
// position where (int h2) reaches the new time; second: mirrored with
// [[1, -y],[-y, y^2]]. Requires a diagonal body (h3 = 0 on the mesh).
std::pair<HamiltonianDesc, HamiltonianDesc> split_diagonal(
    const HamiltonianDesc& h);

// Krein string (length L, mass = density + atoms) -> diagonal trace-normalised
// Hamiltonian on (0, infinity) via the travel-time change tau(x) = x + m(x).
struct StringSpec {
  double length = 1.0;
  std::optional<NamedFn> density;  // mass density on [0, length]
  std::vector<std::pair<double, double>> atoms;  // (position, mass)
};
HamiltonianDesc string_to_hamiltonian(const StringSpec& s,
                                      int base_cells = 4096);

}  // namespace cansys
