#pragma once
// Named example families. Each entry builds a Hamiltonian descriptor and/or
// a Jacobi parameter set, together with the asymptotic facts expected for
// that family (growth exponents, orders, types, classification labels).
// The expected values feed the validation suites and the command-line tool.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hamiltonian.hpp"
#include "jacobi.hpp"

namespace cansys::catalog {

// A single expected quantity, with a plain-words note on what it means and
// which known asymptotic statement it reflects.
struct ExpectedFact {
  std::string key;
  double value = 0.0;
  std::string note;
};

struct CatalogEntry {
  std::string name;
  std::map<std::string, double> params;  // resolved (defaults filled in)
  std::optional<HamiltonianDesc> hamiltonian;
  std::optional<JacobiParams> jacobi;
  std::vector<ExpectedFact> facts;
  std::vector<std::string> warnings;  // e.g. parameters outside the proven range
  double r_lo = 10.0, r_hi = 1e3;     // suggested radius window for growth fits
  int r_points = 16;
  bool limit_circle = true;

  bool has_fact(const std::string& key) const;
  double fact(const std::string& key) const;  // throws if the key is missing
  const HamiltonianDesc& ham() const;         // throws if no Hamiltonian form
  const JacobiParams& jac() const;            // throws if no Jacobi form
};

struct EntryInfo {
  std::string name;
  std::string summary;
  std::map<std::string, double> defaults;
};

const std::vector<EntryInfo>& registry();
std::vector<std::string> names();

// Entries whose default-parameter instance is in limit circle case; safe for
// monodromy-based sweeps.
std::vector<std::string> limit_circle_names();

// Build by name. Unspecified parameters take their defaults; unknown names,
// unknown parameter keys, or out-of-domain values throw
// std::invalid_argument. Builders are deterministic and results are memoised,
// so repeated builds share compiled meshes.
CatalogEntry build(const std::string& name,
                   std::map<std::string, double> params = {});

// Drop all memoised instances (frees large meshes).
void clear_cache();

// Type constant of the power-weight Jacobi family with exponent p > 1:
//   p * int_0^1 (1 - t^(2p))^(-1/p) dt,
// evaluated by dyadic-panel quadrature accumulating towards the t = 1
// endpoint singularity.
double power_weight_type(double p);

}  // namespace cansys::catalog
