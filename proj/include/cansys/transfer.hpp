#pragma once

#include "cansys/hamiltonian.hpp"
#include "cansys/scaled.hpp"

namespace cansys {

struct TransferOptions {
  // Relative error budget for collapsing mesh ranges into single matrix
  // exponentials. Ranges merge when the commutator estimate stays below
  // tol * (local trace share).
  double tol = 1e-11;
};

// Transfer matrix of a single constant piece with integral om:
// exp(-z * om * J), exact for rank-one and constant pieces.
SMat2c interval_exp(const Mat2& om, Cplx z);
SMat2d interval_exp(const Mat2& om, double z);

// Monodromy W(t1, z) of the compiled Hamiltonian, product over cells in
// increasing time order.
SMat2c monodromy(const HamiltonianDesc& h, Cplx z, const TransferOptions& opt = {});
SMat2d monodromy(const HamiltonianDesc& h, double z, const TransferOptions& opt = {});

// W(t, z) for t inside the compiled range.
SMat2c fundamental_solution(const HamiltonianDesc& h, double t, Cplx z,
                            const TransferOptions& opt = {});
SMat2d fundamental_solution(const HamiltonianDesc& h, double t, double z,
                            const TransferOptions& opt = {});

// Defect of the J-contraction kernel (W J W^H - J) / (z - conj z); the least
// eigenvalue, which must be >= -tol for Im z > 0.
double j_inner_defect(const Mat2c& w, Cplx z);
// max |(W J W^T - J)_{ij}| for real z, where W is J-unitary.
double j_unitary_defect(const Mat2& w);

struct WeylDisk {
  Cplx center{0, 0};
  double radius = 0;
  bool unbounded = false;
};

// Image of the closed upper half-plane under the linear fractional action of
// W(t, z); shrinks as t grows and localises the Weyl coefficient.
WeylDisk weyl_disk(const HamiltonianDesc& h, double t, Cplx z,
                   const TransferOptions& opt = {});
// Disk at the end of the compiled range; center approximates q_H(z).
WeylDisk weyl_coefficient(const HamiltonianDesc& h, Cplx z,
                          const TransferOptions& opt = {});

// log |w22(i r)| and the sampled sup of log ||W(z)|| over |z| = r.
double log_abs_w22_ir(const HamiltonianDesc& h, double r,
                      const TransferOptions& opt = {});
double log_max_on_circle(const HamiltonianDesc& h, double r, int angles = 8,
                         const TransferOptions& opt = {});

}  // namespace cansys
