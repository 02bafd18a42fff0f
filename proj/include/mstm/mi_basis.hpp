#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"

namespace mstm {

// Moran's I operator (I - H) A (I - H) with H the hat matrix of X.
// Throws ValidationError("rank-deficient design") when X'X is singular.
Eigen::MatrixXd mi_operator(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A);

struct MiBasis {
  Eigen::MatrixXd vectors;      // N x r, orthonormal columns
  Eigen::VectorXd eigenvalues;  // r, non-increasing
};

// Leading r eigenvectors (algebraically largest eigenvalues) of the MI
// operator. The eigenproblem is solved on the orthogonal complement of
// col(X), so every returned column is orthogonal to X by construction.
MiBasis mi_basis(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A, int rank);

enum class PropagatorMode {
  complement,  // eigenvectors of I - Psi (Psi'Psi)^+ Psi', Psi = S'X
  literal_b,   // eigenvectors of I - B (B'B)^+ B', B = (S'X, I_r)
};

PropagatorMode parse_propagator(std::string_view name);
std::string_view to_string(PropagatorMode mode);

// r x r orthonormal propagator, columns ordered by descending eigenvalue.
Eigen::MatrixXd mi_propagator(const Eigen::MatrixXd& S, const Eigen::MatrixXd& X,
                              PropagatorMode mode = PropagatorMode::complement);

struct TimeBasis {
  int time = 1;
  Eigen::MatrixXd S;
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd M;  // empty at t = 1
};

struct BasisSystem {
  int rank = 0;
  PropagatorMode mode = PropagatorMode::complement;
  std::vector<TimeBasis> times;  // index t - 1

  const TimeBasis& at(int time) const { return times.at(time - 1); }
  int horizon() const { return static_cast<int>(times.size()); }
};

// Builds S_t and M_t for every t of the design. Per-t construction order is
// fixed so repeated builds are bit-identical.
BasisSystem build_basis_system(const Design& design, const ArealGraph& graph,
                               int rank,
                               PropagatorMode mode = PropagatorMode::complement);

struct ConfoundingReport {
  double basis = 0.0;       // max_t ||S_t' X_t||_inf
  double propagator = 0.0;  // max_t ||M_t(eigenvalue-1 cols)' S_t' X_t||_inf
};

// X[t-1] is the covariate matrix paired with basis time t.
ConfoundingReport confounding_report(const BasisSystem& basis,
                                     const std::vector<Eigen::MatrixXd>& X);

}  // namespace mstm
