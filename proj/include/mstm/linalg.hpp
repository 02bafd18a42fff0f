#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace mstm {

using Rng = std::mt19937_64;

namespace linalg {

// Eigenvalues closer than this are treated as one cluster.
inline constexpr double kClusterGap = 1e-10;
// Entries smaller than this are skipped by the sign convention.
inline constexpr double kSignEntryTol = 1e-12;

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m);

// First entry with |x| > 1e-12 is made positive.
void fix_sign(Eigen::Ref<Eigen::VectorXd> v);

struct EigenPairs {
  Eigen::VectorXd values;   // non-increasing
  Eigen::MatrixXd vectors;  // orthonormal columns
};

// Replaces the columns of every eigenvalue cluster by a basis that depends
// only on the spanned subspace (sequential projection of the standard basis),
// applies the sign convention and orders columns inside a cluster
// lexicographically, largest first. Only clusters that begin before column
// `keep` are touched.
void canonicalize(const Eigen::VectorXd& values, Eigen::MatrixXd& vectors,
                  Eigen::Index keep);

// Full symmetric eigendecomposition with non-increasing eigenvalues and the
// canonical eigenvector convention above.
EigenPairs sorted_eigen(const Eigen::MatrixXd& sym);

// Moore-Penrose pseudoinverse; singular values at or below `tol` are zeroed.
// A negative tolerance selects max(rows, cols) * eps * sigma_max.
Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double tol = -1.0);

double min_eigenvalue(const Eigen::MatrixXd& sym);
double max_abs(const Eigen::MatrixXd& m);

// L with L L' = cov. Cholesky when possible, otherwise the eigenvalue square
// root with negative eigenvalues clipped to zero.
Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov);

Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng);

// Draw from N(mean, cov) for a PSD (possibly singular) covariance.
Eigen::VectorXd draw_normal(const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov, Rng& rng);

// Counters for dense factorizations performed inside the sampler. Used to
// assert that the hot path never factorizes anything larger than r or p.
struct FactorizationStats {
  std::uint64_t count = 0;
  std::int64_t max_dim = 0;
};

void note_factorization(Eigen::Index dim);
FactorizationStats factorization_stats();
void reset_factorization_stats();

}  // namespace linalg
}  // namespace mstm
