#include "mstm/linalg.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace mstm::linalg {

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) > kSignEntryTol) {
      if (v(i) < 0.0) v = -v;
      return;
    }
  }
}

namespace {

bool lex_greater(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return a(i) > b(i);
  }
  return false;
}

// Orthonormal basis of span(block) built by projecting e_1, e_2, ... in turn.
Eigen::MatrixXd subspace_basis(const Eigen::MatrixXd& block) {
  const Eigen::Index n = block.rows();
  const Eigen::Index k = block.cols();
  Eigen::MatrixXd out(n, k);
  Eigen::Index found = 0;
  const double tol = 0.1 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index i = 0; i < n && found < k; ++i) {
    // Projection of e_i onto the subspace.
    Eigen::VectorXd u = block * block.row(i).transpose();
    for (int pass = 0; pass < 2; ++pass) {
      for (Eigen::Index j = 0; j < found; ++j) {
        u -= out.col(j).dot(u) * out.col(j);
      }
    }
    const double norm = u.norm();
    if (norm > tol) out.col(found++) = u / norm;
  }
  // Cannot happen for an orthonormal block, kept for safety of the shape.
  for (; found < k; ++found) out.col(found) = block.col(found);
  return out;
}

}  // namespace

void canonicalize(const Eigen::VectorXd& values, Eigen::MatrixXd& vectors,
                  Eigen::Index keep) {
  const Eigen::Index m = values.size();
  Eigen::Index start = 0;
  while (start < m && start < keep) {
    Eigen::Index end = start + 1;
    while (end < m && values(end - 1) - values(end) < kClusterGap) ++end;
    const Eigen::Index width = end - start;
    if (width > 1) {
      vectors.middleCols(start, width) =
          subspace_basis(vectors.middleCols(start, width));
    }
    for (Eigen::Index j = start; j < end; ++j) fix_sign(vectors.col(j));
    if (width > 1) {
      std::vector<Eigen::VectorXd> cols;
      for (Eigen::Index j = start; j < end; ++j) cols.emplace_back(vectors.col(j));
      std::stable_sort(cols.begin(), cols.end(), lex_greater);
      for (Eigen::Index j = 0; j < width; ++j) vectors.col(start + j) = cols[j];
    }
    start = end;
  }
}

EigenPairs sorted_eigen(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(sym));
  const Eigen::Index n = sym.rows();
  EigenPairs out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  // Eigen returns ascending order.
  for (Eigen::Index j = 0; j < n; ++j) {
    out.values(j) = es.eigenvalues()(n - 1 - j);
    out.vectors.col(j) = es.eigenvectors().col(n - 1 - j);
  }
  canonicalize(out.values, out.vectors, n);
  return out;
}

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, double tol) {
  if (m.size() == 0) return Eigen::MatrixXd(m.cols(), m.rows());
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& s = svd.singularValues();
  if (tol < 0.0) {
    tol = static_cast<double>(std::max(m.rows(), m.cols())) *
          std::numeric_limits<double>::epsilon() * (s.size() ? s(0) : 0.0);
  }
  Eigen::VectorXd inv(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    inv(i) = s(i) > tol ? 1.0 / s(i) : 0.0;
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

double min_eigenvalue(const Eigen::MatrixXd& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(sym),
                                                    Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double max_abs(const Eigen::MatrixXd& m) {
  return m.size() ? m.cwiseAbs().maxCoeff() : 0.0;
}

Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
  note_factorization(cov.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd L = llt.matrixL();
    if (L.allFinite()) return L;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(cov));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Eigen::VectorXd standard_normal(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

Eigen::VectorXd draw_normal(const Eigen::VectorXd& mean,
                            const Eigen::MatrixXd& cov, Rng& rng) {
  return mean + covariance_factor(cov) * standard_normal(mean.size(), rng);
}

namespace {
std::atomic<std::uint64_t> g_count{0};
std::atomic<std::int64_t> g_max_dim{0};
}  // namespace

void note_factorization(Eigen::Index dim) {
  g_count.fetch_add(1, std::memory_order_relaxed);
  auto prev = g_max_dim.load(std::memory_order_relaxed);
  while (prev < dim &&
         !g_max_dim.compare_exchange_weak(prev, dim, std::memory_order_relaxed)) {
  }
}

FactorizationStats factorization_stats() {
  return {g_count.load(), g_max_dim.load()};
}

void reset_factorization_stats() {
  g_count = 0;
  g_max_dim = 0;
}

}  // namespace mstm::linalg
