#include "mstm/mi_basis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <spdlog/spdlog.h>

#include "mstm/errors.hpp"
#include "mstm/linalg.hpp"

namespace mstm {

namespace {

void require_full_rank(const Eigen::MatrixXd& X) {
  if (numerical_rank(X) < X.cols()) {
    throw ValidationError("rank-deficient design");
  }
}

// Singular values of S'X below this are round-off from an exactly orthogonal
// construction.
double psi_tolerance(const Eigen::MatrixXd& X, Eigen::Index r) {
  const double scale = std::max(1.0, X.norm());
  return 16.0 * std::numeric_limits<double>::epsilon() *
         static_cast<double>(std::max<Eigen::Index>(r, X.cols())) * scale;
}

int free_column_count(const Eigen::MatrixXd& S, const Eigen::MatrixXd& X,
                      PropagatorMode mode, const Eigen::MatrixXd& M) {
  if (mode == PropagatorMode::literal_b) {
    // Eigenvalues of the projector complement are 0 or 1; recover the count
    // from the trace.
    const Eigen::MatrixXd psi = S.transpose() * X;
    Eigen::MatrixXd B(psi.rows(), psi.cols() + psi.rows());
    B << psi, Eigen::MatrixXd::Identity(psi.rows(), psi.rows());
    const Eigen::MatrixXd proj =
        B * linalg::pseudo_inverse(B.transpose() * B) * B.transpose();
    const double tr = (Eigen::MatrixXd::Identity(M.rows(), M.rows()) - proj).trace();
    return static_cast<int>(std::lround(std::max(0.0, tr)));
  }
  const Eigen::MatrixXd psi = S.transpose() * X;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(psi);
  const double tol = psi_tolerance(X, S.cols());
  int k = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i) {
    if (svd.singularValues()(i) > tol) ++k;
  }
  return static_cast<int>(S.cols()) - k;
}

}  // namespace

Eigen::MatrixXd mi_operator(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A) {
  if (X.rows() != A.rows() || A.rows() != A.cols()) {
    throw ValidationError("mi_operator: X and A are not conformable");
  }
  require_full_rank(X);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::MatrixXd Q =
      qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols());
  // (I - QQ') A (I - QQ')
  const Eigen::MatrixXd left = A - Q * (Q.transpose() * A);
  const Eigen::MatrixXd G = left - (left * Q) * Q.transpose();
  return linalg::symmetrize(G);
}

MiBasis mi_basis(const Eigen::MatrixXd& X, const Eigen::MatrixXd& A, int rank) {
  if (X.rows() != A.rows() || A.rows() != A.cols()) {
    throw ValidationError("mi_basis: X and A are not conformable");
  }
  require_full_rank(X);
  const Eigen::Index n = X.rows();
  const Eigen::Index free = n - X.cols();
  if (rank < 1 || rank > free) {
    throw ValidationError("basis rank " + std::to_string(rank) +
                          " is not admissible; max admissible rank is " +
                          std::to_string(free));
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
  const Eigen::MatrixXd Qfull = qr.householderQ();
  const Eigen::MatrixXd U = Qfull.rightCols(free);
  const Eigen::MatrixXd reduced = linalg::symmetrize(U.transpose() * A * U);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(reduced);
  Eigen::VectorXd values(free);
  for (Eigen::Index j = 0; j < free; ++j) values(j) = es.eigenvalues()(free - 1 - j);

  // Extend past `rank` to the end of the cluster straddling the cut.
  Eigen::Index take = rank;
  while (take < free && values(take - 1) - values(take) < linalg::kClusterGap) {
    ++take;
  }
  Eigen::MatrixXd local(free, take);
  for (Eigen::Index j = 0; j < take; ++j) {
    local.col(j) = es.eigenvectors().col(free - 1 - j);
  }
  Eigen::MatrixXd S = U * local;
  linalg::canonicalize(values.head(take), S, rank);

  MiBasis out;
  out.vectors = S.leftCols(rank);
  out.eigenvalues = values.head(rank);
  return out;
}

PropagatorMode parse_propagator(std::string_view name) {
  if (name == "default" || name == "complement") return PropagatorMode::complement;
  if (name == "literal-b") return PropagatorMode::literal_b;
  throw ValidationError("unknown propagator mode '" + std::string(name) +
                        "' (expected default or literal-b)");
}

std::string_view to_string(PropagatorMode mode) {
  return mode == PropagatorMode::literal_b ? "literal-b" : "default";
}

Eigen::MatrixXd mi_propagator(const Eigen::MatrixXd& S, const Eigen::MatrixXd& X,
                              PropagatorMode mode) {
  if (S.rows() != X.rows()) {
    throw ValidationError("mi_propagator: S and X are not conformable");
  }
  const Eigen::Index r = S.cols();
  const Eigen::MatrixXd psi = S.transpose() * X;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(r, r);
  Eigen::MatrixXd op;
  if (mode == PropagatorMode::complement) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(psi, Eigen::ComputeFullU);
    const double tol = psi_tolerance(X, r);
    Eigen::Index k = 0;
    while (k < svd.singularValues().size() && svd.singularValues()(k) > tol) ++k;
    const Eigen::MatrixXd Uk = svd.matrixU().leftCols(k);
    op = I - Uk * Uk.transpose();
  } else {
    Eigen::MatrixXd B(r, psi.cols() + r);
    B << psi, I;
    op = I - B * linalg::pseudo_inverse(B.transpose() * B) * B.transpose();
    spdlog::warn(
        "literal-b propagator: B = (S'X, I) spans every direction, the "
        "projector complement is zero and its eigenvectors are undetermined");
  }
  Eigen::MatrixXd M = linalg::sorted_eigen(op).vectors;

  Eigen::EigenSolver<Eigen::MatrixXd> ev(M, false);
  const double radius = ev.eigenvalues().cwiseAbs().maxCoeff();
  if (radius > 1.0 + 1e-9) {
    spdlog::warn("MI propagator spectral radius {} exceeds 1", radius);
  }
  return M;
}

BasisSystem build_basis_system(const Design& design, const ArealGraph& graph,
                               int rank, PropagatorMode mode) {
  BasisSystem sys;
  sys.rank = rank;
  sys.mode = mode;
  for (const auto& slice : design.slices()) {
    TimeBasis tb;
    tb.time = slice.time;
    const auto A = stacked_adjacency(graph, slice);
    MiBasis b;
    try {
      b = mi_basis(slice.X, A, rank);
    } catch (const ValidationError& e) {
      throw ValidationError("t = " + std::to_string(slice.time) + ": " + e.what());
    }
    tb.S = std::move(b.vectors);
    tb.eigenvalues = std::move(b.eigenvalues);
    if (slice.time >= 2) tb.M = mi_propagator(tb.S, slice.X, mode);
    sys.times.push_back(std::move(tb));
  }
  return sys;
}

ConfoundingReport confounding_report(const BasisSystem& basis,
                                     const std::vector<Eigen::MatrixXd>& X) {
  if (static_cast<int>(X.size()) != basis.horizon()) {
    throw ValidationError("confounding_report: need one X per time point");
  }
  ConfoundingReport rep;
  for (const auto& tb : basis.times) {
    const auto& x = X[tb.time - 1];
    const Eigen::MatrixXd psi = tb.S.transpose() * x;
    rep.basis = std::max(rep.basis, linalg::max_abs(psi));
    if (tb.M.size() == 0) continue;
    // Columns with eigenvalue one come first; their count is recomputed from
    // the supplied X so a wrong X shows up as a nonzero norm.
    const int free = free_column_count(tb.S, x, basis.mode, tb.M);
    if (free > 0) {
      rep.propagator = std::max(
          rep.propagator, linalg::max_abs(tb.M.leftCols(free).transpose() * psi));
    }
  }
  return rep;
}

}  // namespace mstm
