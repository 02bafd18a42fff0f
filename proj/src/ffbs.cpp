#include "mstm/ffbs.hpp"

#include <atomic>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mstm/errors.hpp"

namespace mstm {

namespace {

std::atomic<std::uint64_t> g_pinv_fallbacks{0};

void require_finite(const Eigen::MatrixXd& m, const char* what, int t) {
  if (!m.allFinite()) {
    throw ValidationError(std::string("kalman_filter: non-finite ") + what +
                          " at t = " + std::to_string(t));
  }
}

// Gain-like product X * P^{-1} for symmetric PSD P via Cholesky, with a
// logged pseudoinverse fallback.
Eigen::MatrixXd right_solve(const Eigen::MatrixXd& X, const Eigen::MatrixXd& P,
                            int t) {
  linalg::note_factorization(P.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() == Eigen::Success) {
    Eigen::MatrixXd out = llt.solve(X.transpose()).transpose();
    if (out.allFinite()) return out;
  }
  g_pinv_fallbacks.fetch_add(1, std::memory_order_relaxed);
  spdlog::debug("backward pass: P_(t+1|t) singular at t = {}, using pseudoinverse", t);
  return X * linalg::pseudo_inverse(linalg::symmetrize(P));
}

}  // namespace

ObservationBlock::ObservationBlock(Eigen::MatrixXd S_, Eigen::VectorXd v_)
    : S(std::move(S_)), v(std::move(v_)) {
  if (S.rows() != v.size()) {
    throw ValidationError("ObservationBlock: S and v are not conformable");
  }
  if (v.size() && !(v.array() > 0.0).all()) {
    throw ValidationError("ObservationBlock: variances must be positive");
  }
  inv_v = v.cwiseInverse();
  info = S.transpose() * inv_v.asDiagonal() * S;
  info = linalg::symmetrize(info);
}

FilterOutput kalman_filter(std::span<const Eigen::VectorXd> z_tilde,
                           std::span<const ObservationBlock> blocks,
                           std::span<const Eigen::MatrixXd> M,
                           const Eigen::MatrixXd& K1,
                           std::span<const Eigen::MatrixXd> W) {
  const std::size_t T = blocks.size();
  if (z_tilde.size() != T || M.size() != T || W.size() != T || T == 0) {
    throw ValidationError("kalman_filter: inputs must cover the same T >= 1");
  }
  const Eigen::Index r = K1.rows();
  if (K1.cols() != r) throw ValidationError("kalman_filter: K1 is not square");
  require_finite(K1, "K1", 1);

  FilterOutput out;
  out.predicted_mean.resize(T);
  out.predicted_cov.resize(T);
  out.filtered_mean.resize(T);
  out.filtered_cov.resize(T);

  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(r, r);
  for (std::size_t k = 0; k < T; ++k) {
    const int t = static_cast<int>(k) + 1;
    const auto& blk = blocks[k];
    if (blk.rank() != r || z_tilde[k].size() != blk.size()) {
      throw ValidationError("kalman_filter: observation block at t = " +
                            std::to_string(t) + " is not conformable");
    }
    require_finite(z_tilde[k], "observation", t);
    if (k == 0) {
      out.predicted_mean[k] = Eigen::VectorXd::Zero(r);
      out.predicted_cov[k] = linalg::symmetrize(K1);
    } else {
      if (M[k].rows() != r || M[k].cols() != r || W[k].rows() != r ||
          W[k].cols() != r) {
        throw ValidationError("kalman_filter: M or W at t = " +
                              std::to_string(t) + " is not r x r");
      }
      require_finite(M[k], "M", t);
      require_finite(W[k], "W", t);
      out.predicted_mean[k] = M[k] * out.filtered_mean[k - 1];
      out.predicted_cov[k] = linalg::symmetrize(
          M[k] * out.filtered_cov[k - 1] * M[k].transpose() + W[k]);
    }
    const auto& m = out.predicted_mean[k];
    const auto& P = out.predicted_cov[k];
    if (blk.size() == 0) {
      out.filtered_mean[k] = m;
      out.filtered_cov[k] = P;
      continue;
    }
    // P_{t|t} = L (I + L' H L)^{-1} L' with P = L L'; valid for singular P.
    const Eigen::MatrixXd L = linalg::covariance_factor(P);
    Eigen::MatrixXd G = I + L.transpose() * blk.info * L;
    linalg::note_factorization(r);
    Eigen::LLT<Eigen::MatrixXd> llt(linalg::symmetrize(G));
    const Eigen::MatrixXd R = llt.matrixL().solve(L.transpose());  // G_L^{-1} L'
    Eigen::MatrixXd Pf = linalg::symmetrize(R.transpose() * R);
    const Eigen::VectorXd score =
        blk.S.transpose() * (blk.inv_v.asDiagonal() * z_tilde[k]) - blk.info * m;
    out.filtered_mean[k] = m + Pf * score;
    out.filtered_cov[k] = std::move(Pf);
  }
  return out;
}

SmootherOutput rts_smoother(const FilterOutput& f,
                            std::span<const Eigen::MatrixXd> M) {
  const std::size_t T = f.filtered_mean.size();
  SmootherOutput out;
  out.mean.resize(T);
  out.cov.resize(T);
  out.mean[T - 1] = f.filtered_mean[T - 1];
  out.cov[T - 1] = f.filtered_cov[T - 1];
  for (std::size_t k = T - 1; k-- > 0;) {
    const Eigen::MatrixXd J = right_solve(f.filtered_cov[k] * M[k + 1].transpose(),
                                          f.predicted_cov[k + 1],
                                          static_cast<int>(k) + 1);
    out.mean[k] = f.filtered_mean[k] +
                  J * (out.mean[k + 1] - f.predicted_mean[k + 1]);
    out.cov[k] = linalg::symmetrize(
        f.filtered_cov[k] +
        J * (out.cov[k + 1] - f.predicted_cov[k + 1]) * J.transpose());
  }
  return out;
}

std::vector<Eigen::VectorXd> backward_sample(const FilterOutput& f,
                                             std::span<const Eigen::MatrixXd> M,
                                             Rng& rng) {
  const std::size_t T = f.filtered_mean.size();
  std::vector<Eigen::VectorXd> eta(T);
  eta[T - 1] = linalg::draw_normal(f.filtered_mean[T - 1], f.filtered_cov[T - 1], rng);
  for (std::size_t k = T - 1; k-- > 0;) {
    const Eigen::MatrixXd J = right_solve(f.filtered_cov[k] * M[k + 1].transpose(),
                                          f.predicted_cov[k + 1],
                                          static_cast<int>(k) + 1);
    const Eigen::VectorXd mean =
        f.filtered_mean[k] + J * (eta[k + 1] - f.predicted_mean[k + 1]);
    const Eigen::MatrixXd cov = linalg::symmetrize(
        f.filtered_cov[k] - J * f.predicted_cov[k + 1] * J.transpose());
    eta[k] = linalg::draw_normal(mean, cov, rng);
  }
  return eta;
}

std::uint64_t pseudo_inverse_fallbacks() { return g_pinv_fallbacks.load(); }

}  // namespace mstm
