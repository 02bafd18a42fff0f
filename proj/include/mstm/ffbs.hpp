#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mstm/linalg.hpp"

namespace mstm {

// Observation equation of one time point: z_t = S_t eta_t + e, e ~ N(0, diag(v)).
// The information matrix S' V^{-1} S is formed once so that the filter never
// touches an n_t x n_t matrix.
struct ObservationBlock {
  Eigen::MatrixXd S;          // n_t x r (rows may repeat)
  Eigen::VectorXd v;          // n_t, strictly positive
  Eigen::VectorXd inv_v;
  Eigen::MatrixXd info;       // r x r, S' V^{-1} S

  ObservationBlock() = default;
  ObservationBlock(Eigen::MatrixXd S, Eigen::VectorXd v);

  Eigen::Index rank() const { return S.cols(); }
  Eigen::Index size() const { return S.rows(); }
};

struct FilterOutput {
  std::vector<Eigen::VectorXd> predicted_mean;  // eta_{t|t-1}
  std::vector<Eigen::MatrixXd> predicted_cov;   // P_{t|t-1}
  std::vector<Eigen::VectorXd> filtered_mean;   // eta_{t|t}
  std::vector<Eigen::MatrixXd> filtered_cov;    // P_{t|t}
};

// Gaussian state-space recursion with eta_1 ~ N(0, K1) and
// eta_t = M_t eta_{t-1} + u_t, u_t ~ N(0, W_t). M[0] and W[0] are unused.
FilterOutput kalman_filter(std::span<const Eigen::VectorXd> z_tilde,
                           std::span<const ObservationBlock> blocks,
                           std::span<const Eigen::MatrixXd> M,
                           const Eigen::MatrixXd& K1,
                           std::span<const Eigen::MatrixXd> W);

struct SmootherOutput {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::MatrixXd> cov;
};

// Rauch-Tung-Striebel smoother; the moments the backward sampler draws from.
SmootherOutput rts_smoother(const FilterOutput& filtered,
                            std::span<const Eigen::MatrixXd> M);

// One joint draw of eta_{1:T} given the filter output.
std::vector<Eigen::VectorXd> backward_sample(const FilterOutput& filtered,
                                             std::span<const Eigen::MatrixXd> M,
                                             Rng& rng);

// Number of times the backward pass fell back to a pseudoinverse of a
// singular P_{t+1|t} (process-wide).
std::uint64_t pseudo_inverse_fallbacks();

}  // namespace mstm
