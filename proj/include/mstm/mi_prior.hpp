#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"
#include "mstm/mi_basis.hpp"

namespace mstm {

// CAR precision D - A with D the diagonal of row sums.
Eigen::MatrixXd car_precision(const Eigen::MatrixXd& A);
Eigen::MatrixXd car_precision(const ArealGraph& graph, const TimeSlice& slice);

// Frobenius-nearest PSD matrix to (R + R')/2: negative eigenvalues clipped.
Eigen::MatrixXd best_positive_approximant(const Eigen::MatrixXd& R);

// ||P - S C^{-1} S'||_F^2 when `inverted`, else ||P - S C S'||_F^2.
double frobenius_objective(const Eigen::MatrixXd& P, const Eigen::MatrixXd& S,
                           const Eigen::MatrixXd& C, bool inverted);

enum class PriorForm {
  inverted,  // K* = {A+(mean S'PS)}^{-1}
  direct,    // K* = A+(mean S'PS)
};

PriorForm parse_prior_form(std::string_view name);
std::string_view to_string(PriorForm form);

// One entry per PSD lift or epsilon regularization applied while building
// the prior.
struct LiftEvent {
  int time = 0;              // 0 for the pooled K*
  std::string matrix;        // "K" or "W"
  std::string action;        // "psd-lift" or "regularize"
  double min_eigenvalue = 0; // before the adjustment
  double epsilon = 0;        // ridge added (regularize only)
};

struct PriorOptions {
  PriorForm form = PriorForm::inverted;
  bool pooled = false;
  // Ridge for a singular approximant; default 1e-8 * trace / r.
  std::optional<double> epsilon;
};

// Single-time minimizer (K = 1). `time` labels any log entries.
Eigen::MatrixXd kstar(const Eigen::MatrixXd& S, const Eigen::MatrixXd& P,
                      const PriorOptions& opt = {},
                      std::vector<LiftEvent>* log = nullptr, int time = 1);

// Pooled minimizer over all supplied times.
Eigen::MatrixXd kstar_pooled(std::span<const Eigen::MatrixXd> S,
                             std::span<const Eigen::MatrixXd> P,
                             const PriorOptions& opt = {},
                             std::vector<LiftEvent>* log = nullptr);

// K_t - M K_{t-1} M', lifted to the nearest PSD matrix when its smallest
// eigenvalue is below -1e-10.
Eigen::MatrixXd wstar(const Eigen::MatrixXd& K, const Eigen::MatrixXd& K_prev,
                      const Eigen::MatrixXd& M,
                      std::vector<LiftEvent>* log = nullptr, int time = 2);

inline constexpr double kLiftThreshold = -1e-10;

struct PriorStructure {
  PriorOptions options;
  std::vector<Eigen::MatrixXd> K;  // K*_t, index t - 1
  std::vector<Eigen::MatrixXd> W;  // W*_t, index t - 1 (empty at t = 1)
  std::vector<LiftEvent> lift_log;

  int horizon() const { return static_cast<int>(K.size()); }
  int lift_count() const;
};

// Builds K*_t and W*_t from the basis and one target precision per time.
PriorStructure build_prior(const BasisSystem& basis,
                           std::span<const Eigen::MatrixXd> targets,
                           const PriorOptions& opt = {});

// CAR targets Q_t on the stacked adjacency of every slice.
std::vector<Eigen::MatrixXd> car_targets(const Design& design,
                                         const ArealGraph& graph);

// Invertible scale matrix used wherever a K* or W* enters a Gaussian density:
// the matrix itself when positive definite, otherwise plus a ridge of
// 1e-8 * trace(reference) / r.
struct ScaleMatrix {
  Eigen::MatrixXd value;
  Eigen::MatrixXd inverse;
  double ridge = 0.0;
};

ScaleMatrix regularized_scale(const Eigen::MatrixXd& m,
                              const Eigen::MatrixXd& reference);

}  // namespace mstm
