#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"
#include "mstm/ffbs.hpp"
#include "mstm/linalg.hpp"
#include "mstm/mi_basis.hpp"
#include "mstm/mi_prior.hpp"

namespace mstm {

struct Hyperparams {
  Eigen::VectorXd mu_beta;  // empty means zero
  double sigma_beta2 = 1e15;
  double alpha_xi = 2.0;
  double beta_xi = 1.0;
  double alpha_k = 2.0;
  double beta_k = 1.0;

  Eigen::VectorXd beta_mean(Eigen::Index p) const;
  void validate(Eigen::Index p) const;
};

// xi[t-1] holds one entry per distinct observed location at t, in the order
// of FitProblem::TimeData::locations. Surveys observing the same location
// share its xi.
struct ModelState {
  std::vector<Eigen::VectorXd> eta;
  std::vector<Eigen::VectorXd> xi;
  std::vector<Eigen::VectorXd> beta;
  double sigma_k2 = 1.0;
  std::vector<double> sigma_xi2;

  bool finite() const;
};

struct SamplerOptions {
  int iterations = 10000;
  int burn_in = 1000;
  int thin = 1;
  std::uint64_t seed = 0;

  void validate() const;
  int stored() const { return (iterations - burn_in) / thin; }
  bool keeps(int iteration) const {  // 1-based
    return iteration > burn_in && (iteration - burn_in) % thin == 0;
  }
};

inline constexpr const char* kSweepOrder = "eta,xi,beta,sigma_k2,sigma_xi2";

struct PosteriorChain {
  std::vector<ModelState> draws;
  SamplerOptions options;
  std::string moves = "gibbs";  // every update is an exact Gibbs draw
};

// ---------------------------------------------------------------------------
// Full conditionals

// X ~ IG(shape, rate), density proportional to x^{-shape-1} exp(-rate / x).
double inverse_gamma(double shape, double rate, Rng& rng);

struct InverseGammaParams {
  double shape;
  double rate;
};

// One observation per location:
// N(S* V^{-1} (z - X beta - S eta), S*), S* = (V^{-1} + sigma^{-2} I)^{-1}.
Eigen::VectorXd sample_xi(const Eigen::VectorXd& z, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& beta, const Eigen::MatrixXd& S,
                          const Eigen::VectorXd& eta, const Eigen::VectorXd& v,
                          double sigma_xi2, Rng& rng);

// Several observations per location: residual[i] and v[i] belong to location
// slot[i] in [0, locations).
Eigen::VectorXd sample_xi_grouped(const Eigen::VectorXd& residual,
                                  const Eigen::VectorXd& v,
                                  const std::vector<int>& slot,
                                  Eigen::Index locations, double sigma_xi2,
                                  Rng& rng);

struct GaussianParams {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// xi is observation-aligned here.
GaussianParams beta_conditional(const Eigen::VectorXd& z,
                                const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& xi,
                                const Eigen::MatrixXd& S,
                                const Eigen::VectorXd& eta,
                                const Eigen::VectorXd& v,
                                const Hyperparams& hyper);

Eigen::VectorXd sample_beta(const Eigen::VectorXd& z, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& xi, const Eigen::MatrixXd& S,
                            const Eigen::VectorXd& eta, const Eigen::VectorXd& v,
                            const Hyperparams& hyper, Rng& rng);

// K1_inv and W_inv are the inverses of the (regularized) K*_1 and W*_t;
// W_inv[0] and M[0] are unused.
InverseGammaParams sigma_k_conditional(const std::vector<Eigen::VectorXd>& eta,
                                       const Eigen::MatrixXd& K1_inv,
                                       const std::vector<Eigen::MatrixXd>& W_inv,
                                       const std::vector<Eigen::MatrixXd>& M,
                                       const Hyperparams& hyper);

double sample_sigma_k(const std::vector<Eigen::VectorXd>& eta,
                      const Eigen::MatrixXd& K1_inv,
                      const std::vector<Eigen::MatrixXd>& W_inv,
                      const std::vector<Eigen::MatrixXd>& M,
                      const Hyperparams& hyper, Rng& rng);

InverseGammaParams sigma_xi_conditional(const Eigen::VectorXd& xi,
                                        const Hyperparams& hyper);
double sample_sigma_xi(const Eigen::VectorXd& xi, const Hyperparams& hyper,
                       Rng& rng);

// ---------------------------------------------------------------------------
// Fit

// Observations, covariates and basis rows arranged per time point, plus the
// effective K*_1, W*_t used by every Gaussian density in the sampler.
class FitProblem {
 public:
  struct TimeData {
    int time = 1;
    std::vector<Location> locations;      // distinct observed, sorted
    std::vector<std::size_t> design_row;  // per location, row in the slice
    std::vector<int> slot;                // per observation, location index
    Eigen::VectorXd z;
    Eigen::VectorXd v;
    Eigen::MatrixXd X;  // observation-aligned rows
    ObservationBlock block;
  };

  FitProblem(const ObservationSet& data, const Design& design,
             const BasisSystem& basis, const PriorStructure& prior,
             Hyperparams hyper = {});

  int horizon() const { return static_cast<int>(times_.size()); }
  Eigen::Index rank() const { return rank_; }
  Eigen::Index covariates() const { return p_; }
  const std::vector<TimeData>& times() const { return times_; }
  const TimeData& at(int t) const { return times_.at(t - 1); }
  const Hyperparams& hyper() const { return hyper_; }
  const ScaleMatrix& k1() const { return k1_; }
  const std::vector<ScaleMatrix>& w() const { return w_; }  // [0] unused
  const std::vector<Eigen::MatrixXd>& M() const { return M_; }  // [0] = I

  ModelState initial_state(Rng& rng) const;
  // One full sweep in the fixed order eta -> xi -> beta -> sigma_k2 -> sigma_xi2.
  void sweep(ModelState& state, Rng& rng) const;

 private:
  std::vector<TimeData> times_;
  Eigen::Index rank_ = 0;
  Eigen::Index p_ = 0;
  Hyperparams hyper_;
  ScaleMatrix k1_;
  std::vector<ScaleMatrix> w_;
  std::vector<Eigen::MatrixXd> M_;
  std::vector<Eigen::MatrixXd> W_inv_;
  std::vector<ObservationBlock> blocks_;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> beta_precision_;
  std::vector<Eigen::MatrixXd> beta_weights_;  // X' V^{-1}
};

// Called for every stored draw with its 1-based iteration index.
using DrawSink = std::function<void(int iteration, const ModelState& state)>;

void gibbs_run(const FitProblem& problem, const SamplerOptions& options,
               const DrawSink& sink);

PosteriorChain gibbs_run(const FitProblem& problem,
                         const SamplerOptions& options);

PosteriorChain gibbs_run(const ObservationSet& data, const Design& design,
                         const BasisSystem& basis, const PriorStructure& prior,
                         const Hyperparams& hyper,
                         const SamplerOptions& options);

}  // namespace mstm
