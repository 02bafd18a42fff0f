#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"
#include "mstm/mi_basis.hpp"
#include "mstm/mi_prior.hpp"

namespace mstm {

struct SurveySpec {
  int id = 1;
  double v = 0.01;                // measurement variance, transformed scale
  double missing_fraction = 0.0;  // per-location drop probability
  std::vector<int> missing_units; // unit indices never observed by this survey
};

struct TruthSpec {
  std::vector<Eigen::VectorXd> beta;  // one per t, or a single vector for all t
  double sigma_k2 = 1.0;
  std::vector<double> sigma_xi2{0.01};  // one per t, or a single value for all t
  std::vector<SurveySpec> surveys{SurveySpec{}};

  Eigen::VectorXd beta_at(int t) const;
  double sigma_xi2_at(int t) const;
};

struct SyntheticTruth {
  TruthSpec spec;
  std::uint64_t seed = 0;
  std::vector<Eigen::VectorXd> eta;  // per t
  std::vector<Eigen::VectorXd> xi;   // per t, per design row
  std::vector<Eigen::VectorXd> y;    // per t, per design row
  ObservationSet observations;
};

// Forward model: eta_1 ~ N(0, s K*_1), eta_t = M_t eta_{t-1} + u_t with
// u_t ~ N(0, s W*_t), xi ~ N(0, sigma_xi2), Y = X beta + S eta + xi and
// Z = Y + N(0, v) for every survey location that survives the missing mask.
// K*_1 and W*_t enter through the same regularized scale the sampler uses.
SyntheticTruth simulate(const Design& design, const BasisSystem& basis,
                        const PriorStructure& prior, const TruthSpec& spec,
                        std::uint64_t seed);

// Observations in the loader's format (raw scale, variance back-transformed)
// and truth files: truth_y.csv, truth_eta.csv, truth_beta.csv, truth.json.
void write_observations(const std::filesystem::path& path,
                        const ObservationSet& obs, const StudyDesign& study,
                        const ArealGraph& graph);
void write_truth(const std::filesystem::path& dir, const SyntheticTruth& truth,
                 const Design& design, const ArealGraph& graph);

}  // namespace mstm
