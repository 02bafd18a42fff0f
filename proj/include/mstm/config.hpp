#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mstm/areal_data.hpp"
#include "mstm/gibbs.hpp"
#include "mstm/mi_basis.hpp"
#include "mstm/mi_prior.hpp"
#include "mstm/simulate.hpp"

namespace mstm {

// [truth] block of a run configuration. Units are kept as identifiers until
// the graph is known.
struct TruthConfig {
  std::vector<double> beta;  // applied at every t
  double sigma_k2 = 1.0;
  std::vector<double> sigma_xi2{0.01};
  std::vector<double> v{0.01};  // one per survey; survey ids 1..n
  std::vector<double> missing_fraction{0.0};
  std::vector<std::string> missing_units;  // applied to every survey
  std::uint64_t seed = 1;
};

struct RunConfig {
  std::filesystem::path source;  // the config file itself

  struct Paths {
    std::filesystem::path observations;
    std::filesystem::path covariates;
    std::filesystem::path edges;
    std::filesystem::path output;
  } paths;

  StudyDesign study;
  PropagatorMode propagator = PropagatorMode::complement;
  PriorOptions prior;
  SamplerOptions sampler;
  Hyperparams hyper;
  std::optional<TruthConfig> truth;
};

// Reads an INI file:
//   [paths]      observations, covariates, edges, output
//   [design]     variables, windows, rank, covariates
//   [transforms] <variable> = identity | logit | log
//   [model]      propagator, prior_form, pooled, epsilon
//   [sampler]    iterations, burn_in, thin, seed
//   [hyper]      mu_beta, sigma_beta2, alpha_xi, beta_xi, alpha_k, beta_k
//   [truth]      beta, sigma_k2, sigma_xi2, v, missing_fraction,
//                missing_units, seed
// Unknown sections and keys are errors. Relative paths resolve against the
// directory of the config file.
RunConfig load_config(const std::filesystem::path& path);

// Resolves unit identifiers and broadcasts per-survey lists.
TruthSpec make_truth_spec(const TruthConfig& cfg, const ArealGraph& graph,
                          int covariates);

}  // namespace mstm
