#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"
#include "mstm/chain_io.hpp"
#include "mstm/gibbs.hpp"
#include "mstm/mi_basis.hpp"

namespace mstm {

struct PredictionPoint {
  Location location;
  double yhat = 0.0;
  double mspe = 0.0;  // sample variance across draws
  std::optional<double> yhat_backtransformed;
  std::optional<double> mspe_backtransformed;
};

struct PredictionSurface {
  std::vector<PredictionPoint> points;
  std::size_t draws = 0;
};

// Everything needed to turn a stored draw into Y at prediction locations.
struct PredictionContext {
  const PosteriorChain& chain;
  const ChainLayout& layout;
  const BasisSystem& basis;
  const Design& design;
  const StudyDesign& study;
  // Seed of the stream used for xi at locations the chain has no xi for.
  std::uint64_t seed = 0;
};

// Y^{[j]} = x'beta^{[j]} + S'eta^{[j]} + xi^{[j]} at each location, in the
// order given (all of D_P when `locations` is empty). xi comes from the chain
// at observed locations and from N(0, sigma_xi,t^2 [j]) elsewhere.
void for_each_y_draw(const PredictionContext& ctx,
                     std::span<const Location> locations,
                     const std::function<void(std::size_t draw,
                                              const Eigen::VectorXd& y)>& fn);

// Draw matrix, one row per draw.
Eigen::MatrixXd posterior_draws(const PredictionContext& ctx,
                                std::span<const Location> locations);

PredictionSurface posterior_y(const PredictionContext& ctx,
                              std::span<const Location> locations = {});

// Every row of every slice, in design order.
std::vector<Location> all_locations(const Design& design);

void write_predictions(const std::filesystem::path& path,
                       const PredictionSurface& surface,
                       const ArealGraph& graph);

// ---------------------------------------------------------------------------
// Survey fusion criterion

struct KeyedDraws {
  std::vector<Location> keys;
  Eigen::MatrixXd draws;  // J x keys
};

struct KeyedPredictions {
  std::vector<Location> keys;
  Eigen::VectorXd yhat;
};

// sum_j sum (Y^{[j]} - single)^2 / sum_j sum (Y^{[j]} - full)^2.
// Throws ValidationError listing the mismatch when key sets differ.
double rls(const KeyedDraws& truth, const KeyedPredictions& full,
           const KeyedPredictions& single);

// ---------------------------------------------------------------------------
// Chain diagnostics

struct TraceSummary {
  std::string parameter;
  double mean = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // 2.5% quantile
  double upper = 0.0;  // 97.5% quantile
  double lag1 = 0.0;
  std::size_t draws = 0;
};

// Type-7 (linear interpolation) empirical quantile of unsorted values.
double quantile(std::vector<double> values, double prob);

TraceSummary summarize(std::string name, std::span<const double> values);

// Selectors: sigma_k2, sigma_xi2[t], beta[t][k], eta[t][k] with 1-based t, k;
// beta[t][name] also accepts a covariate name.
std::vector<double> trace_values(const PosteriorChain& chain,
                                 const ChainLayout& layout,
                                 const std::string& selector);

TraceSummary trace_summary(const PosteriorChain& chain, const ChainLayout& layout,
                           const std::string& selector);

// Selectors for every beta, sigma_k2 and every sigma_xi2.
std::vector<std::string> default_selectors(const ChainLayout& layout);

// iteration,<selector>... one row per stored draw.
void write_trace_csv(const std::filesystem::path& path,
                     const PosteriorChain& chain, const ChainLayout& layout,
                     std::span<const int> iterations,
                     std::span<const std::string> selectors);

// parameter,mean,sd,q025,q975,lag1,draws
void write_summary_csv(const std::filesystem::path& path,
                       std::span<const TraceSummary> rows);

}  // namespace mstm
