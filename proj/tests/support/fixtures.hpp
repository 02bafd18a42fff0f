#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mstm/areal_data.hpp"
#include "mstm/gibbs.hpp"
#include "mstm/linalg.hpp"
#include "mstm/mi_basis.hpp"
#include "mstm/mi_prior.hpp"
#include "mstm/simulate.hpp"

namespace fixtures {

using mstm::Rng;

// rows x cols rook lattice, units "u0", "u1", ... in row-major order.
mstm::ArealGraph lattice(int rows, int cols);

// Ring over n units plus random chords.
mstm::ArealGraph random_graph(int n, double chord_prob, Rng& rng);

struct DesignSpec {
  int variables = 1;
  int horizon = 3;
  int covariates = 3;        // p, including the intercept
  bool time_varying = true;  // redraw non-intercept covariates at each t
  std::vector<int> first;    // per-variable window start (default 1)
};

// Every unit of the graph is a prediction location for every active
// variable. Non-intercept covariates are standard normal.
mstm::Design random_design(const mstm::ArealGraph& graph, const DesignSpec& spec,
                           Rng& rng);

mstm::StudyDesign study_for(const DesignSpec& spec, int rank);

struct Model {
  mstm::ArealGraph graph;
  mstm::Design design;
  mstm::BasisSystem basis;
  mstm::PriorStructure prior;
};

Model build_model(mstm::ArealGraph graph, mstm::Design design, int rank,
                  mstm::PriorOptions opt = {},
                  mstm::PropagatorMode mode = mstm::PropagatorMode::complement);

// Random symmetric positive definite matrix with eigenvalues in [lo, hi].
Eigen::MatrixXd random_spd(Eigen::Index n, Rng& rng, double lo = 0.5, double hi = 2.0);

// Random matrix with orthonormal columns.
Eigen::MatrixXd random_orthonormal(Eigen::Index n, Eigen::Index r, Rng& rng);

Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

// covariates.csv and edges.csv for a graph and design.
void write_inputs(const std::filesystem::path& dir, const mstm::ArealGraph& graph,
                  const mstm::Design& design);

// Sample mean and standard error of a scalar sample.
struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double se_mean = 0.0;
  double se_var = 0.0;
};
Moments moments(const std::vector<double>& x);

}  // namespace fixtures
