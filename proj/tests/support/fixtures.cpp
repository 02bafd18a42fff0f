#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "mstm/csv.hpp"

namespace fs = std::filesystem;

namespace fixtures {

mstm::ArealGraph lattice(int rows, int cols) {
  std::vector<std::string> units;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < rows * cols; ++i) units.push_back("u" + std::to_string(i));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(i, i + 1);
      if (r + 1 < rows) edges.emplace_back(i, i + cols);
    }
  }
  return {std::move(units), std::move(edges)};
}

mstm::ArealGraph random_graph(int n, double chord_prob, Rng& rng) {
  std::vector<std::string> units;
  std::vector<std::pair<int, int>> edges;
  for (int i = 0; i < n; ++i) units.push_back("g" + std::to_string(i));
  for (int i = 0; i < n; ++i) edges.emplace_back(i, (i + 1) % n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 2; j < n; ++j) {
      if (u(rng) < chord_prob) edges.emplace_back(i, j);
    }
  }
  return {std::move(units), std::move(edges)};
}

mstm::Design random_design(const mstm::ArealGraph& graph, const DesignSpec& spec,
                           Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const int n = static_cast<int>(graph.size());
  std::vector<mstm::TimeSlice> slices;
  Eigen::MatrixXd fixed = Eigen::MatrixXd::Zero(spec.variables * n, spec.covariates);
  for (Eigen::Index i = 0; i < fixed.rows(); ++i) {
    for (int k = 1; k < spec.covariates; ++k) fixed(i, k) = nd(rng);
  }
  for (int t = 1; t <= spec.horizon; ++t) {
    mstm::TimeSlice s;
    s.time = t;
    for (int l = 1; l <= spec.variables; ++l) {
      const int first = spec.first.empty() ? 1 : spec.first[l - 1];
      if (t < first) continue;
      for (int a = 0; a < n; ++a) s.rows.push_back({l, t, a});
    }
    s.X.resize(static_cast<Eigen::Index>(s.rows.size()), spec.covariates);
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const auto src = (s.rows[i].variable - 1) * n + s.rows[i].unit;
      s.X(row, 0) = 1.0;
      for (int k = 1; k < spec.covariates; ++k) {
        s.X(row, k) = spec.time_varying ? nd(rng) : fixed(src, k);
      }
    }
    slices.push_back(std::move(s));
  }
  std::vector<std::string> names{"intercept"};
  for (int k = 1; k < spec.covariates; ++k) names.push_back("x" + std::to_string(k));
  return {std::move(slices), std::move(names)};
}

mstm::StudyDesign study_for(const DesignSpec& spec, int rank) {
  mstm::StudyDesign st;
  st.variables = spec.variables;
  st.rank = rank;
  st.covariates = spec.covariates;
  for (int l = 0; l < spec.variables; ++l) {
    st.windows.push_back({spec.first.empty() ? 1 : spec.first[l], spec.horizon});
  }
  st.transforms.assign(static_cast<std::size_t>(spec.variables), mstm::TransformSpec{});
  return st;
}

Model build_model(mstm::ArealGraph graph, mstm::Design design, int rank,
                  mstm::PriorOptions opt, mstm::PropagatorMode mode) {
  Model m{std::move(graph), std::move(design), {}, {}};
  m.basis = mstm::build_basis_system(m.design, m.graph, rank, mode);
  const auto targets = mstm::car_targets(m.design, m.graph);
  m.prior = mstm::build_prior(m.basis, targets, opt);
  return m;
}

Eigen::MatrixXd random_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  }
  return m;
}

Eigen::MatrixXd random_orthonormal(Eigen::Index n, Eigen::Index r, Rng& rng) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_normal(n, r, rng));
  return qr.householderQ() * Eigen::MatrixXd::Identity(n, r);
}

Eigen::MatrixXd random_spd(Eigen::Index n, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  const Eigen::MatrixXd Q = random_orthonormal(n, n, rng);
  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) d(i) = u(rng);
  Eigen::MatrixXd m = Q * d.asDiagonal() * Q.transpose();
  return (m + m.transpose()) / 2.0;
}

fs::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("mstm_" + tag + "_" + std::to_string(::getpid()) + "_" +
                        std::to_string(counter++));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_inputs(const fs::path& dir, const mstm::ArealGraph& graph,
                  const mstm::Design& design) {
  {
    std::ofstream out(dir / "edges.csv");
    out << "unit_a,unit_b\n";
    for (const auto& [a, b] : graph.edges()) {
      out << graph.unit(a) << ',' << graph.unit(b) << '\n';
    }
  }
  std::ofstream out(dir / "covariates.csv");
  out << "variable,time,unit";
  for (const auto& n : design.names()) out << ',' << n;
  out << '\n';
  for (const auto& s : design.slices()) {
    for (std::size_t i = 0; i < s.rows.size(); ++i) {
      out << s.rows[i].variable << ',' << s.time << ',' << graph.unit(s.rows[i].unit);
      for (Eigen::Index k = 0; k < s.X.cols(); ++k) {
        out << ',' << mstm::csv::format(s.X(static_cast<Eigen::Index>(i), k));
      }
      out << '\n';
    }
  }
}

Moments moments(const std::vector<double>& x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  for (double v : x) m.mean += v;
  m.mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m.var = m2 / (n - 1.0);
  m.se_mean = std::sqrt(m.var / n);
  const double mu4 = m4 / n;
  const double s2 = m2 / n;
  m.se_var = std::sqrt(std::max(mu4 - s2 * s2, 0.0) / n);
  return m;
}

}  // namespace fixtures
