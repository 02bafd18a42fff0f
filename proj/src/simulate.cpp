#include "mstm/simulate.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mstm/csv.hpp"
#include "mstm/errors.hpp"
#include "mstm/linalg.hpp"

namespace fs = std::filesystem;

namespace mstm {

Eigen::VectorXd TruthSpec::beta_at(int t) const {
  if (beta.empty()) throw ValidationError("truth: beta is not set");
  if (beta.size() == 1) return beta.front();
  return beta.at(static_cast<std::size_t>(t - 1));
}

double TruthSpec::sigma_xi2_at(int t) const {
  if (sigma_xi2.empty()) throw ValidationError("truth: sigma_xi2 is not set");
  if (sigma_xi2.size() == 1) return sigma_xi2.front();
  return sigma_xi2.at(static_cast<std::size_t>(t - 1));
}

SyntheticTruth simulate(const Design& design, const BasisSystem& basis,
                        const PriorStructure& prior, const TruthSpec& spec,
                        std::uint64_t seed) {
  const int T = design.horizon();
  if (basis.horizon() != T || prior.horizon() != T) {
    throw ValidationError("simulate: design, basis and prior cover different horizons");
  }
  if (spec.beta.size() != 1 && static_cast<int>(spec.beta.size()) != T) {
    throw ValidationError("truth: beta needs one vector or one per t");
  }
  if (spec.sigma_xi2.size() != 1 && static_cast<int>(spec.sigma_xi2.size()) != T) {
    throw ValidationError("truth: sigma_xi2 needs one value or one per t");
  }
  for (const auto& b : spec.beta) {
    if (b.size() != design.covariates()) {
      throw ValidationError("truth: beta has " + std::to_string(b.size()) +
                            " entries, design has " +
                            std::to_string(design.covariates()) + " covariates");
    }
  }
  if (!(spec.sigma_k2 >= 0.0)) throw ValidationError("truth: sigma_k2 must be >= 0");
  for (double s : spec.sigma_xi2) {
    if (!(s >= 0.0)) throw ValidationError("truth: sigma_xi2 must be >= 0");
  }
  std::set<int> ids;
  for (const auto& sv : spec.surveys) {
    if (!(sv.v >= 0.0)) throw ValidationError("truth: survey variance must be >= 0");
    if (!(sv.missing_fraction >= 0.0 && sv.missing_fraction < 1.0)) {
      throw ValidationError("truth: missing_fraction must be in [0, 1)");
    }
    if (!ids.insert(sv.id).second) {
      throw ValidationError("truth: duplicate survey id " + std::to_string(sv.id));
    }
  }

  SyntheticTruth out;
  out.spec = spec;
  out.seed = seed;
  Rng rng(seed);
  const Eigen::Index r = basis.rank;

  out.eta.resize(T);
  const auto k1 = regularized_scale(prior.K[0], prior.K[0]);
  for (int t = 1; t <= T; ++t) {
    if (spec.sigma_k2 == 0.0) {
      out.eta[t - 1] = Eigen::VectorXd::Zero(r);
      continue;
    }
    if (t == 1) {
      out.eta[0] = linalg::draw_normal(Eigen::VectorXd::Zero(r),
                                       spec.sigma_k2 * k1.value, rng);
    } else {
      const auto w = regularized_scale(prior.W[t - 1], prior.K[t - 1]);
      out.eta[t - 1] = linalg::draw_normal(basis.at(t).M * out.eta[t - 2],
                                           spec.sigma_k2 * w.value, rng);
    }
  }

  std::normal_distribution<double> nd(0.0, 1.0);
  out.xi.resize(T);
  out.y.resize(T);
  for (int t = 1; t <= T; ++t) {
    const auto& slice = design.at(t);
    const auto n = static_cast<Eigen::Index>(slice.rows.size());
    const double sd = std::sqrt(spec.sigma_xi2_at(t));
    out.xi[t - 1].resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.xi[t - 1](i) = sd * nd(rng);
    out.y[t - 1] = slice.X * spec.beta_at(t) + basis.at(t).S * out.eta[t - 1] +
                   out.xi[t - 1];
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Observation> rows;
  for (const auto& sv : spec.surveys) {
    const std::set<int> masked(sv.missing_units.begin(), sv.missing_units.end());
    const double sd = std::sqrt(sv.v);
    for (int t = 1; t <= T; ++t) {
      const auto& slice = design.at(t);
      for (std::size_t i = 0; i < slice.rows.size(); ++i) {
        const double u = unif(rng);
        const double e = sd * nd(rng);
        const auto& loc = slice.rows[i];
        if (masked.count(loc.unit) || u < sv.missing_fraction) continue;
        Observation o;
        o.survey = sv.id;
        o.variable = loc.variable;
        o.time = loc.time;
        o.unit = loc.unit;
        o.z = out.y[t - 1](static_cast<Eigen::Index>(i)) + e;
        o.v = sv.v;
        rows.push_back(o);
      }
    }
  }
  out.observations = ObservationSet(std::move(rows), T);
  return out;
}

void write_observations(const fs::path& path, const ObservationSet& obs,
                        const StudyDesign& study, const ArealGraph& graph) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << "variable,time,unit,z,v,survey\n";
  for (const auto& o : obs.rows()) {
    const auto spec = study.transform(o.variable);
    const double w = inverse_transform(o.z, spec);
    const double var = raw_variance(w, o.v, spec);
    out << o.variable << ',' << o.time << ',' << graph.unit(o.unit) << ','
        << csv::format(w) << ',' << csv::format(var) << ',' << o.survey << '\n';
  }
}

void write_truth(const fs::path& dir, const SyntheticTruth& truth,
                 const Design& design, const ArealGraph& graph) {
  fs::create_directories(dir);
  const int T = design.horizon();
  {
    std::ofstream out(dir / "truth_y.csv", std::ios::binary | std::ios::trunc);
    out << "variable,time,unit,y,xi\n";
    for (int t = 1; t <= T; ++t) {
      const auto& slice = design.at(t);
      for (std::size_t i = 0; i < slice.rows.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        out << slice.rows[i].variable << ',' << t << ','
            << graph.unit(slice.rows[i].unit) << ','
            << csv::format(truth.y[t - 1](k)) << ','
            << csv::format(truth.xi[t - 1](k)) << '\n';
      }
    }
  }
  {
    std::ofstream out(dir / "truth_eta.csv", std::ios::binary | std::ios::trunc);
    out << "time";
    for (Eigen::Index k = 1; k <= (T ? truth.eta[0].size() : 0); ++k) out << ",eta_" << k;
    out << '\n';
    for (int t = 1; t <= T; ++t) {
      out << t;
      for (Eigen::Index k = 0; k < truth.eta[t - 1].size(); ++k) {
        out << ',' << csv::format(truth.eta[t - 1](k));
      }
      out << '\n';
    }
  }
  {
    std::ofstream out(dir / "truth_beta.csv", std::ios::binary | std::ios::trunc);
    out << "time";
    for (const auto& n : design.names()) out << ',' << n;
    out << '\n';
    for (int t = 1; t <= T; ++t) {
      const auto b = truth.spec.beta_at(t);
      out << t;
      for (Eigen::Index k = 0; k < b.size(); ++k) out << ',' << csv::format(b(k));
      out << '\n';
    }
  }
  nlohmann::json j;
  j["seed"] = truth.seed;
  j["sigma_k2"] = truth.spec.sigma_k2;
  std::vector<double> sx;
  for (int t = 1; t <= T; ++t) sx.push_back(truth.spec.sigma_xi2_at(t));
  j["sigma_xi2"] = sx;
  nlohmann::json surveys = nlohmann::json::array();
  for (const auto& s : truth.spec.surveys) {
    std::vector<std::string> units;
    for (int u : s.missing_units) units.push_back(graph.unit(u));
    surveys.push_back({{"id", s.id},
                       {"v", s.v},
                       {"missing_fraction", s.missing_fraction},
                       {"missing_units", units}});
  }
  j["surveys"] = surveys;
  j["observations"] = truth.observations.total();
  std::ofstream out(dir / "truth.json", std::ios::binary | std::ios::trunc);
  out << j.dump(2) << '\n';
}

}  // namespace mstm
