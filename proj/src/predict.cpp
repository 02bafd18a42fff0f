#include "mstm/predict.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>

#include "mstm/csv.hpp"
#include "mstm/errors.hpp"

namespace fs = std::filesystem;

namespace mstm {

namespace {

void check_layout(const PredictionContext& ctx) {
  const int T = ctx.design.horizon();
  if (ctx.layout.horizon != T || ctx.basis.horizon() != T) {
    throw StateError("chain horizon " + std::to_string(ctx.layout.horizon) +
                     " does not match the design horizon " + std::to_string(T));
  }
  if (ctx.layout.rank != ctx.basis.rank) {
    throw StateError("chain rank " + std::to_string(ctx.layout.rank) +
                     " does not match the basis rank " +
                     std::to_string(ctx.basis.rank));
  }
  if (ctx.layout.covariates() != ctx.design.covariates()) {
    throw StateError("chain has " + std::to_string(ctx.layout.covariates()) +
                     " covariates, design has " +
                     std::to_string(ctx.design.covariates()));
  }
  if (ctx.chain.draws.empty()) throw StateError("chain has no draws");
}

std::string describe_loc(const Location& l) {
  return "(variable " + std::to_string(l.variable) + ", t = " +
         std::to_string(l.time) + ", unit index " + std::to_string(l.unit) + ")";
}

struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

}  // namespace

std::vector<Location> all_locations(const Design& design) {
  std::vector<Location> out;
  for (const auto& s : design.slices()) {
    out.insert(out.end(), s.rows.begin(), s.rows.end());
  }
  return out;
}

void for_each_y_draw(const PredictionContext& ctx,
                     std::span<const Location> requested,
                     const std::function<void(std::size_t, const Eigen::VectorXd&)>& fn) {
  check_layout(ctx);
  std::vector<Location> all;
  if (requested.empty()) {
    all = all_locations(ctx.design);
    requested = all;
  }
  const int T = ctx.design.horizon();
  const auto n = static_cast<Eigen::Index>(requested.size());

  struct Group {
    std::vector<Eigen::Index> out;  // position in y
    std::vector<int> slot;          // xi column or -1
    Eigen::MatrixXd X, S;
  };
  std::vector<Group> groups(T);
  std::vector<std::map<Location, int>> slot_of(T);
  for (int t = 1; t <= T; ++t) {
    const auto& locs = ctx.layout.xi_locations[t - 1];
    for (std::size_t k = 0; k < locs.size(); ++k) slot_of[t - 1][locs[k]] = static_cast<int>(k);
  }
  std::vector<std::vector<std::size_t>> rows(T);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& loc = requested[static_cast<std::size_t>(i)];
    if (loc.time < 1 || loc.time > T) {
      throw ValidationError("location " + describe_loc(loc) + " is outside D_P");
    }
    const auto row = ctx.design.at(loc.time).find(loc.variable, loc.unit);
    if (!row) throw ValidationError("location " + describe_loc(loc) + " is outside D_P");
    auto& g = groups[loc.time - 1];
    g.out.push_back(i);
    const auto it = slot_of[loc.time - 1].find(loc);
    g.slot.push_back(it == slot_of[loc.time - 1].end() ? -1 : it->second);
    rows[loc.time - 1].push_back(*row);
  }
  for (int t = 1; t <= T; ++t) {
    auto& g = groups[t - 1];
    const auto m = static_cast<Eigen::Index>(g.out.size());
    const auto& slice = ctx.design.at(t);
    const auto& S = ctx.basis.at(t).S;
    g.X.resize(m, slice.X.cols());
    g.S.resize(m, S.cols());
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto row = static_cast<Eigen::Index>(rows[t - 1][static_cast<std::size_t>(k)]);
      g.X.row(k) = slice.X.row(row);
      g.S.row(k) = S.row(row);
    }
  }

  Rng rng(ctx.seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  Eigen::VectorXd y(n);
  for (std::size_t j = 0; j < ctx.chain.draws.size(); ++j) {
    const auto& s = ctx.chain.draws[j];
    for (int t = 1; t <= T; ++t) {
      const auto& g = groups[t - 1];
      if (g.out.empty()) continue;
      const Eigen::VectorXd mean = g.X * s.beta[t - 1] + g.S * s.eta[t - 1];
      const double sd = std::sqrt(s.sigma_xi2[t - 1]);
      for (std::size_t k = 0; k < g.out.size(); ++k) {
        const double xi = g.slot[k] >= 0 ? s.xi[t - 1](g.slot[k]) : sd * std_normal(rng);
        y(g.out[k]) = mean(static_cast<Eigen::Index>(k)) + xi;
      }
    }
    fn(j, y);
  }
}

Eigen::MatrixXd posterior_draws(const PredictionContext& ctx,
                                std::span<const Location> locations) {
  const std::size_t n =
      locations.empty() ? all_locations(ctx.design).size() : locations.size();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(ctx.chain.draws.size()),
                      static_cast<Eigen::Index>(n));
  for_each_y_draw(ctx, locations, [&](std::size_t j, const Eigen::VectorXd& y) {
    out.row(static_cast<Eigen::Index>(j)) = y.transpose();
  });
  return out;
}

PredictionSurface posterior_y(const PredictionContext& ctx,
                              std::span<const Location> locations) {
  std::vector<Location> all;
  if (locations.empty()) {
    all = all_locations(ctx.design);
    locations = all;
  }
  const std::size_t n = locations.size();
  std::vector<Welford> raw(n), back(n);
  std::vector<TransformSpec> spec(n);
  for (std::size_t i = 0; i < n; ++i) spec[i] = ctx.study.transform(locations[i].variable);
  for_each_y_draw(ctx, locations, [&](std::size_t, const Eigen::VectorXd& y) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = y(static_cast<Eigen::Index>(i));
      raw[i].add(v);
      if (spec[i].kind != TransformKind::identity) {
        back[i].add(inverse_transform(v, spec[i]));
      }
    }
  });
  PredictionSurface out;
  out.draws = ctx.chain.draws.size();
  out.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = out.points[i];
    p.location = locations[i];
    p.yhat = raw[i].mean;
    p.mspe = std::max(0.0, raw[i].variance());
    if (spec[i].kind != TransformKind::identity) {
      p.yhat_backtransformed = back[i].mean;
      p.mspe_backtransformed = std::max(0.0, back[i].variance());
    }
  }
  return out;
}

void write_predictions(const fs::path& path, const PredictionSurface& surface,
                       const ArealGraph& graph) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << "variable,time,unit,yhat,mspe,yhat_backtransformed,mspe_backtransformed\n";
  for (const auto& p : surface.points) {
    out << p.location.variable << ',' << p.location.time << ','
        << graph.unit(p.location.unit) << ',' << csv::format(p.yhat) << ','
        << csv::format(p.mspe) << ',';
    if (p.yhat_backtransformed) out << csv::format(*p.yhat_backtransformed);
    out << ',';
    if (p.mspe_backtransformed) out << csv::format(*p.mspe_backtransformed);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------

double rls(const KeyedDraws& truth, const KeyedPredictions& full,
           const KeyedPredictions& single) {
  auto mismatch = [](const std::vector<Location>& a, const std::vector<Location>& b,
                     const char* an, const char* bn) {
    std::string msg;
    int shown = 0;
    const std::size_t n = std::max(a.size(), b.size());
    for (std::size_t i = 0; i < n && shown < 5; ++i) {
      if (i < a.size() && i < b.size() && a[i] == b[i]) continue;
      msg += "\n  position " + std::to_string(i) + ": " + an + " " +
             (i < a.size() ? describe_loc(a[i]) : "none") + ", " + bn + " " +
             (i < b.size() ? describe_loc(b[i]) : "none");
      ++shown;
    }
    return msg;
  };
  if (truth.keys != full.keys) {
    throw ValidationError("rls: truth and full-data predictions are misaligned" +
                          mismatch(truth.keys, full.keys, "truth", "full"));
  }
  if (truth.keys != single.keys) {
    throw ValidationError("rls: truth and single-survey predictions are misaligned" +
                          mismatch(truth.keys, single.keys, "truth", "single"));
  }
  const auto n = static_cast<Eigen::Index>(truth.keys.size());
  if (truth.draws.cols() != n || full.yhat.size() != n || single.yhat.size() != n) {
    throw ValidationError("rls: draw or prediction sizes do not match the keys");
  }
  if (truth.draws.rows() == 0 || n == 0) {
    throw ValidationError("rls: no draws or no locations");
  }
  const double num =
      (truth.draws.rowwise() - single.yhat.transpose()).squaredNorm();
  const double den = (truth.draws.rowwise() - full.yhat.transpose()).squaredNorm();
  if (!(den > 0.0)) throw ValidationError("rls: denominator is zero");
  return num / den;
}

// ---------------------------------------------------------------------------

double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

TraceSummary summarize(std::string name, std::span<const double> x) {
  if (x.empty()) throw StateError("trace_summary: chain is empty");
  TraceSummary s;
  s.parameter = std::move(name);
  s.draws = x.size();
  Welford w;
  for (double v : x) w.add(v);
  s.mean = w.mean;
  s.sd = std::sqrt(w.variance());
  std::vector<double> copy(x.begin(), x.end());
  s.lower = quantile(copy, 0.025);
  s.upper = quantile(std::move(copy), 0.975);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - s.mean;
    den += d * d;
    if (i + 1 < x.size()) num += d * (x[i + 1] - s.mean);
  }
  s.lag1 = den > 0.0 ? num / den : 0.0;
  return s;
}

std::vector<double> trace_values(const PosteriorChain& chain,
                                 const ChainLayout& layout,
                                 const std::string& selector) {
  static const std::regex indexed(R"(^(beta|eta|sigma_xi2)\[(\d+)\](?:\[([A-Za-z0-9_.]+)\])?$)");
  std::vector<double> out;
  out.reserve(chain.draws.size());
  if (selector == "sigma_k2") {
    for (const auto& s : chain.draws) out.push_back(s.sigma_k2);
    return out;
  }
  std::smatch m;
  if (!std::regex_match(selector, m, indexed)) {
    throw ValidationError("unknown trace selector '" + selector + "'");
  }
  const std::string what = m[1];
  const int t = std::stoi(m[2]);
  if (t < 1 || t > layout.horizon) {
    throw ValidationError("trace selector '" + selector + "': t out of range");
  }
  if (what == "sigma_xi2") {
    if (m[3].matched) throw ValidationError("unknown trace selector '" + selector + "'");
    for (const auto& s : chain.draws) out.push_back(s.sigma_xi2[t - 1]);
    return out;
  }
  if (!m[3].matched) throw ValidationError("trace selector '" + selector + "' needs a component");
  const std::string comp = m[3];
  Eigen::Index k = -1;
  const Eigen::Index limit = what == "beta" ? layout.covariates() : layout.rank;
  if (std::all_of(comp.begin(), comp.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    k = std::stol(comp) - 1;
  } else if (what == "beta") {
    const auto& names = layout.covariate_names;
    const auto it = std::find(names.begin(), names.end(), comp);
    if (it != names.end()) k = it - names.begin();
  }
  if (k < 0 || k >= limit) {
    throw ValidationError("trace selector '" + selector + "': component out of range");
  }
  for (const auto& s : chain.draws) {
    out.push_back(what == "beta" ? s.beta[t - 1](k) : s.eta[t - 1](k));
  }
  return out;
}

TraceSummary trace_summary(const PosteriorChain& chain, const ChainLayout& layout,
                           const std::string& selector) {
  const auto v = trace_values(chain, layout, selector);
  return summarize(selector, v);
}

std::vector<std::string> default_selectors(const ChainLayout& layout) {
  std::vector<std::string> out;
  for (int t = 1; t <= layout.horizon; ++t) {
    for (const auto& name : layout.covariate_names) {
      out.push_back("beta[" + std::to_string(t) + "][" + name + "]");
    }
  }
  out.emplace_back("sigma_k2");
  for (int t = 1; t <= layout.horizon; ++t) {
    out.push_back("sigma_xi2[" + std::to_string(t) + "]");
  }
  return out;
}

void write_trace_csv(const fs::path& path, const PosteriorChain& chain,
                     const ChainLayout& layout, std::span<const int> iterations,
                     std::span<const std::string> selectors) {
  std::vector<std::vector<double>> cols;
  for (const auto& sel : selectors) cols.push_back(trace_values(chain, layout, sel));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << "iteration";
  for (const auto& sel : selectors) out << ',' << sel;
  out << '\n';
  for (std::size_t j = 0; j < chain.draws.size(); ++j) {
    out << (j < iterations.size() ? iterations[j] : static_cast<int>(j + 1));
    for (const auto& c : cols) out << ',' << csv::format(c[j]);
    out << '\n';
  }
}

void write_summary_csv(const fs::path& path, std::span<const TraceSummary> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot write " + path.string());
  out << "parameter,mean,sd,q025,q975,lag1,draws\n";
  for (const auto& s : rows) {
    out << s.parameter << ',' << csv::format(s.mean) << ','
        << csv::format(s.sd) << ',' << csv::format(s.lower) << ','
        << csv::format(s.upper) << ',' << csv::format(s.lag1) << ',' << s.draws
        << '\n';
  }
}

}  // namespace mstm
