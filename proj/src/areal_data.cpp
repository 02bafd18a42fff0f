#include "mstm/areal_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "mstm/csv.hpp"
#include "mstm/errors.hpp"

namespace mstm {

TransformSpec parse_transform(std::string_view name) {
  if (name == "identity") return {TransformKind::identity};
  if (name == "logit") return {TransformKind::logit};
  if (name == "log") return {TransformKind::log};
  throw ValidationError("unknown transform '" + std::string(name) +
                        "' (expected identity, logit or log)");
}

std::string_view to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::identity: return "identity";
    case TransformKind::logit: return "logit";
    case TransformKind::log: return "log";
  }
  return "identity";
}

TransformedValue apply_transform(double raw, double raw_variance,
                                 TransformSpec spec) {
  switch (spec.kind) {
    case TransformKind::identity:
      return {raw, raw_variance};
    case TransformKind::logit: {
      if (!(raw > 0.0 && raw < 1.0)) {
        std::ostringstream msg;
        msg << "logit transform requires a value in (0,1), got " << raw;
        throw ValidationError(msg.str());
      }
      const double d = raw * (1.0 - raw);
      return {std::log(raw / (1.0 - raw)), raw_variance / (d * d)};
    }
    case TransformKind::log: {
      if (!(raw > 0.0)) {
        std::ostringstream msg;
        msg << "log transform requires a positive value, got " << raw;
        throw ValidationError(msg.str());
      }
      return {std::log(raw), raw_variance / (raw * raw)};
    }
  }
  return {raw, raw_variance};
}

double inverse_transform(double z, TransformSpec spec) {
  switch (spec.kind) {
    case TransformKind::identity: return z;
    case TransformKind::logit: return 1.0 / (1.0 + std::exp(-z));
    case TransformKind::log: return std::exp(z);
  }
  return z;
}

double raw_variance(double w, double v, TransformSpec spec) {
  switch (spec.kind) {
    case TransformKind::identity: return v;
    case TransformKind::logit: {
      const double d = w * (1.0 - w);
      return v * d * d;
    }
    case TransformKind::log: return v * w * w;
  }
  return v;
}

// ---------------------------------------------------------------------------

int StudyDesign::horizon() const {
  int t = 0;
  for (const auto& w : windows) t = std::max(t, w.last);
  return t;
}

bool StudyDesign::active(int variable, int time) const {
  if (variable < 1 || variable > static_cast<int>(windows.size())) return false;
  const auto& w = windows[variable - 1];
  return time >= w.first && time <= w.last;
}

TransformSpec StudyDesign::transform(int variable) const {
  if (variable < 1 || variable > static_cast<int>(transforms.size())) return {};
  return transforms[variable - 1];
}

void StudyDesign::validate() const {
  if (variables < 1) throw ValidationError("design: need at least one variable");
  if (static_cast<int>(windows.size()) != variables) {
    throw ValidationError("design: expected " + std::to_string(variables) +
                          " time windows, got " +
                          std::to_string(windows.size()));
  }
  if (!transforms.empty() && static_cast<int>(transforms.size()) != variables) {
    throw ValidationError("design: transforms must be given per variable");
  }
  int min_first = std::numeric_limits<int>::max();
  for (int l = 0; l < variables; ++l) {
    const auto& w = windows[l];
    if (w.first > w.last) {
      throw ValidationError("design: variable " + std::to_string(l + 1) +
                            " has window [" + std::to_string(w.first) + ", " +
                            std::to_string(w.last) + "] with first > last");
    }
    min_first = std::min(min_first, w.first);
  }
  if (min_first != 1) {
    throw ValidationError("design: the earliest window must start at t = 1");
  }
  if (rank < 1) throw ValidationError("design: rank must be at least 1");
  if (covariates && *covariates < 1) {
    throw ValidationError("design: covariate dimension must be at least 1");
  }
}

// ---------------------------------------------------------------------------

ArealGraph::ArealGraph(std::vector<std::string> units,
                       std::vector<std::pair<int, int>> edges)
    : units_(std::move(units)), neighbours_(units_.size()) {
  for (std::size_t i = 0; i < units_.size(); ++i) {
    if (!index_.emplace(units_[i], static_cast<int>(i)).second) {
      throw ValidationError("duplicate unit identifier '" + units_[i] + "'");
    }
  }
  const int n = static_cast<int>(units_.size());
  std::set<std::pair<int, int>> unique;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) {
      throw ValidationError("edge endpoint out of range");
    }
    if (a == b) {
      throw ValidationError("self-loop on unit '" + units_[a] + "'");
    }
    unique.emplace(std::min(a, b), std::max(a, b));
  }
  edges_.assign(unique.begin(), unique.end());
  for (auto [a, b] : edges_) {
    neighbours_[a].push_back(b);
    neighbours_[b].push_back(a);
  }
  for (auto& nb : neighbours_) std::sort(nb.begin(), nb.end());
}

std::optional<int> ArealGraph::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool ArealGraph::adjacent(int a, int b) const {
  const auto& nb = neighbours_.at(a);
  return std::binary_search(nb.begin(), nb.end(), b);
}

Eigen::MatrixXd ArealGraph::adjacency() const {
  const auto n = static_cast<Eigen::Index>(units_.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (auto [a, b] : edges_) {
    A(a, b) = 1.0;
    A(b, a) = 1.0;
  }
  return A;
}

Eigen::MatrixXd ArealGraph::adjacency(std::span<const int> units) const {
  const auto n = static_cast<Eigen::Index>(units.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (adjacent(units[i], units[j])) {
        A(i, j) = 1.0;
        A(j, i) = 1.0;
      }
    }
  }
  return A;
}

std::vector<std::string> read_unit_ids(const std::filesystem::path& covariates) {
  const auto table = csv::read(covariates);
  const auto col = table.column("unit");
  std::vector<std::string> ids;
  std::set<std::string> seen;
  for (const auto& rec : table.rows) {
    if (seen.insert(rec.fields[col]).second) ids.push_back(rec.fields[col]);
  }
  return ids;
}

ArealGraph build_adjacency(const std::filesystem::path& edge_file,
                           std::vector<std::string> units) {
  const auto table = csv::read(edge_file);
  const auto ca = table.column("unit_a");
  const auto cb = table.column("unit_b");
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < units.size(); ++i) {
    index.emplace(units[i], static_cast<int>(i));
  }
  std::vector<std::pair<int, int>> edges;
  for (const auto& rec : table.rows) {
    const auto& a = rec.fields[ca];
    const auto& b = rec.fields[cb];
    const auto where = edge_file.string() + ":" + std::to_string(rec.line);
    for (const auto* id : {&a, &b}) {
      if (!index.count(*id)) {
        throw ValidationError(where + ": unknown unit '" + *id + "'");
      }
    }
    if (a == b) throw ValidationError(where + ": self-loop on unit '" + a + "'");
    edges.emplace_back(index.at(a), index.at(b));
  }
  return ArealGraph(std::move(units), std::move(edges));
}

std::string describe(const Location& loc, const ArealGraph& graph) {
  std::ostringstream s;
  s << "(variable=" << loc.variable << ", time=" << loc.time << ", unit="
    << (loc.unit >= 0 && loc.unit < static_cast<int>(graph.size())
            ? graph.unit(loc.unit)
            : std::to_string(loc.unit))
    << ")";
  return s.str();
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> TimeSlice::find(int variable, int unit) const {
  Location key{variable, time, unit};
  auto it = std::lower_bound(rows.begin(), rows.end(), key,
                             [](const Location& a, const Location& b) {
                               return std::pair(a.variable, a.unit) <
                                      std::pair(b.variable, b.unit);
                             });
  if (it == rows.end() || it->variable != variable || it->unit != unit) {
    return std::nullopt;
  }
  return static_cast<std::size_t>(it - rows.begin());
}

std::vector<int> TimeSlice::units() const {
  std::set<int> u;
  for (const auto& r : rows) u.insert(r.unit);
  return {u.begin(), u.end()};
}

int numerical_rank(const Eigen::MatrixXd& X) {
  if (X.size() == 0) return 0;
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X);
  const auto& s = svd.singularValues();
  const double tol = static_cast<double>(std::max(X.rows(), X.cols())) *
                     std::numeric_limits<double>::epsilon() * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tol) ++rank;
  }
  return rank;
}

Design::Design(std::vector<TimeSlice> slices, std::vector<std::string> names)
    : slices_(std::move(slices)), names_(std::move(names)) {
  const auto p = static_cast<Eigen::Index>(names_.size());
  if (p < 1) throw ValidationError("design: no covariate columns");
  std::vector<int> deficient;
  std::vector<int> no_intercept;
  for (std::size_t k = 0; k < slices_.size(); ++k) {
    auto& s = slices_[k];
    if (s.time != static_cast<int>(k) + 1) {
      throw ValidationError("design: slices must be ordered by time");
    }
    std::sort(s.rows.begin(), s.rows.end());
    if (s.X.rows() != static_cast<Eigen::Index>(s.rows.size()) ||
        s.X.cols() != p) {
      throw ValidationError("design: X_" + std::to_string(s.time) +
                            " has the wrong shape");
    }
    if (s.rows.empty()) {
      throw ValidationError("design: no prediction locations at t = " +
                            std::to_string(s.time));
    }
    bool has_ones = false;
    for (Eigen::Index j = 0; j < p && !has_ones; ++j) {
      has_ones = (s.X.col(j).array() == 1.0).all();
    }
    if (!has_ones) no_intercept.push_back(s.time);
    if (numerical_rank(s.X) < p) deficient.push_back(s.time);
  }
  auto list = [](const std::vector<int>& ts) {
    std::string out;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      out += (i ? ", " : "") + std::to_string(ts[i]);
    }
    return out;
  };
  if (!no_intercept.empty()) {
    throw ValidationError("design: no intercept (all-ones) column at t = " +
                          list(no_intercept));
  }
  if (!deficient.empty()) {
    throw ValidationError("design: rank-deficient X_t at t = " +
                          list(deficient));
  }
}

std::optional<std::size_t> Design::row_of(const Location& loc) const {
  if (loc.time < 1 || loc.time > horizon()) return std::nullopt;
  return at(loc.time).find(loc.variable, loc.unit);
}

int Design::min_rows() const {
  int m = std::numeric_limits<int>::max();
  for (const auto& s : slices_) m = std::min(m, static_cast<int>(s.rows.size()));
  return m;
}

Design assemble_design(const std::filesystem::path& covariate_file,
                       const StudyDesign& study, const ArealGraph& graph) {
  study.validate();
  const auto table = csv::read(covariate_file);
  const auto cv = table.column("variable");
  const auto ct = table.column("time");
  const auto cu = table.column("unit");
  std::vector<std::size_t> xcols;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < table.header.size(); ++i) {
    if (i == cv || i == ct || i == cu) continue;
    xcols.push_back(i);
    names.push_back(table.header[i]);
  }
  if (names.empty()) {
    throw ValidationError(covariate_file.string() + ": no covariate columns");
  }
  if (study.covariates && *study.covariates != static_cast<int>(names.size())) {
    throw ValidationError(covariate_file.string() + ": expected " +
                          std::to_string(*study.covariates) +
                          " covariates, found " + std::to_string(names.size()));
  }
  const int T = study.horizon();
  const auto p = static_cast<Eigen::Index>(names.size());
  std::vector<std::map<std::pair<int, int>, Eigen::VectorXd>> rows(T);
  for (const auto& rec : table.rows) {
    const auto where = covariate_file.string() + ":" + std::to_string(rec.line);
    const int l = static_cast<int>(csv::to_int(rec.fields[cv], table, rec));
    const int t = static_cast<int>(csv::to_int(rec.fields[ct], table, rec));
    const auto unit = graph.find(rec.fields[cu]);
    if (!unit) {
      throw ValidationError(where + ": unknown unit '" + rec.fields[cu] + "'");
    }
    if (!study.active(l, t)) {
      throw ValidationError(where + ": (variable=" + std::to_string(l) +
                            ", time=" + std::to_string(t) +
                            ") lies outside the variable's time window");
    }
    Eigen::VectorXd x(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      x(j) = csv::to_double(rec.fields[xcols[j]], table, rec);
    }
    if (!rows[t - 1].emplace(std::pair(l, *unit), std::move(x)).second) {
      throw ValidationError(where + ": duplicate covariate row for " +
                            describe({l, t, *unit}, graph));
    }
  }
  std::vector<TimeSlice> slices;
  for (int t = 1; t <= T; ++t) {
    for (int l = 1; l <= study.variables; ++l) {
      if (!study.active(l, t)) continue;
      const bool any = std::any_of(rows[t - 1].begin(), rows[t - 1].end(),
                                   [l](const auto& kv) { return kv.first.first == l; });
      if (!any) {
        throw ValidationError(covariate_file.string() +
                              ": missing covariate rows for variable " +
                              std::to_string(l) + " at t = " + std::to_string(t));
      }
    }
    TimeSlice s;
    s.time = t;
    s.X.resize(static_cast<Eigen::Index>(rows[t - 1].size()), p);
    Eigen::Index i = 0;
    for (const auto& [key, x] : rows[t - 1]) {
      s.rows.push_back({key.first, t, key.second});
      s.X.row(i++) = x.transpose();
    }
    slices.push_back(std::move(s));
  }
  return Design(std::move(slices), std::move(names));
}

Eigen::MatrixXd stacked_adjacency(const ArealGraph& graph,
                                  const TimeSlice& slice) {
  const auto n = static_cast<Eigen::Index>(slice.rows.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = slice.rows[i];
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const auto& b = slice.rows[j];
      const bool linked = a.unit == b.unit ? a.variable != b.variable
                                           : graph.adjacent(a.unit, b.unit);
      if (linked) {
        A(i, j) = 1.0;
        A(j, i) = 1.0;
      }
    }
  }
  return A;
}

// ---------------------------------------------------------------------------

ObservationSet::ObservationSet(std::vector<Observation> rows, int horizon)
    : rows_(std::move(rows)), per_time_(std::max(horizon, 0), 0) {
  for (const auto& o : rows_) {
    if (o.time < 1 || o.time > horizon) {
      throw ValidationError("observation time " + std::to_string(o.time) +
                            " outside 1.." + std::to_string(horizon));
    }
    ++per_time_[o.time - 1];
  }
}

int ObservationSet::count_at(int time) const {
  if (time < 1 || time > horizon()) return 0;
  return per_time_[time - 1];
}

std::vector<int> ObservationSet::surveys() const {
  std::set<int> s;
  for (const auto& o : rows_) s.insert(o.survey);
  return {s.begin(), s.end()};
}

ObservationSet ObservationSet::subset(int survey) const {
  std::vector<Observation> keep;
  for (const auto& o : rows_) {
    if (o.survey == survey) keep.push_back(o);
  }
  return ObservationSet(std::move(keep), horizon());
}

ObservationSet load_observations(const std::filesystem::path& path,
                                 const StudyDesign& study,
                                 const ArealGraph& graph) {
  study.validate();
  const auto table = csv::read(path);
  const auto cv = table.column("variable");
  const auto ct = table.column("time");
  const auto cu = table.column("unit");
  const auto cz = table.column("z");
  const auto cvar = table.column("v");
  std::optional<std::size_t> cs;
  if (std::find(table.header.begin(), table.header.end(), "survey") !=
      table.header.end()) {
    cs = table.column("survey");
  }
  std::set<std::tuple<int, int, int, int>> seen;
  std::vector<Observation> out;
  out.reserve(table.rows.size());
  for (const auto& rec : table.rows) {
    const auto where = path.string() + ":" + std::to_string(rec.line);
    Observation o;
    o.variable = static_cast<int>(csv::to_int(rec.fields[cv], table, rec));
    o.time = static_cast<int>(csv::to_int(rec.fields[ct], table, rec));
    if (cs) o.survey = static_cast<int>(csv::to_int(rec.fields[*cs], table, rec));
    const auto unit = graph.find(rec.fields[cu]);
    if (!unit) {
      throw ValidationError(where + ": unknown unit '" + rec.fields[cu] + "'");
    }
    o.unit = *unit;
    if (o.variable < 1 || o.variable > study.variables) {
      throw ValidationError(where + ": variable " + std::to_string(o.variable) +
                            " outside 1.." + std::to_string(study.variables));
    }
    if (!study.active(o.variable, o.time)) {
      throw ValidationError(where + ": time " + std::to_string(o.time) +
                            " outside the window of variable " +
                            std::to_string(o.variable));
    }
    const double raw = csv::to_double(rec.fields[cz], table, rec);
    const double raw_v = csv::to_double(rec.fields[cvar], table, rec);
    if (!(raw_v > 0.0) || !std::isfinite(raw_v)) {
      throw ValidationError(where + ": nonpositive variance v = " +
                            rec.fields[cvar]);
    }
    try {
      const auto tv = apply_transform(raw, raw_v, study.transform(o.variable));
      o.z = tv.z;
      o.v = tv.v;
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!std::isfinite(o.z)) {
      throw ValidationError(where + ": non-finite value");
    }
    if (!seen.emplace(o.survey, o.variable, o.time, o.unit).second) {
      auto msg = where + ": duplicate observation " +
                 describe(o.location(), graph);
      if (cs) msg += " in survey " + std::to_string(o.survey);
      throw ValidationError(msg);
    }
    out.push_back(o);
  }
  return ObservationSet(std::move(out), study.horizon());
}

void check_within(const ObservationSet& obs, const Design& design,
                  const ArealGraph& graph) {
  for (const auto& o : obs.rows()) {
    if (!design.row_of(o.location())) {
      throw ValidationError("observation at " + describe(o.location(), graph) +
                            " is not a prediction location (no covariate row)");
    }
  }
}

}  // namespace mstm
