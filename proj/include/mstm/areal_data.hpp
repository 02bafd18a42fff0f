#pragma once

#include <compare>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace mstm {

// ---------------------------------------------------------------------------
// Transforms

enum class TransformKind { identity, logit, log };

struct TransformSpec {
  TransformKind kind = TransformKind::identity;
};

TransformSpec parse_transform(std::string_view name);
std::string_view to_string(TransformKind kind);

struct TransformedValue {
  double z;
  double v;
};

// First-order (delta method) variance propagation:
//   logit: z = log(w/(1-w)), v = var / (w(1-w))^2
//   log:   z = log(w),       v = var / w^2
// Throws ValidationError when `raw` is outside the transform's domain.
TransformedValue apply_transform(double raw, double raw_variance,
                                 TransformSpec spec);

// Inverse link applied to a value on the transformed scale.
double inverse_transform(double z, TransformSpec spec);

// Maps a transformed-scale variance back to the raw scale at raw value `w`
// (the delta method run in reverse).
double raw_variance(double w, double v, TransformSpec spec);

// ---------------------------------------------------------------------------
// Study design

struct TimeWindow {
  int first = 1;
  int last = 1;
};

struct StudyDesign {
  int variables = 1;                      // L
  std::vector<TimeWindow> windows;        // one per variable
  int rank = 1;                           // r
  std::optional<int> covariates;          // p; inferred from data when unset
  std::vector<TransformSpec> transforms;  // one per variable

  int horizon() const;  // T = max upper window
  bool active(int variable, int time) const;
  TransformSpec transform(int variable) const;

  // Window invariants: min first = 1, first <= last, rank >= 1.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Areal units and adjacency

class ArealGraph {
 public:
  ArealGraph() = default;
  // Edges are unit index pairs; symmetric closure and de-duplication are
  // applied. Throws ValidationError on self-loops or out-of-range indices.
  ArealGraph(std::vector<std::string> units,
             std::vector<std::pair<int, int>> edges);

  std::size_t size() const { return units_.size(); }
  const std::vector<std::string>& units() const { return units_; }
  const std::string& unit(int i) const { return units_.at(i); }
  std::optional<int> find(std::string_view id) const;

  // Undirected edges as (i, j) with i < j, sorted.
  const std::vector<std::pair<int, int>>& edges() const { return edges_; }
  const std::vector<int>& neighbours(int i) const { return neighbours_.at(i); }
  bool adjacent(int a, int b) const;

  Eigen::MatrixXd adjacency() const;
  Eigen::MatrixXd adjacency(std::span<const int> units) const;

 private:
  std::vector<std::string> units_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<int, int>> edges_;
  std::vector<std::vector<int>> neighbours_;
};

// Unit identifiers of a covariate file in first-seen order.
std::vector<std::string> read_unit_ids(const std::filesystem::path& covariates);

// Reads `unit_a,unit_b` rows. Throws on self-loops and undeclared units.
ArealGraph build_adjacency(const std::filesystem::path& edge_file,
                           std::vector<std::string> units);

// ---------------------------------------------------------------------------
// Prediction locations and covariates

struct Location {
  int variable = 1;
  int time = 1;
  int unit = 0;

  auto operator<=>(const Location&) const = default;
};

std::string describe(const Location& loc, const ArealGraph& graph);

// The prediction locations D_{P,t} stacked over variables, with their
// covariate rows X_t. Rows are ordered by (variable, unit index).
struct TimeSlice {
  int time = 1;
  std::vector<Location> rows;
  Eigen::MatrixXd X;

  std::optional<std::size_t> find(int variable, int unit) const;
  std::vector<int> units() const;  // distinct unit indices, ascending
};

class Design {
 public:
  Design() = default;
  // Validates shape, the exact-ones intercept column and full column rank of
  // every X_t. Throws ValidationError naming every offending t.
  Design(std::vector<TimeSlice> slices, std::vector<std::string> names);

  int covariates() const { return static_cast<int>(names_.size()); }
  int horizon() const { return static_cast<int>(slices_.size()); }
  const std::vector<std::string>& names() const { return names_; }
  const TimeSlice& at(int time) const { return slices_.at(time - 1); }
  const std::vector<TimeSlice>& slices() const { return slices_; }
  std::optional<std::size_t> row_of(const Location& loc) const;
  int min_rows() const;

 private:
  std::vector<TimeSlice> slices_;
  std::vector<std::string> names_;
};

// Numerical rank via singular values with threshold N * eps * sigma_max.
int numerical_rank(const Eigen::MatrixXd& X);

// Reads `variable,time,unit,x1..xp`. One row per prediction location.
Design assemble_design(const std::filesystem::path& covariate_file,
                       const StudyDesign& study, const ArealGraph& graph);

// Adjacency over the stacked rows of a slice: (l, A) and (l', A') are
// neighbours when A and A' share an edge, or when A == A' and l != l'.
Eigen::MatrixXd stacked_adjacency(const ArealGraph& graph,
                                  const TimeSlice& slice);

// ---------------------------------------------------------------------------
// Observations

struct Observation {
  int survey = 1;
  int variable = 1;
  int time = 1;
  int unit = 0;
  double z = 0.0;  // transformed scale
  double v = 0.0;  // transformed scale

  Location location() const { return {variable, time, unit}; }
};

class ObservationSet {
 public:
  ObservationSet() = default;
  ObservationSet(std::vector<Observation> rows, int horizon);

  const std::vector<Observation>& rows() const { return rows_; }
  std::size_t total() const { return rows_.size(); }      // n
  int count_at(int time) const;                           // n_t
  int horizon() const { return static_cast<int>(per_time_.size()); }
  std::vector<int> surveys() const;
  ObservationSet subset(int survey) const;

 private:
  std::vector<Observation> rows_;
  std::vector<int> per_time_;
};

// Reads `variable,time,unit,z,v[,survey]`, applies the per-variable
// transform and validates windows, units, variances and key uniqueness.
ObservationSet load_observations(const std::filesystem::path& path,
                                 const StudyDesign& study,
                                 const ArealGraph& graph);

// Every observation must sit on a prediction location of the design.
void check_within(const ObservationSet& obs, const Design& design,
                  const ArealGraph& graph);

}  // namespace mstm
