#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "mstm/areal_data.hpp"
#include "mstm/csv.hpp"
#include "mstm/errors.hpp"

using namespace mstm;
namespace fs = std::filesystem;

namespace {

StudyDesign one_variable(int T, int rank = 1) {
  StudyDesign st;
  st.variables = 1;
  st.windows = {{1, T}};
  st.rank = rank;
  st.transforms = {TransformSpec{}};
  return st;
}

// Monte Carlo variance of f(W) for W ~ N(w, var).
double mc_variance(double w, double var, double (*f)(double), int n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> nd(w, std::sqrt(var));
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = f(nd(rng));
    s += y;
    s2 += y * y;
  }
  const double m = s / n;
  return s2 / n - m * m;
}

double logit(double w) { return std::log(w / (1.0 - w)); }
double log_fn(double w) { return std::log(w); }

}  // namespace

TEST_CASE("apply_transform: identity passes through") {
  const auto r = apply_transform(0.3, 0.01, {TransformKind::identity});
  CHECK(r.z == 0.3);
  CHECK(r.v == 0.01);
}

TEST_CASE("apply_transform: logit(0.5, 0.01) gives (0, 0.16) and agrees with simulation") {
  const auto r = apply_transform(0.5, 0.01, {TransformKind::logit});
  CHECK(r.z == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r.v == doctest::Approx(0.16).epsilon(1e-12));
  // Small raw variance so the first-order expansion is accurate; the
  // stated pair is the delta-method value, checked here against simulation
  // at a scale where higher-order terms are negligible.
  const double small = 1e-4;
  const double mc = mc_variance(0.5, small, logit, 400000, 11);
  const auto d = apply_transform(0.5, small, {TransformKind::logit});
  CHECK(mc == doctest::Approx(d.v).epsilon(0.01));
}

TEST_CASE("apply_transform: log(2, 0.04) gives (log 2, 0.01) and agrees with simulation") {
  const auto r = apply_transform(2.0, 0.04, {TransformKind::log});
  CHECK(r.z == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(r.v == doctest::Approx(0.01).epsilon(1e-12));
  const double mc = mc_variance(2.0, 0.04, log_fn, 400000, 12);
  CHECK(mc == doctest::Approx(r.v).epsilon(0.02));
}

TEST_CASE("apply_transform: domain violations name the value") {
  CHECK_THROWS_WITH_AS(apply_transform(1.5, 0.01, {TransformKind::logit}),
                       doctest::Contains("1.5"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_transform(0.0, 0.01, {TransformKind::logit}),
                       doctest::Contains("0"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_transform(-2.0, 0.01, {TransformKind::log}),
                       doctest::Contains("-2"), ValidationError);
}

TEST_CASE("apply_transform then inverse recovers the raw value") {
  Rng rng(3);
  std::uniform_real_distribution<double> u(1e-3, 1.0 - 1e-3);
  for (int i = 0; i < 1000; ++i) {
    const double w = u(rng);
    for (auto k : {TransformKind::identity, TransformKind::logit, TransformKind::log}) {
      const auto r = apply_transform(w, 0.01, {k});
      CHECK(std::abs(inverse_transform(r.z, {k}) - w) <= 1e-12);
      CHECK(raw_variance(w, r.v, {k}) == doctest::Approx(0.01).epsilon(1e-10));
    }
  }
}

TEST_CASE("parse_transform") {
  CHECK(parse_transform("logit").kind == TransformKind::logit);
  CHECK(parse_transform("log").kind == TransformKind::log);
  CHECK(parse_transform("identity").kind == TransformKind::identity);
  CHECK_THROWS_AS(parse_transform("sqrt"), ValidationError);
}

TEST_CASE("StudyDesign window invariants") {
  StudyDesign st;
  st.variables = 2;
  st.windows = {{1, 20}, {16, 20}};
  st.transforms = {TransformSpec{}, TransformSpec{}};
  st.validate();
  CHECK(st.horizon() == 20);
  CHECK(st.active(2, 16));
  CHECK_FALSE(st.active(2, 15));
  st.windows = {{2, 20}, {16, 20}};
  CHECK_THROWS_AS(st.validate(), ValidationError);
  st.windows = {{1, 20}, {17, 16}};
  CHECK_THROWS_AS(st.validate(), ValidationError);
  st.windows = {{1, 20}, {16, 20}};
  st.rank = 0;
  CHECK_THROWS_AS(st.validate(), ValidationError);
}

TEST_CASE("build_adjacency: single edge, empty file, 4-cycle") {
  const auto dir = fixtures::temp_dir("adj");
  fixtures::write_text(dir / "one.csv", "unit_a,unit_b\n1,2\n");
  const auto g1 = build_adjacency(dir / "one.csv", {"1", "2"});
  Eigen::MatrixXd expect(2, 2);
  expect << 0, 1, 1, 0;
  CHECK(g1.adjacency() == expect);

  fixtures::write_text(dir / "empty.csv", "unit_a,unit_b\n");
  const auto g0 = build_adjacency(dir / "empty.csv", {"a", "b", "c"});
  CHECK(g0.adjacency() == Eigen::MatrixXd::Zero(3, 3));

  fixtures::write_text(dir / "cycle.csv", "unit_a,unit_b\na,b\nb,c\nc,d\nd,a\nb,a\n");
  const auto g4 = build_adjacency(dir / "cycle.csv", {"a", "b", "c", "d"});
  const Eigen::MatrixXd A = g4.adjacency();
  CHECK(A.rowwise().sum() == Eigen::VectorXd::Constant(4, 2.0));
  CHECK(A == A.transpose());
  CHECK(A.diagonal().isZero());
  CHECK(g4.edges().size() == 4);
}

TEST_CASE("build_adjacency: self-loop and unknown unit are rejected") {
  const auto dir = fixtures::temp_dir("adj_err");
  fixtures::write_text(dir / "loop.csv", "unit_a,unit_b\na,a\n");
  CHECK_THROWS_WITH_AS(build_adjacency(dir / "loop.csv", {"a", "b"}),
                       doctest::Contains("self-loop"), ValidationError);
  fixtures::write_text(dir / "unknown.csv", "unit_a,unit_b\na,z\n");
  CHECK_THROWS_WITH_AS(build_adjacency(dir / "unknown.csv", {"a", "b"}),
                       doctest::Contains("unknown unit 'z'"), ValidationError);
  CHECK_THROWS_AS(build_adjacency(dir / "absent.csv", {"a"}), MissingInputError);
}

TEST_CASE("random graphs: A symmetric with zero diagonal") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = fixtures::random_graph(10 + rep, 0.2, rng);
    const Eigen::MatrixXd A = g.adjacency();
    CHECK(A == A.transpose());
    CHECK(A.diagonal().isZero());
    CHECK(((A.array() == 0.0) || (A.array() == 1.0)).all());
  }
}

TEST_CASE("stacked adjacency joins same-unit rows of different variables") {
  const auto g = fixtures::lattice(1, 3);  // u0 - u1 - u2
  TimeSlice s;
  s.time = 1;
  s.rows = {{1, 1, 0}, {1, 1, 1}, {1, 1, 2}, {2, 1, 0}, {2, 1, 1}, {2, 1, 2}};
  s.X = Eigen::MatrixXd::Ones(6, 1);
  const Eigen::MatrixXd A = stacked_adjacency(g, s);
  CHECK(A(0, 1) == 1.0);  // neighbours, same variable
  CHECK(A(0, 4) == 1.0);  // neighbours, different variables
  CHECK(A(0, 3) == 1.0);  // same unit, different variables
  CHECK(A(0, 2) == 0.0);
  CHECK(A(0, 0) == 0.0);
  CHECK(A == A.transpose());
}

TEST_CASE("assemble_design: intercept-only, 7-covariate shape, and degeneracies") {
  const auto dir = fixtures::temp_dir("design");
  const auto g = fixtures::lattice(1, 3);
  fixtures::write_text(dir / "x1.csv",
                       "variable,time,unit,intercept\n1,1,u0,1\n1,1,u1,1\n1,1,u2,1\n");
  const auto d1 = assemble_design(dir / "x1.csv", one_variable(1), g);
  CHECK(d1.at(1).X == Eigen::MatrixXd::Ones(3, 1));
  CHECK(numerical_rank(d1.at(1).X) == 1);

  // x = (1, I(l=2), c1, c2, t*c1*c2, I(l=2)*c1, I(l=2)*c2) over 6 units, 2 variables.
  const auto g6 = fixtures::lattice(2, 3);
  Rng rng(8);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::string text = "variable,time,unit,x1,x2,x3,x4,x5,x6,x7\n";
  for (int t = 1; t <= 2; ++t) {
    for (int l = 1; l <= 2; ++l) {
      for (int a = 0; a < 6; ++a) {
        const double c1 = nd(rng), c2 = nd(rng), ind = l == 2 ? 1.0 : 0.0;
        text += std::to_string(l) + "," + std::to_string(t) + ",u" + std::to_string(a) +
                ",1," + csv::format(ind) + "," + csv::format(c1) + "," + csv::format(c2) +
                "," + csv::format(t * c1 * c2) + "," + csv::format(ind * c1) + "," +
                csv::format(ind * c2) + "\n";
      }
    }
  }
  fixtures::write_text(dir / "x7.csv", text);
  StudyDesign st;
  st.variables = 2;
  st.windows = {{1, 2}, {1, 2}};
  st.transforms = {TransformSpec{}, TransformSpec{}};
  const auto d7 = assemble_design(dir / "x7.csv", st, g6);
  CHECK(d7.covariates() == 7);
  CHECK(d7.at(1).X.rows() == 12);
  CHECK(d7.at(2).X.cols() == 7);

  // A literal time column is constant within a slice, so it duplicates the
  // intercept direction and the design is rejected at every t.
  std::string lit = "variable,time,unit,x1,x2,t\n";
  for (int t = 1; t <= 2; ++t) {
    for (int a = 0; a < 3; ++a) {
      lit += "1," + std::to_string(t) + ",u" + std::to_string(a) + ",1," +
             csv::format(nd(rng)) + "," + std::to_string(t) + "\n";
    }
  }
  fixtures::write_text(dir / "lit.csv", lit);
  CHECK_THROWS_WITH_AS(assemble_design(dir / "lit.csv", one_variable(2), g),
                       doctest::Contains("rank-deficient X_t at t = 1, 2"),
                       ValidationError);

  std::string dup = "variable,time,unit,x1,x2,x3\n";
  for (int t = 1; t <= 3; ++t) {
    for (int a = 0; a < 3; ++a) {
      const double c = nd(rng);
      dup += "1," + std::to_string(t) + ",u" + std::to_string(a) + ",1," +
             csv::format(c) + "," + csv::format(c) + "\n";
    }
  }
  fixtures::write_text(dir / "dup.csv", dup);
  CHECK_THROWS_WITH_AS(assemble_design(dir / "dup.csv", one_variable(3), g),
                       doctest::Contains("t = 1, 2, 3"), ValidationError);

  fixtures::write_text(dir / "noint.csv",
                       "variable,time,unit,x1\n1,1,u0,2\n1,1,u1,1\n1,1,u2,3\n");
  CHECK_THROWS_WITH_AS(assemble_design(dir / "noint.csv", one_variable(1), g),
                       doctest::Contains("intercept"), ValidationError);

  fixtures::write_text(dir / "missing.csv",
                       "variable,time,unit,x1\n1,1,u0,1\n1,1,u1,1\n1,1,u2,1\n");
  CHECK_THROWS_AS(assemble_design(dir / "missing.csv", one_variable(2), g),
                  ValidationError);
}

TEST_CASE("Design never holds an X_t without an exact-ones column") {
  Rng rng(21);
  const auto g = fixtures::lattice(3, 3);
  for (int rep = 0; rep < 10; ++rep) {
    fixtures::DesignSpec spec;
    spec.horizon = 4;
    spec.covariates = 1 + rep % 4;
    const auto d = fixtures::random_design(g, spec, rng);
    for (const auto& s : d.slices()) {
      bool found = false;
      for (Eigen::Index j = 0; j < s.X.cols(); ++j) {
        found = found || (s.X.col(j).array() == 1.0).all();
      }
      CHECK(found);
    }
  }
}

TEST_CASE("load_observations: counts, survey column and errors") {
  const auto dir = fixtures::temp_dir("obs");
  const auto g = fixtures::lattice(1, 3);
  fixtures::write_text(dir / "two.csv", "variable,time,unit,z,v\n1,1,u0,0.5,0.1\n1,1,u2,0.7,0.1\n");
  const auto two = load_observations(dir / "two.csv", one_variable(1), g);
  CHECK(two.total() == 2);
  CHECK(two.count_at(1) == 2);
  CHECK(two.surveys() == std::vector<int>{1});

  fixtures::write_text(dir / "zero.csv", "variable,time,unit,z,v\n1,1,u0,0.5,0\n");
  CHECK_THROWS_WITH_AS(load_observations(dir / "zero.csv", one_variable(1), g),
                       doctest::Contains("nonpositive variance"), ValidationError);

  fixtures::write_text(dir / "dup.csv", "variable,time,unit,z,v\n1,1,u1,0.5,0.1\n1,1,u1,0.6,0.1\n");
  CHECK_THROWS_WITH_AS(load_observations(dir / "dup.csv", one_variable(1), g),
                       doctest::Contains("(variable=1, time=1, unit=u1)"), ValidationError);

  fixtures::write_text(dir / "unk.csv", "variable,time,unit,z,v\n1,1,zz,0.5,0.1\n");
  CHECK_THROWS_WITH_AS(load_observations(dir / "unk.csv", one_variable(1), g),
                       doctest::Contains("unknown unit 'zz'"), ValidationError);

  fixtures::write_text(dir / "win.csv", "variable,time,unit,z,v\n1,3,u0,0.5,0.1\n");
  CHECK_THROWS_AS(load_observations(dir / "win.csv", one_variable(2), g), ValidationError);

  fixtures::write_text(dir / "sv.csv",
                       "variable,time,unit,z,v,survey\n1,1,u1,0.5,0.1,1\n1,1,u1,0.6,0.4,2\n");
  const auto sv = load_observations(dir / "sv.csv", one_variable(1), g);
  CHECK(sv.total() == 2);
  CHECK(sv.surveys() == std::vector<int>{1, 2});
  CHECK(sv.subset(2).total() == 1);
  CHECK(sv.subset(2).rows()[0].v == 0.4);

  CHECK_THROWS_AS(load_observations(dir / "absent.csv", one_variable(1), g),
                  MissingInputError);
}

TEST_CASE("load_observations: staggered windows tally by hand") {
  // Variable 1 on t = 1..20, variable 2 on t = 16..20; one row per active
  // (variable, t) pair for units u0 and u1 except where listed.
  const auto dir = fixtures::temp_dir("stagger");
  const auto g = fixtures::lattice(1, 2);
  StudyDesign st;
  st.variables = 2;
  st.windows = {{1, 20}, {16, 20}};
  st.transforms = {TransformSpec{}, {TransformKind::log}};
  std::string text = "variable,time,unit,z,v\n";
  for (int t = 1; t <= 20; ++t) {
    text += "1," + std::to_string(t) + ",u0,0.1,0.01\n";
    if (t % 2 == 0) text += "1," + std::to_string(t) + ",u1,0.2,0.01\n";
    if (t >= 16) text += "2," + std::to_string(t) + ",u1,3.0,0.09\n";
  }
  fixtures::write_text(dir / "obs.csv", text);
  const auto obs = load_observations(dir / "obs.csv", st, g);
  // t = 15: u0 only (odd). t = 16: u0, u1, v2. t = 17: u0, v2.
  CHECK(obs.count_at(1) == 1);
  CHECK(obs.count_at(2) == 2);
  CHECK(obs.count_at(15) == 1);
  CHECK(obs.count_at(16) == 3);
  CHECK(obs.count_at(17) == 2);
  int sum = 0;
  for (int t = 1; t <= 20; ++t) sum += obs.count_at(t);
  CHECK(sum == static_cast<int>(obs.total()));
  CHECK(obs.total() == 20 + 10 + 5);
  for (const auto& o : obs.rows()) {
    if (o.variable == 2) {
      CHECK(o.z == doctest::Approx(std::log(3.0)));
      CHECK(o.v == doctest::Approx(0.01));
    }
  }
  fixtures::write_text(dir / "early.csv", "variable,time,unit,z,v\n2,15,u0,3.0,0.1\n");
  CHECK_THROWS_AS(load_observations(dir / "early.csv", st, g), ValidationError);
}
