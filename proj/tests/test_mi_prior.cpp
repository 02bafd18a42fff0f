#include <doctest.h>

#include <algorithm>

#include "fixtures.hpp"
#include "mstm/errors.hpp"
#include "mstm/linalg.hpp"
#include "mstm/mi_prior.hpp"

using namespace mstm;

namespace {

double max_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

double min_eig(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues()(0);
}

// Random symmetric matrix, entries N(0,1).
Eigen::MatrixXd random_sym(Eigen::Index n, Rng& rng) {
  const Eigen::MatrixXd m = fixtures::random_normal(n, n, rng);
  return (m + m.transpose()) / 2.0;
}

// A PD candidate near `center`: a random symmetric step of random size,
// retried until positive definite.
Eigen::MatrixXd pd_candidate(const Eigen::MatrixXd& center, Rng& rng) {
  std::uniform_real_distribution<double> logscale(-6.0, 0.5);
  for (;;) {
    const double step = std::pow(10.0, logscale(rng));
    Eigen::MatrixXd c = center + step * random_sym(center.rows(), rng);
    c = (c + c.transpose()) / 2.0;
    if (min_eig(c) > 1e-9) return c;
  }
}

}  // namespace

TEST_CASE("car_precision: hand cases") {
  Eigen::MatrixXd A2(2, 2);
  A2 << 0, 1, 1, 0;
  Eigen::MatrixXd Q2(2, 2);
  Q2 << 1, -1, -1, 1;
  CHECK(car_precision(A2) == Q2);
  CHECK(car_precision(Eigen::MatrixXd::Zero(3, 3)) == Eigen::MatrixXd::Zero(3, 3));

  const auto g = fixtures::lattice(2, 2);  // a 4-cycle
  const Eigen::MatrixXd Q4 = car_precision(g.adjacency());
  const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Q4).eigenvalues();
  CHECK(std::abs(ev(0)) <= 1e-12);
  CHECK(ev(1) == doctest::Approx(2.0));
  CHECK(ev(2) == doctest::Approx(2.0));
  CHECK(ev(3) == doctest::Approx(4.0));
}

TEST_CASE("car_precision: connected graphs annihilate the ones vector exactly") {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const auto g = fixtures::random_graph(5 + rep, 0.3, rng);
    const Eigen::MatrixXd Q = car_precision(g.adjacency());
    CHECK((Q * Eigen::VectorXd::Ones(Q.rows())).isZero(0.0));
    CHECK(Q == Q.transpose());
  }
}

TEST_CASE("best_positive_approximant: hand cases") {
  Eigen::MatrixXd d(2, 2);
  d << 2, 0, 0, -1;
  Eigen::MatrixXd e(2, 2);
  e << 2, 0, 0, 0;
  CHECK(max_diff(best_positive_approximant(d), e) <= 1e-15);

  Eigen::MatrixXd r(2, 2);
  r << 1, 2, 0, 1;
  CHECK(max_diff(best_positive_approximant(r), Eigen::MatrixXd::Ones(2, 2)) <= 1e-12);

  Rng rng(2);
  const Eigen::MatrixXd spd = fixtures::random_spd(5, rng);
  CHECK(max_diff(best_positive_approximant(spd), spd) <= 1e-12);
  CHECK_THROWS_AS(best_positive_approximant(Eigen::MatrixXd::Ones(2, 3)), ValidationError);
}

TEST_CASE("best_positive_approximant: nearest PSD matrix against random PSD candidates") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Eigen::MatrixXd R = fixtures::random_normal(4, 4, rng);
    const Eigen::MatrixXd B = (R + R.transpose()) / 2.0;
    const Eigen::MatrixXd A = best_positive_approximant(R);
    CHECK(min_eig(A) >= -1e-12);
    const double best = (B - A).squaredNorm();
    for (int k = 0; k < 500; ++k) {
      const Eigen::MatrixXd F = fixtures::random_normal(4, 4, rng);
      Eigen::MatrixXd C = A + 0.1 * F * F.transpose();
      if (k % 2 == 0) C = F * F.transpose();
      CHECK((B - C).squaredNorm() >= best - 1e-12);
    }
  }
}

TEST_CASE("frobenius_objective: hand cases") {
  Rng rng(4);
  const Eigen::MatrixXd S = fixtures::random_orthonormal(5, 2, rng);
  CHECK(frobenius_objective(S * S.transpose(), S, Eigen::MatrixXd::Identity(2, 2), true) <= 1e-28);
  CHECK(frobenius_objective(S * S.transpose(), S, Eigen::MatrixXd::Identity(2, 2), false) <= 1e-28);

  Eigen::MatrixXd e1 = Eigen::MatrixXd::Zero(2, 1);
  e1(0) = 1.0;
  CHECK(frobenius_objective(Eigen::MatrixXd::Identity(2, 2), e1, Eigen::MatrixXd::Ones(1, 1),
                            true) == doctest::Approx(1.0));
  CHECK_THROWS_AS(frobenius_objective(Eigen::MatrixXd::Identity(2, 2), e1,
                                      Eigen::MatrixXd::Zero(1, 1), true),
                  ValidationError);
}

TEST_CASE("kstar: complete basis reproduces P exactly") {
  Rng rng(5);
  const Eigen::MatrixXd S = fixtures::random_orthonormal(4, 4, rng);
  const Eigen::MatrixXd P = fixtures::random_spd(4, rng);
  const Eigen::MatrixXd K = kstar(S, P);
  CHECK(max_diff(K, (S.transpose() * P * S).inverse()) <= 1e-10);
  CHECK(frobenius_objective(P, S, K, true) <= 1e-20);
}

TEST_CASE("kstar: random-search oracle and the objective-difference identity") {
  Rng rng(6);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::MatrixXd S = fixtures::random_orthonormal(6, 2, rng);
    const Eigen::MatrixXd P = fixtures::random_spd(6, rng, 0.1, 3.0);
    const Eigen::MatrixXd K = kstar(S, P);
    const double best = frobenius_objective(P, S, K, true);
    const Eigen::MatrixXd mean = S.transpose() * P * S;
    int beaten = 0;
    for (int k = 0; k < 10000; ++k) {
      const Eigen::MatrixXd C = pd_candidate(K, rng);
      const double obj = frobenius_objective(P, S, C, true);
      if (obj < best - 1e-8) ++beaten;
      if (k < 50) {
        // objective(C) - objective(K*) = ||C^-1 - mean||^2 - ||K*^-1 - mean||^2
        const double lhs = obj - best;
        const double rhs =
            (C.inverse() - mean).squaredNorm() - (K.inverse() - mean).squaredNorm();
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6).scale(1.0));
      }
    }
    CHECK(beaten == 0);
  }
}

TEST_CASE("kstar: direct form on an indefinite target") {
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const Eigen::MatrixXd S = fixtures::random_orthonormal(6, 3, rng);
    const Eigen::MatrixXd P = random_sym(6, rng);
    PriorOptions opt;
    opt.form = PriorForm::direct;
    std::vector<LiftEvent> log;
    const Eigen::MatrixXd K = kstar(S, P, opt, &log);
    CHECK(min_eig(K) >= -1e-12);
    const double best = frobenius_objective(P, S, K, false);
    const Eigen::MatrixXd center = K + 1e-3 * Eigen::MatrixXd::Identity(3, 3);
    int beaten = 0;
    for (int k = 0; k < 10000; ++k) {
      if (frobenius_objective(P, S, pd_candidate(center, rng), false) < best - 1e-8) ++beaten;
    }
    CHECK(beaten == 0);
  }
}

TEST_CASE("kstar_pooled: reduction, duplication and random search") {
  Rng rng(8);
  const Eigen::MatrixXd S1 = fixtures::random_orthonormal(6, 2, rng);
  const Eigen::MatrixXd P1 = fixtures::random_spd(6, rng);
  std::vector<Eigen::MatrixXd> one{S1}, oneP{P1};
  CHECK(kstar_pooled(one, oneP) == kstar(S1, P1));
  std::vector<Eigen::MatrixXd> two{S1, S1}, twoP{P1, P1};
  CHECK(max_diff(kstar_pooled(two, twoP), kstar(S1, P1)) <= 1e-12);

  for (int rep = 0; rep < 3; ++rep) {
    const int K = 2 + rep % 2;
    std::vector<Eigen::MatrixXd> S, P;
    for (int k = 0; k < K; ++k) {
      S.push_back(fixtures::random_orthonormal(5 + k, 3, rng));
      P.push_back(fixtures::random_spd(5 + k, rng, 0.2, 2.0));
    }
    const Eigen::MatrixXd C = kstar_pooled(S, P);
    auto total = [&](const Eigen::MatrixXd& c) {
      double s = 0.0;
      for (int k = 0; k < K; ++k) s += frobenius_objective(P[k], S[k], c, true);
      return s;
    };
    const double best = total(C);
    int beaten = 0;
    for (int k = 0; k < 10000; ++k) {
      if (total(pd_candidate(C, rng)) < best - 1e-8) ++beaten;
    }
    CHECK(beaten == 0);
  }

  std::vector<Eigen::MatrixXd> bad{S1, fixtures::random_orthonormal(6, 3, rng)};
  CHECK_THROWS_WITH_AS(kstar_pooled(bad, twoP), doctest::Contains("mismatched basis rank"),
                       ValidationError);
}

TEST_CASE("kstar: intercept-design MI basis with the CAR target is already PD") {
  Rng rng(9);
  for (int rep = 0; rep < 10; ++rep) {
    const auto g = fixtures::random_graph(12 + rep, 0.2, rng);
    fixtures::DesignSpec spec;
    spec.horizon = 1;
    spec.covariates = 1 + rep % 3;
    auto m = fixtures::build_model(g, fixtures::random_design(g, spec, rng), 4);
    const Eigen::MatrixXd& S = m.basis.at(1).S;
    const Eigen::MatrixXd Q = car_precision(g.adjacency());
    const Eigen::MatrixXd SQS = S.transpose() * Q * S;
    CHECK(min_eig(SQS) > 0.0);
    CHECK(max_diff(best_positive_approximant(SQS), linalg::symmetrize(SQS)) <= 1e-12);
    CHECK(max_diff(m.prior.K[0], SQS.inverse()) <= 1e-9 * SQS.inverse().norm());
    CHECK(m.prior.lift_log.empty());
  }
}

TEST_CASE("wstar: hand cases") {
  Rng rng(10);
  const Eigen::MatrixXd K = fixtures::random_spd(3, rng);
  CHECK(max_diff(wstar(K, fixtures::random_spd(3, rng), Eigen::MatrixXd::Zero(3, 3)), K) <= 1e-15);

  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd Q = fixtures::random_orthonormal(3, 3, rng);
  CHECK(wstar(I, I, Q).cwiseAbs().maxCoeff() <= 1e-12);

  std::vector<LiftEvent> log;
  const Eigen::MatrixXd W = wstar(I, 2.0 * I, I, &log, 5);
  CHECK(W.cwiseAbs().maxCoeff() <= 1e-15);
  REQUIRE(log.size() == 1);
  CHECK(log[0].time == 5);
  CHECK(log[0].matrix == "W");
  CHECK(log[0].action == "psd-lift");
  CHECK(log[0].min_eigenvalue == doctest::Approx(-1.0));

  CHECK_THROWS_AS(wstar(I, I, Eigen::MatrixXd::Identity(2, 2)), ValidationError);
}

TEST_CASE("build_prior: emitted matrices are PSD and lifts are logged") {
  Rng rng(11);
  for (int rep = 0; rep < 6; ++rep) {
    const auto g = fixtures::random_graph(16, 0.15, rng);
    fixtures::DesignSpec spec;
    spec.horizon = 5;
    spec.covariates = 2;
    PriorOptions opt;
    opt.pooled = rep % 2 == 1;
    auto m = fixtures::build_model(g, fixtures::random_design(g, spec, rng), 4, opt);
    int expected_lifts = 0;
    for (int t = 1; t <= 5; ++t) {
      CHECK(min_eig(m.prior.K[t - 1]) >= -1e-10);
      if (t == 1) continue;
      CHECK(min_eig(m.prior.W[t - 1]) >= -1e-10);
      const Eigen::MatrixXd& M = m.basis.at(t).M;
      const Eigen::MatrixXd raw = m.prior.K[t - 1] - M * m.prior.K[t - 2] * M.transpose();
      if (min_eig((raw + raw.transpose()) / 2.0) < kLiftThreshold) ++expected_lifts;
    }
    CHECK(m.prior.lift_count() == expected_lifts);
    if (opt.pooled) CHECK(expected_lifts == 0);
  }
}

TEST_CASE("kstar: singular approximant is regularized and logged") {
  const Eigen::MatrixXd S = Eigen::MatrixXd::Identity(3, 2);
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(3, 3);
  P(0, 0) = 2.0;
  std::vector<LiftEvent> log;
  const Eigen::MatrixXd K = kstar(S, P, {}, &log, 4);
  REQUIRE(log.size() == 1);
  CHECK(log[0].action == "regularize");
  CHECK(log[0].time == 4);
  CHECK(log[0].epsilon == doctest::Approx(1e-8 * 2.0 / 2.0));
  CHECK(K.allFinite());
  CHECK(K(0, 0) == doctest::Approx(1.0 / (2.0 + 1e-8)));

  PriorOptions opt;
  opt.epsilon = 0.5;
  log.clear();
  const Eigen::MatrixXd K2 = kstar(S, P, opt, &log);
  CHECK(K2(1, 1) == doctest::Approx(2.0));
  CHECK(log.at(0).epsilon == 0.5);
}

TEST_CASE("regularized_scale") {
  Rng rng(12);
  const Eigen::MatrixXd pd = fixtures::random_spd(4, rng);
  const auto a = regularized_scale(pd, pd);
  CHECK(a.ridge == 0.0);
  CHECK(max_diff(a.value, pd) <= 1e-15);
  CHECK(max_diff(a.inverse * pd, Eigen::MatrixXd::Identity(4, 4)) <= 1e-10);

  const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(4, 4);
  const auto b = regularized_scale(zero, pd);
  CHECK(b.ridge == doctest::Approx(1e-8 * pd.trace() / 4.0));
  CHECK(max_diff(b.value, b.ridge * Eigen::MatrixXd::Identity(4, 4)) <= 1e-20);
  CHECK(b.inverse.allFinite());
}

TEST_CASE("parse_prior_form") {
  CHECK(parse_prior_form("inverted") == PriorForm::inverted);
  CHECK(parse_prior_form("direct") == PriorForm::direct);
  CHECK_THROWS_AS(parse_prior_form("nope"), ValidationError);
}
