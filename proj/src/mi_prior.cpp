#include "mstm/mi_prior.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "mstm/errors.hpp"
#include "mstm/linalg.hpp"

namespace mstm {

Eigen::MatrixXd car_precision(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd Q = -A;
  Q.diagonal() += A.rowwise().sum();
  return Q;
}

Eigen::MatrixXd car_precision(const ArealGraph& graph, const TimeSlice& slice) {
  return car_precision(stacked_adjacency(graph, slice));
}

Eigen::MatrixXd best_positive_approximant(const Eigen::MatrixXd& R) {
  if (R.rows() != R.cols()) {
    throw ValidationError("best_positive_approximant: matrix is not square");
  }
  const Eigen::MatrixXd B = linalg::symmetrize(R);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  if (es.eigenvalues()(0) >= 0.0) return B;
  const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
  return linalg::symmetrize(es.eigenvectors() * clipped.asDiagonal() *
                            es.eigenvectors().transpose());
}

double frobenius_objective(const Eigen::MatrixXd& P, const Eigen::MatrixXd& S,
                           const Eigen::MatrixXd& C, bool inverted) {
  if (!inverted) return (P - S * C * S.transpose()).squaredNorm();
  Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
  if (!lu.isInvertible()) {
    throw ValidationError("frobenius_objective: C is singular");
  }
  return (P - S * lu.inverse() * S.transpose()).squaredNorm();
}

PriorForm parse_prior_form(std::string_view name) {
  if (name == "inverted") return PriorForm::inverted;
  if (name == "direct") return PriorForm::direct;
  throw ValidationError("unknown prior form '" + std::string(name) +
                        "' (expected inverted or direct)");
}

std::string_view to_string(PriorForm form) {
  return form == PriorForm::direct ? "direct" : "inverted";
}

namespace {

Eigen::MatrixXd minimizer(const Eigen::MatrixXd& mean, const PriorOptions& opt,
                          std::vector<LiftEvent>* log, int time) {
  const Eigen::Index r = mean.rows();
  const Eigen::MatrixXd B = linalg::symmetrize(mean);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd lambda = es.eigenvalues();
  const Eigen::MatrixXd& V = es.eigenvectors();
  const double lo = lambda(0);
  const double hi = lambda(r - 1);
  if (lo < 0.0 && log) {
    log->push_back({time, "K", "psd-lift", lo, 0.0});
  }
  const Eigen::MatrixXd approx =
      lo >= 0.0 ? B
                : linalg::symmetrize(V * lambda.cwiseMax(0.0).asDiagonal() *
                                     V.transpose());
  if (opt.form == PriorForm::direct) return approx;

  const Eigen::VectorXd clipped = lambda.cwiseMax(0.0);
  const bool singular = clipped(0) <= 1e-12 * std::max(hi, 0.0) || hi <= 0.0;
  if (!singular) {
    return linalg::symmetrize(V * clipped.cwiseInverse().asDiagonal() *
                              V.transpose());
  }
  double eps = opt.epsilon.value_or(1e-8 * clipped.sum() / static_cast<double>(r));
  if (!(eps > 0.0)) eps = 1e-8;
  if (log) log->push_back({time, "K", "regularize", lo, eps});
  spdlog::warn("K* at t = {}: singular approximant, adding ridge {}", time, eps);
  const Eigen::VectorXd inv = (clipped.array() + eps).inverse();
  return linalg::symmetrize(V * inv.asDiagonal() * V.transpose());
}

}  // namespace

namespace {

Eigen::MatrixXd pooled_at(std::span<const Eigen::MatrixXd> S,
                          std::span<const Eigen::MatrixXd> P,
                          const PriorOptions& opt, std::vector<LiftEvent>* log,
                          int time) {
  if (S.empty() || S.size() != P.size()) {
    throw ValidationError("kstar_pooled: need matching, non-empty S and P");
  }
  const Eigen::Index r = S.front().cols();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(r, r);
  for (std::size_t k = 0; k < S.size(); ++k) {
    if (S[k].cols() != r) {
      throw ValidationError("kstar_pooled: mismatched basis rank at k = " +
                            std::to_string(k + 1));
    }
    if (P[k].rows() != S[k].rows() || P[k].cols() != S[k].rows()) {
      throw ValidationError("kstar_pooled: target and basis not conformable");
    }
    sum += S[k].transpose() * P[k] * S[k];
  }
  const Eigen::MatrixXd mean = sum / static_cast<double>(S.size());
  return minimizer(mean, opt, log, time);
}

}  // namespace

Eigen::MatrixXd kstar_pooled(std::span<const Eigen::MatrixXd> S,
                             std::span<const Eigen::MatrixXd> P,
                             const PriorOptions& opt,
                             std::vector<LiftEvent>* log) {
  return pooled_at(S, P, opt, log, S.size() == 1 ? 1 : 0);
}

Eigen::MatrixXd kstar(const Eigen::MatrixXd& S, const Eigen::MatrixXd& P,
                      const PriorOptions& opt, std::vector<LiftEvent>* log,
                      int time) {
  return pooled_at(std::span(&S, 1), std::span(&P, 1), opt, log, time);
}

Eigen::MatrixXd wstar(const Eigen::MatrixXd& K, const Eigen::MatrixXd& K_prev,
                      const Eigen::MatrixXd& M, std::vector<LiftEvent>* log,
                      int time) {
  if (K.rows() != K_prev.rows() || M.rows() != K.rows() || M.cols() != K.rows()) {
    throw ValidationError("wstar: inputs are not conformable");
  }
  const Eigen::MatrixXd raw = linalg::symmetrize(K - M * K_prev * M.transpose());
  const double lo = linalg::min_eigenvalue(raw);
  if (lo < kLiftThreshold) {
    if (log) log->push_back({time, "W", "psd-lift", lo, 0.0});
    return best_positive_approximant(raw);
  }
  return raw;
}

int PriorStructure::lift_count() const {
  return static_cast<int>(std::count_if(
      lift_log.begin(), lift_log.end(),
      [](const LiftEvent& e) { return e.action == "psd-lift"; }));
}

PriorStructure build_prior(const BasisSystem& basis,
                           std::span<const Eigen::MatrixXd> targets,
                           const PriorOptions& opt) {
  const int T = basis.horizon();
  if (static_cast<int>(targets.size()) != T) {
    throw ValidationError("build_prior: need one target precision per time");
  }
  PriorStructure prior;
  prior.options = opt;
  prior.K.resize(T);
  prior.W.resize(T);
  if (opt.pooled) {
    std::vector<Eigen::MatrixXd> S;
    for (const auto& tb : basis.times) S.push_back(tb.S);
    const auto K = kstar_pooled(S, targets, opt, &prior.lift_log);
    std::fill(prior.K.begin(), prior.K.end(), K);
  } else {
    for (int t = 1; t <= T; ++t) {
      prior.K[t - 1] =
          kstar(basis.at(t).S, targets[t - 1], opt, &prior.lift_log, t);
    }
  }
  for (int t = 2; t <= T; ++t) {
    prior.W[t - 1] = wstar(prior.K[t - 1], prior.K[t - 2], basis.at(t).M,
                           &prior.lift_log, t);
  }
  return prior;
}

std::vector<Eigen::MatrixXd> car_targets(const Design& design,
                                         const ArealGraph& graph) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(design.slices().size());
  for (const auto& s : design.slices()) out.push_back(car_precision(graph, s));
  return out;
}

ScaleMatrix regularized_scale(const Eigen::MatrixXd& m,
                              const Eigen::MatrixXd& reference) {
  const Eigen::Index r = m.rows();
  const double level =
      std::max(reference.trace(), 0.0) / static_cast<double>(std::max<Eigen::Index>(r, 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(linalg::symmetrize(m));
  ScaleMatrix out;
  Eigen::VectorXd lambda = es.eigenvalues();
  if (!(lambda(0) > 1e-10 * level) || level <= 0.0) {
    out.ridge = level > 0.0 ? 1e-8 * level : 1e-8;
    lambda = lambda.cwiseMax(0.0).array() + out.ridge;
  }
  const auto& V = es.eigenvectors();
  out.value = out.ridge > 0.0
                  ? linalg::symmetrize(V * lambda.asDiagonal() * V.transpose())
                  : linalg::symmetrize(m);
  out.inverse =
      linalg::symmetrize(V * lambda.cwiseInverse().asDiagonal() * V.transpose());
  return out;
}

}  // namespace mstm
