#include "mstm/gibbs.hpp"

#include <cmath>
#include <map>

#include <spdlog/spdlog.h>

#include "mstm/errors.hpp"

namespace mstm {

namespace {

bool all_finite(const std::vector<Eigen::VectorXd>& vs) {
  for (const auto& v : vs) {
    if (!v.allFinite()) return false;
  }
  return true;
}

Eigen::VectorXd expand(const Eigen::VectorXd& per_location,
                       const std::vector<int>& slot) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(slot.size()));
  for (std::size_t i = 0; i < slot.size(); ++i) {
    out(static_cast<Eigen::Index>(i)) = per_location(slot[i]);
  }
  return out;
}

// Draw from N(Lambda^{-1} b, Lambda^{-1}) given the Cholesky factor of Lambda.
Eigen::VectorXd draw_canonical(const Eigen::LLT<Eigen::MatrixXd>& precision,
                               const Eigen::VectorXd& b, Rng& rng) {
  const Eigen::VectorXd mean = precision.solve(b);
  const Eigen::VectorXd e = linalg::standard_normal(b.size(), rng);
  return mean + precision.matrixU().solve(e);
}

}  // namespace

// ---------------------------------------------------------------------------

Eigen::VectorXd Hyperparams::beta_mean(Eigen::Index p) const {
  if (mu_beta.size() == 0) return Eigen::VectorXd::Zero(p);
  if (mu_beta.size() != p) {
    throw ValidationError("mu_beta has " + std::to_string(mu_beta.size()) +
                          " entries, expected " + std::to_string(p));
  }
  return mu_beta;
}

void Hyperparams::validate(Eigen::Index p) const {
  beta_mean(p);
  if (!(sigma_beta2 > 0.0) || !std::isfinite(sigma_beta2)) {
    throw ValidationError("sigma_beta2 must be positive and finite");
  }
  for (double x : {alpha_xi, beta_xi, alpha_k, beta_k}) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw ValidationError("inverse-gamma hyperparameters must be positive");
    }
  }
}

bool ModelState::finite() const {
  if (!std::isfinite(sigma_k2) || !(sigma_k2 > 0.0)) return false;
  for (double s : sigma_xi2) {
    if (!std::isfinite(s) || !(s > 0.0)) return false;
  }
  return all_finite(eta) && all_finite(xi) && all_finite(beta);
}

void SamplerOptions::validate() const {
  if (iterations < 1) throw ValidationError("iterations must be at least 1");
  if (burn_in < 0) throw ValidationError("burn_in must be non-negative");
  if (burn_in >= iterations) {
    throw ValidationError("burn_in (" + std::to_string(burn_in) +
                          ") must be smaller than iterations (" +
                          std::to_string(iterations) + ")");
  }
  if (thin < 1) throw ValidationError("thin must be at least 1");
}

// ---------------------------------------------------------------------------

double inverse_gamma(double shape, double rate, Rng& rng) {
  if (!(shape > 0.0) || !(rate > 0.0)) {
    throw ValidationError("inverse_gamma: shape and rate must be positive");
  }
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return 1.0 / g(rng);
}

Eigen::VectorXd sample_xi_grouped(const Eigen::VectorXd& residual,
                                  const Eigen::VectorXd& v,
                                  const std::vector<int>& slot,
                                  Eigen::Index locations, double sigma_xi2,
                                  Rng& rng) {
  if (sigma_xi2 <= 0.0) return Eigen::VectorXd::Zero(locations);
  Eigen::VectorXd precision = Eigen::VectorXd::Constant(locations, 1.0 / sigma_xi2);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(locations);
  for (std::size_t i = 0; i < slot.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    precision(slot[i]) += 1.0 / v(k);
    score(slot[i]) += residual(k) / v(k);
  }
  Eigen::VectorXd out(locations);
  for (Eigen::Index j = 0; j < locations; ++j) {
    std::normal_distribution<double> nd(score(j) / precision(j),
                                        std::sqrt(1.0 / precision(j)));
    out(j) = nd(rng);
  }
  return out;
}

Eigen::VectorXd sample_xi(const Eigen::VectorXd& z, const Eigen::MatrixXd& X,
                          const Eigen::VectorXd& beta, const Eigen::MatrixXd& S,
                          const Eigen::VectorXd& eta, const Eigen::VectorXd& v,
                          double sigma_xi2, Rng& rng) {
  const Eigen::VectorXd residual = z - X * beta - S * eta;
  std::vector<int> slot(static_cast<std::size_t>(z.size()));
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] = static_cast<int>(i);
  return sample_xi_grouped(residual, v, slot, z.size(), sigma_xi2, rng);
}

GaussianParams beta_conditional(const Eigen::VectorXd& z,
                                const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& xi,
                                const Eigen::MatrixXd& S,
                                const Eigen::VectorXd& eta,
                                const Eigen::VectorXd& v,
                                const Hyperparams& hyper) {
  const Eigen::Index p = X.cols();
  const Eigen::MatrixXd XtVinv = X.transpose() * v.cwiseInverse().asDiagonal();
  Eigen::MatrixXd precision = XtVinv * X;
  precision.diagonal().array() += 1.0 / hyper.sigma_beta2;
  const Eigen::VectorXd b =
      XtVinv * (z - xi - S * eta) + hyper.beta_mean(p) / hyper.sigma_beta2;
  Eigen::LLT<Eigen::MatrixXd> llt(linalg::symmetrize(precision));
  GaussianParams out;
  out.cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
  out.mean = llt.solve(b);
  return out;
}

Eigen::VectorXd sample_beta(const Eigen::VectorXd& z, const Eigen::MatrixXd& X,
                            const Eigen::VectorXd& xi, const Eigen::MatrixXd& S,
                            const Eigen::VectorXd& eta, const Eigen::VectorXd& v,
                            const Hyperparams& hyper, Rng& rng) {
  const Eigen::Index p = X.cols();
  if (hyper.sigma_beta2 <= 0.0) return hyper.beta_mean(p);
  const Eigen::MatrixXd XtVinv = X.transpose() * v.cwiseInverse().asDiagonal();
  Eigen::MatrixXd precision = XtVinv * X;
  precision.diagonal().array() += 1.0 / hyper.sigma_beta2;
  const Eigen::VectorXd b =
      XtVinv * (z - xi - S * eta) + hyper.beta_mean(p) / hyper.sigma_beta2;
  linalg::note_factorization(p);
  Eigen::LLT<Eigen::MatrixXd> llt(linalg::symmetrize(precision));
  return draw_canonical(llt, b, rng);
}

InverseGammaParams sigma_k_conditional(const std::vector<Eigen::VectorXd>& eta,
                                       const Eigen::MatrixXd& K1_inv,
                                       const std::vector<Eigen::MatrixXd>& W_inv,
                                       const std::vector<Eigen::MatrixXd>& M,
                                       const Hyperparams& hyper) {
  const std::size_t T = eta.size();
  if (T == 0 || W_inv.size() < T || M.size() < T) {
    throw ValidationError("sigma_k_conditional: inputs do not cover every t");
  }
  const double r = static_cast<double>(eta[0].size());
  double quad = eta[0].dot(K1_inv * eta[0]);
  for (std::size_t k = 1; k < T; ++k) {
    const Eigen::VectorXd u = eta[k] - M[k] * eta[k - 1];
    quad += u.dot(W_inv[k] * u);
  }
  if (!std::isfinite(quad)) {
    throw StateError("sigma_k_conditional: non-finite quadratic form");
  }
  return {static_cast<double>(T) * r / 2.0 + hyper.alpha_k,
          hyper.beta_k + quad / 2.0};
}

double sample_sigma_k(const std::vector<Eigen::VectorXd>& eta,
                      const Eigen::MatrixXd& K1_inv,
                      const std::vector<Eigen::MatrixXd>& W_inv,
                      const std::vector<Eigen::MatrixXd>& M,
                      const Hyperparams& hyper, Rng& rng) {
  const auto ig = sigma_k_conditional(eta, K1_inv, W_inv, M, hyper);
  return inverse_gamma(ig.shape, ig.rate, rng);
}

InverseGammaParams sigma_xi_conditional(const Eigen::VectorXd& xi,
                                        const Hyperparams& hyper) {
  return {static_cast<double>(xi.size()) / 2.0 + hyper.alpha_xi,
          hyper.beta_xi + xi.squaredNorm() / 2.0};
}

double sample_sigma_xi(const Eigen::VectorXd& xi, const Hyperparams& hyper,
                       Rng& rng) {
  const auto ig = sigma_xi_conditional(xi, hyper);
  return inverse_gamma(ig.shape, ig.rate, rng);
}

// ---------------------------------------------------------------------------

FitProblem::FitProblem(const ObservationSet& data, const Design& design,
                       const BasisSystem& basis, const PriorStructure& prior,
                       Hyperparams hyper)
    : hyper_(std::move(hyper)) {
  const int T = design.horizon();
  if (basis.horizon() != T || prior.horizon() != T) {
    throw ValidationError("design, basis and prior cover different horizons");
  }
  if (data.horizon() > T) {
    throw ValidationError("observations extend past the design horizon");
  }
  rank_ = basis.rank;
  p_ = design.covariates();
  hyper_.validate(p_);

  std::vector<std::vector<const Observation*>> per_time(T);
  for (const auto& o : data.rows()) per_time.at(o.time - 1).push_back(&o);

  times_.resize(T);
  for (int t = 1; t <= T; ++t) {
    auto& td = times_[t - 1];
    td.time = t;
    const auto& slice = design.at(t);
    const auto& S = basis.at(t).S;
    auto& obs = per_time[t - 1];
    std::map<Location, int> slots;
    for (const auto* o : obs) slots.emplace(o->location(), 0);
    for (auto& [loc, k] : slots) {
      const auto row = slice.find(loc.variable, loc.unit);
      if (!row) {
        throw ValidationError("observation at variable " +
                              std::to_string(loc.variable) + ", t = " +
                              std::to_string(t) + ", unit index " +
                              std::to_string(loc.unit) +
                              " has no prediction location");
      }
      k = static_cast<int>(td.locations.size());
      td.locations.push_back(loc);
      td.design_row.push_back(*row);
    }
    const auto n = static_cast<Eigen::Index>(obs.size());
    td.z.resize(n);
    td.v.resize(n);
    td.X.resize(n, p_);
    Eigen::MatrixXd So(n, rank_);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto* o = obs[static_cast<std::size_t>(i)];
      const int k = slots.at(o->location());
      td.slot.push_back(k);
      const auto row = static_cast<Eigen::Index>(td.design_row[k]);
      td.z(i) = o->z;
      td.v(i) = o->v;
      td.X.row(i) = slice.X.row(row);
      So.row(i) = S.row(row);
    }
    td.block = ObservationBlock(std::move(So), td.v);
    blocks_.push_back(td.block);

    if (numerical_rank(td.X) < p_) {
      throw ValidationError("beta_t is not identified at t = " +
                            std::to_string(t) +
                            ": observed covariate rows have rank below " +
                            std::to_string(p_));
    }
    Eigen::MatrixXd XtVinv = td.X.transpose() * td.block.inv_v.asDiagonal();
    Eigen::MatrixXd precision = XtVinv * td.X;
    precision.diagonal().array() += 1.0 / hyper_.sigma_beta2;
    beta_precision_.emplace_back(linalg::symmetrize(precision));
    beta_weights_.push_back(std::move(XtVinv));
  }

  k1_ = regularized_scale(prior.K[0], prior.K[0]);
  if (k1_.ridge > 0.0) {
    spdlog::info("K*_1 is singular; using ridge {}", k1_.ridge);
  }
  w_.resize(T);
  W_inv_.resize(T);
  M_.resize(T);
  M_[0] = Eigen::MatrixXd::Identity(rank_, rank_);
  W_inv_[0] = Eigen::MatrixXd::Zero(rank_, rank_);
  int ridged = 0;
  for (int t = 2; t <= T; ++t) {
    w_[t - 1] = regularized_scale(prior.W[t - 1], prior.K[t - 1]);
    if (w_[t - 1].ridge > 0.0) ++ridged;
    W_inv_[t - 1] = w_[t - 1].inverse;
    M_[t - 1] = basis.at(t).M;
  }
  if (ridged > 0) {
    spdlog::info("{} of {} W*_t are singular and carry a ridge", ridged, T - 1);
  }
}

ModelState FitProblem::initial_state(Rng& rng) const {
  const int T = horizon();
  ModelState s;
  s.sigma_k2 = 1.0;
  s.sigma_xi2.assign(static_cast<std::size_t>(T), 1.0);
  s.eta.resize(T);
  s.xi.resize(T);
  s.beta.resize(T);
  for (int k = 0; k < T; ++k) {
    s.beta[k] = Eigen::VectorXd::Zero(p_);
    s.xi[k] = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(times_[k].locations.size()));
    if (k == 0) {
      s.eta[k] = linalg::draw_normal(Eigen::VectorXd::Zero(rank_), k1_.value, rng);
    } else {
      s.eta[k] = linalg::draw_normal(M_[k] * s.eta[k - 1], w_[k].value, rng);
    }
  }
  return s;
}

void FitProblem::sweep(ModelState& s, Rng& rng) const {
  const int T = horizon();

  // eta | rest
  std::vector<Eigen::VectorXd> z_tilde(T);
  std::vector<Eigen::MatrixXd> W(T);
  for (int k = 0; k < T; ++k) {
    const auto& td = times_[k];
    z_tilde[k] = td.z - td.X * s.beta[k] - expand(s.xi[k], td.slot);
    W[k] = k == 0 ? Eigen::MatrixXd() : Eigen::MatrixXd(s.sigma_k2 * w_[k].value);
  }
  W[0] = Eigen::MatrixXd::Zero(rank_, rank_);
  const Eigen::MatrixXd K1 = s.sigma_k2 * k1_.value;
  const auto filtered = kalman_filter(z_tilde, blocks_, M_, K1, W);
  s.eta = backward_sample(filtered, M_, rng);

  // xi_t | rest
  for (int k = 0; k < T; ++k) {
    const auto& td = times_[k];
    const Eigen::VectorXd residual =
        td.z - td.X * s.beta[k] - blocks_[k].S * s.eta[k];
    s.xi[k] = sample_xi_grouped(residual, td.v, td.slot,
                                static_cast<Eigen::Index>(td.locations.size()),
                                s.sigma_xi2[k], rng);
  }

  // beta_t | rest
  const Eigen::VectorXd prior_shift = hyper_.beta_mean(p_) / hyper_.sigma_beta2;
  for (int k = 0; k < T; ++k) {
    const auto& td = times_[k];
    const Eigen::VectorXd residual =
        td.z - expand(s.xi[k], td.slot) - blocks_[k].S * s.eta[k];
    linalg::note_factorization(p_);
    s.beta[k] = draw_canonical(beta_precision_[k],
                               beta_weights_[k] * residual + prior_shift, rng);
  }

  // sigma_K^2 | rest
  s.sigma_k2 = sample_sigma_k(s.eta, k1_.inverse, W_inv_, M_, hyper_, rng);

  // sigma_xi,t^2 | rest
  for (int k = 0; k < T; ++k) {
    s.sigma_xi2[k] = sample_sigma_xi(s.xi[k], hyper_, rng);
  }
}

// ---------------------------------------------------------------------------

void gibbs_run(const FitProblem& problem, const SamplerOptions& options,
               const DrawSink& sink) {
  options.validate();
  Rng rng(options.seed);
  ModelState state = problem.initial_state(rng);
  for (int it = 1; it <= options.iterations; ++it) {
    try {
      problem.sweep(state, rng);
    } catch (const StateError& e) {
      throw StateError("iteration " + std::to_string(it) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw StateError("iteration " + std::to_string(it) + ": " + e.what());
    }
    if (!state.finite()) {
      throw StateError("non-finite sampler state at iteration " +
                       std::to_string(it));
    }
    if (options.keeps(it) && sink) sink(it, state);
  }
}

PosteriorChain gibbs_run(const FitProblem& problem,
                         const SamplerOptions& options) {
  PosteriorChain chain;
  chain.options = options;
  options.validate();
  chain.draws.reserve(static_cast<std::size_t>(options.stored()));
  gibbs_run(problem, options,
            [&](int, const ModelState& s) { chain.draws.push_back(s); });
  return chain;
}

PosteriorChain gibbs_run(const ObservationSet& data, const Design& design,
                         const BasisSystem& basis, const PriorStructure& prior,
                         const Hyperparams& hyper,
                         const SamplerOptions& options) {
  const FitProblem problem(data, design, basis, prior, hyper);
  return gibbs_run(problem, options);
}

}  // namespace mstm
