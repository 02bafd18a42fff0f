#include "mstm/commands.hpp"

#include <chrono>
#include <exception>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "mstm/chain_io.hpp"
#include "mstm/csv.hpp"
#include "mstm/errors.hpp"
#include "mstm/gibbs.hpp"
#include "mstm/linalg.hpp"
#include "mstm/predict.hpp"
#include "mstm/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mstm {

namespace {

void check_ranks(const Workspace& ws) {
  const int p = ws.design.covariates();
  const int r = ws.config.study.rank;
  std::string bad;
  int max_rank = -1;
  for (const auto& s : ws.design.slices()) {
    const int free = static_cast<int>(s.rows.size()) - p;
    max_rank = max_rank < 0 ? free : std::min(max_rank, free);
    if (r > free) bad += (bad.empty() ? "" : ", ") + std::to_string(s.time);
  }
  if (!bad.empty()) {
    throw ValidationError("basis rank " + std::to_string(r) +
                          " is not admissible at t = " + bad +
                          "; max admissible rank is " + std::to_string(max_rank));
  }
}

json settings_json(const RunConfig& cfg, std::optional<int> survey) {
  json s;
  s["rank"] = cfg.study.rank;
  s["variables"] = cfg.study.variables;
  std::vector<std::string> windows, transforms;
  for (const auto& w : cfg.study.windows) {
    windows.push_back(std::to_string(w.first) + "-" + std::to_string(w.last));
  }
  for (const auto& t : cfg.study.transforms) transforms.emplace_back(to_string(t.kind));
  s["windows"] = windows;
  s["transforms"] = transforms;
  s["propagator"] = std::string(to_string(cfg.propagator));
  s["prior_form"] = std::string(to_string(cfg.prior.form));
  s["pooled"] = cfg.prior.pooled;
  if (cfg.prior.epsilon) s["epsilon"] = *cfg.prior.epsilon;
  json h;
  std::vector<double> mu(cfg.hyper.mu_beta.data(),
                         cfg.hyper.mu_beta.data() + cfg.hyper.mu_beta.size());
  h["mu_beta"] = mu;
  h["sigma_beta2"] = cfg.hyper.sigma_beta2;
  h["alpha_xi"] = cfg.hyper.alpha_xi;
  h["beta_xi"] = cfg.hyper.beta_xi;
  h["alpha_k"] = cfg.hyper.alpha_k;
  h["beta_k"] = cfg.hyper.beta_k;
  s["hyper"] = h;
  s["survey"] = survey ? json(*survey) : json("all");
  return s;
}

std::vector<Location> survey_locations(const ObservationSet& obs, int survey,
                                       int variable) {
  std::set<Location> keys;
  for (const auto& o : obs.rows()) {
    if (o.survey == survey && o.variable == variable) keys.insert(o.location());
  }
  return {keys.begin(), keys.end()};
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw MissingInputError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig resolve_config(const CommandOptions& opt) {
  RunConfig cfg = load_config(opt.config);
  if (opt.seed) cfg.sampler.seed = *opt.seed;
  if (opt.output) cfg.paths.output = fs::absolute(*opt.output).lexically_normal();
  if (opt.chains < 1) throw ValidationError("--chains must be at least 1");
  return cfg;
}

Workspace load_workspace(const RunConfig& cfg, LoadSteps steps) {
  Workspace ws;
  ws.config = cfg;
  for (const auto* p : {&cfg.paths.covariates, &cfg.paths.edges}) {
    if (!fs::exists(*p)) throw MissingInputError("input file not found: " + p->string());
  }
  auto units = read_unit_ids(cfg.paths.covariates);
  ws.graph = build_adjacency(cfg.paths.edges, std::move(units));
  ws.design = assemble_design(cfg.paths.covariates, cfg.study, ws.graph);
  if (cfg.study.covariates && *cfg.study.covariates != ws.design.covariates()) {
    throw ValidationError("[design] covariates = " + std::to_string(*cfg.study.covariates) +
                          " but " + cfg.paths.covariates.string() + " has " +
                          std::to_string(ws.design.covariates()));
  }
  cfg.hyper.validate(ws.design.covariates());
  check_ranks(ws);
  if (steps.observations) {
    if (!fs::exists(cfg.paths.observations)) {
      throw MissingInputError("input file not found: " + cfg.paths.observations.string());
    }
    ws.observations = load_observations(cfg.paths.observations, cfg.study, ws.graph);
    check_within(*ws.observations, ws.design, ws.graph);
  }
  if (steps.model) {
    const auto t0 = std::chrono::steady_clock::now();
    ws.basis = build_basis_system(ws.design, ws.graph, cfg.study.rank, cfg.propagator);
    const auto targets = car_targets(ws.design, ws.graph);
    ws.prior = build_prior(*ws.basis, targets, cfg.prior);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("basis and prior built in {:.2f} s ({} PSD lifts)", secs,
                 ws.prior->lift_count());
  }
  return ws;
}

fs::path chain_dir(const fs::path& output, std::optional<int> survey,
                   int chain_index, int chains) {
  std::string name = survey ? "chain_survey_" + std::to_string(*survey) : "chain";
  if (chains > 1) name += "_" + std::to_string(chain_index);
  return output / name;
}

// ---------------------------------------------------------------------------

int cmd_validate(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  json report;
  try {
    const RunConfig cfg = resolve_config(opt);
    const Workspace ws = load_workspace(cfg, {true, false});
    const auto& obs = *ws.observations;
    const int T = ws.design.horizon();
    std::vector<int> per_time, rows;
    for (int t = 1; t <= T; ++t) {
      per_time.push_back(obs.count_at(t));
      rows.push_back(static_cast<int>(ws.design.at(t).rows.size()));
    }
    report["valid"] = true;
    report["units"] = ws.graph.size();
    report["edges"] = ws.graph.edges().size();
    report["variables"] = cfg.study.variables;
    report["horizon"] = T;
    report["covariates"] = ws.design.names();
    report["rank"] = cfg.study.rank;
    report["max_admissible_rank"] = ws.design.min_rows() - ws.design.covariates();
    report["prediction_locations"] = rows;
    report["observations"] = obs.total();
    report["observations_per_time"] = per_time;
    report["surveys"] = obs.surveys();
    err << "config:       " << cfg.source.string() << "\n"
        << "units:        " << ws.graph.size() << " (" << ws.graph.edges().size()
        << " edges)\n"
        << "design:       L = " << cfg.study.variables << ", T = " << T
        << ", p = " << ws.design.covariates() << ", r = " << cfg.study.rank
        << " (max " << ws.design.min_rows() - ws.design.covariates() << ")\n"
        << "observations: " << obs.total() << " in " << obs.surveys().size()
        << " survey(s)\n"
        << "sampler:      " << cfg.sampler.iterations << " iterations, burn-in "
        << cfg.sampler.burn_in << ", thin " << cfg.sampler.thin << ", seed "
        << cfg.sampler.seed << "\n"
        << "valid\n";
    out << report.dump(2) << '\n';
    return 0;
  } catch (const Error& e) {
    report["valid"] = false;
    report["error"] = e.what();
    report["exit_code"] = static_cast<int>(e.code());
    err << "invalid: " << e.what() << '\n';
    out << report.dump(2) << '\n';
    return static_cast<int>(e.code());
  }
}

std::vector<fs::path> cmd_fit(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  const Workspace ws = load_workspace(cfg);
  ObservationSet obs = *ws.observations;
  if (opt.survey) {
    obs = obs.subset(*opt.survey);
    if (obs.total() == 0) {
      throw ValidationError("survey " + std::to_string(*opt.survey) + " has no observations");
    }
  }
  const FitProblem problem(obs, ws.design, *ws.basis, *ws.prior, cfg.hyper);
  const ChainLayout layout = ChainLayout::of(problem, ws.design.names());
  const json extra = settings_json(cfg, opt.survey);

  std::vector<fs::path> dirs;
  for (int c = 0; c < opt.chains; ++c) {
    dirs.push_back(chain_dir(ws.output(), opt.survey, c, opt.chains));
  }
  auto run_one = [&](int c) {
    SamplerOptions so = cfg.sampler;
    so.seed = cfg.sampler.seed + static_cast<std::uint64_t>(c);
    ChainWriter writer(dirs[c], layout, so, ws.graph, extra);
    const auto t0 = std::chrono::steady_clock::now();
    gibbs_run(problem, so, writer.sink());
    writer.finish();
    spdlog::info("chain {} ({} draws) written to {} in {:.1f} s", c, writer.written(),
                 dirs[c].string(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };
  if (opt.chains == 1) {
    run_one(0);
  } else {
    std::vector<std::exception_ptr> errors(opt.chains);
    std::vector<std::thread> threads;
    for (int c = 0; c < opt.chains; ++c) {
      threads.emplace_back([&, c] {
        try {
          run_one(c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return dirs;
}

fs::path cmd_predict(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  const Workspace ws = load_workspace(cfg, {false, true});
  const fs::path dir = opt.chain ? *opt.chain : chain_dir(ws.output(), opt.survey, 0, 1);
  if (!fs::exists(dir)) throw StateError("chain directory not found: " + dir.string());
  const StoredChain sc = read_chain(dir);
  const PredictionContext ctx{sc.chain, sc.layout, *ws.basis, ws.design, cfg.study,
                              sc.chain.options.seed ^ 0x5eedULL};
  const auto surface = posterior_y(ctx);
  const std::string suffix = opt.survey ? "_survey_" + std::to_string(*opt.survey) : "";
  ensure_dir(ws.output());
  const fs::path pred = ws.output() / ("predictions" + suffix + ".csv");
  write_predictions(pred, surface, ws.graph);

  const auto selectors = default_selectors(sc.layout);
  write_trace_csv(ws.output() / ("trace" + suffix + ".csv"), sc.chain, sc.layout,
                  sc.iterations, selectors);
  std::vector<TraceSummary> rows;
  for (const auto& s : selectors) rows.push_back(trace_summary(sc.chain, sc.layout, s));
  write_summary_csv(ws.output() / ("trace_summary" + suffix + ".csv"), rows);
  spdlog::info("{} predictions from {} draws written to {}", surface.points.size(),
               surface.draws, pred.string());
  return pred;
}

fs::path cmd_simulate(const CommandOptions& opt) {
  const RunConfig cfg = resolve_config(opt);
  if (!cfg.truth) throw ValidationError(cfg.source.string() + ": simulate needs a [truth] section");
  const Workspace ws = load_workspace(cfg, {false, true});
  const TruthSpec spec = make_truth_spec(*cfg.truth, ws.graph, ws.design.covariates());
  const std::uint64_t seed = opt.seed.value_or(cfg.truth->seed);
  const auto truth = simulate(ws.design, *ws.basis, *ws.prior, spec, seed);
  write_observations(cfg.paths.observations, truth.observations, cfg.study, ws.graph);
  write_truth(ws.output() / "truth", truth, ws.design, ws.graph);
  spdlog::info("{} observations written to {}", truth.observations.total(),
               cfg.paths.observations.string());
  return cfg.paths.observations;
}

fs::path cmd_rls(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  const Workspace ws = load_workspace(cfg);
  const auto& obs = *ws.observations;
  const auto surveys = obs.surveys();
  if (std::find(surveys.begin(), surveys.end(), 1) == surveys.end()) {
    throw ValidationError("rls needs observations from survey 1");
  }
  const auto keys = survey_locations(obs, 1, 1);

  auto load = [&](std::optional<int> survey) {
    const fs::path dir = chain_dir(ws.output(), survey, 0, 1);
    if (!fs::exists(dir)) throw StateError("chain directory not found: " + dir.string());
    return read_chain(dir);
  };
  const StoredChain full = load(std::nullopt);
  const PredictionContext fctx{full.chain, full.layout, *ws.basis, ws.design, cfg.study,
                               full.chain.options.seed ^ 0x5eedULL};
  KeyedDraws truth{keys, posterior_draws(fctx, keys)};
  KeyedPredictions fhat{keys, truth.draws.colwise().mean().transpose()};

  json result;
  result["locations"] = keys.size();
  result["truth_draws"] = truth.draws.rows();
  result["variable"] = 1;
  json per = json::object();
  for (int m : surveys) {
    const StoredChain single = load(m);
    const PredictionContext sctx{single.chain, single.layout, *ws.basis, ws.design,
                                 cfg.study, single.chain.options.seed ^ 0x5eedULL};
    const auto surface = posterior_y(sctx, keys);
    KeyedPredictions shat{keys, Eigen::VectorXd(static_cast<Eigen::Index>(keys.size()))};
    for (std::size_t i = 0; i < keys.size(); ++i) {
      shat.yhat(static_cast<Eigen::Index>(i)) = surface.points[i].yhat;
    }
    per[std::to_string(m)] = {{"rls", rls(truth, fhat, shat)}, {"draws", surface.draws}};
  }
  result["surveys"] = per;
  ensure_dir(ws.output());
  const fs::path path = ws.output() / "rls.json";
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f << result.dump(2) << '\n';
  out << result.dump(2) << '\n';
  return path;
}

fs::path cmd_basis(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  const Workspace ws = load_workspace(cfg, {false, true});
  const fs::path dir = ws.output() / "basis";
  ensure_dir(dir);
  std::vector<Eigen::MatrixXd> X;
  json times = json::array();
  for (const auto& tb : ws.basis->times) {
    const std::string t = std::to_string(tb.time);
    csv::write_matrix(dir / ("S_t" + t + ".csv"), tb.S);
    csv::write_matrix(dir / ("eigenvalues_t" + t + ".csv"), tb.eigenvalues);
    if (tb.M.size()) csv::write_matrix(dir / ("M_t" + t + ".csv"), tb.M);
    X.push_back(ws.design.at(tb.time).X);
    std::vector<double> ev(tb.eigenvalues.data(), tb.eigenvalues.data() + tb.eigenvalues.size());
    times.push_back({{"t", tb.time}, {"rows", tb.S.rows()}, {"eigenvalues", ev}});
  }
  const auto rep = confounding_report(*ws.basis, X);
  json j;
  j["rank"] = ws.basis->rank;
  j["propagator"] = std::string(to_string(ws.basis->mode));
  j["max_abs_StX"] = rep.basis;
  j["max_abs_MtStX"] = rep.propagator;
  j["times"] = times;
  j["ordering"] = "algebraically largest eigenvalue first";
  j["sign_convention"] = "first entry with |x| > 1e-12 is positive";
  std::ofstream(dir / "manifest.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
  out << j.dump(2) << '\n';
  return dir;
}

fs::path cmd_prior(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = resolve_config(opt);
  const Workspace ws = load_workspace(cfg, {false, true});
  const fs::path dir = ws.output() / "prior";
  ensure_dir(dir);
  const auto& prior = *ws.prior;
  json mins = json::array();
  for (int t = 1; t <= prior.horizon(); ++t) {
    const std::string ts = std::to_string(t);
    csv::write_matrix(dir / ("K_t" + ts + ".csv"), prior.K[t - 1]);
    if (t >= 2) {
      csv::write_matrix(dir / ("W_t" + ts + ".csv"), prior.W[t - 1]);
      mins.push_back({{"t", t}, {"min_eigenvalue_W", linalg::min_eigenvalue(prior.W[t - 1])}});
    }
  }
  std::ofstream log(dir / "lift_log.csv", std::ios::binary | std::ios::trunc);
  log << "time,matrix,action,min_eigenvalue,epsilon\n";
  json entries = json::array();
  for (const auto& e : prior.lift_log) {
    log << e.time << ',' << e.matrix << ',' << e.action << ','
        << csv::format(e.min_eigenvalue) << ',' << csv::format(e.epsilon) << '\n';
    entries.push_back({{"time", e.time},
                       {"matrix", e.matrix},
                       {"action", e.action},
                       {"min_eigenvalue", e.min_eigenvalue},
                       {"epsilon", e.epsilon}});
  }
  json j;
  j["form"] = std::string(to_string(prior.options.form));
  j["pooled"] = prior.options.pooled;
  j["lift_count"] = prior.lift_count();
  j["lift_log"] = entries;
  j["W"] = mins;
  std::ofstream(dir / "manifest.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
  out << j.dump(2) << '\n';
  return dir;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
  static const auto logger = [] {
    auto l = spdlog::stderr_color_mt("mstm-cli");
    l->set_pattern("[%l] %v");
    return l;
  }();
  spdlog::set_default_logger(logger);

  CLI::App app{"Multivariate spatio-temporal areal model: MI basis, FFBS Gibbs sampler"};
  app.require_subcommand(1);
  CommandOptions opt;
  std::string config;
  std::uint64_t seed = 0;
  std::string output, chain;
  int survey = 0;
  bool verbose = false, quiet = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Run configuration (INI)")->required();
    sub->add_option("--seed", seed, "Override the sampler (or truth) seed");
    sub->add_option("--chains", opt.chains, "Number of independent chains")
        ->check(CLI::PositiveNumber);
    sub->add_option("--output", output, "Override the output directory");
    sub->add_flag("-v,--verbose", verbose, "Debug logging");
    sub->add_flag("-q,--quiet", quiet, "Warnings and errors only");
  };
  auto* validate = app.add_subcommand("validate", "Check inputs and configuration");
  auto* fit = app.add_subcommand("fit", "Run the Gibbs sampler and store the chain");
  auto* predict = app.add_subcommand("predict", "Posterior predictions from a stored chain");
  auto* simulate = app.add_subcommand("simulate", "Simulate observations from the [truth] block");
  auto* rls_cmd = app.add_subcommand("rls", "Relative leave-one-survey-out criterion");
  auto* basis = app.add_subcommand("basis", "Write MI basis and propagators");
  auto* prior = app.add_subcommand("prior", "Write K*, W* and the lift log");
  for (auto* s : {validate, fit, predict, simulate, rls_cmd, basis, prior}) add_common(s);
  fit->add_option("--survey", survey, "Fit only this survey's observations");
  predict->add_option("--survey", survey, "Predict from this survey's chain");
  predict->add_option("--chain", chain, "Chain directory (default <output>/chain)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::usage);
  }
  logger->set_level(verbose ? spdlog::level::debug
                            : quiet ? spdlog::level::warn : spdlog::level::info);

  opt.config = config;
  if (!app.get_subcommands().front()->get_option("--seed")->empty()) opt.seed = seed;
  if (!output.empty()) opt.output = output;
  if (!chain.empty()) opt.chain = chain;
  if (survey > 0) opt.survey = survey;

  auto* sub = app.get_subcommands().front();
  try {
    if (sub == validate) return cmd_validate(opt, std::cout, std::cerr);
    if (sub == fit) {
      for (const auto& d : cmd_fit(opt)) std::cout << d.string() << '\n';
    } else if (sub == predict) {
      std::cout << cmd_predict(opt).string() << '\n';
    } else if (sub == simulate) {
      std::cout << cmd_simulate(opt).string() << '\n';
    } else if (sub == rls_cmd) {
      cmd_rls(opt, std::cout);
    } else if (sub == basis) {
      cmd_basis(opt, std::cout);
    } else if (sub == prior) {
      cmd_prior(opt, std::cout);
    }
    return 0;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return static_cast<int>(ExitCode::state);
  }
}

}  // namespace mstm
