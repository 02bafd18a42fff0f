#include "mstm/config.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <set>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mstm/csv.hpp"
#include "mstm/errors.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace mstm {

namespace {

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s = {
      {"paths", {"observations", "covariates", "edges", "output"}},
      {"design", {"variables", "windows", "rank", "covariates"}},
      {"transforms", {}},  // keys are variable indices
      {"model", {"propagator", "prior_form", "pooled", "epsilon"}},
      {"sampler", {"iterations", "burn_in", "thin", "seed"}},
      {"hyper", {"mu_beta", "sigma_beta2", "alpha_xi", "beta_xi", "alpha_k", "beta_k"}},
      {"truth",
       {"beta", "sigma_k2", "sigma_xi2", "v", "missing_fraction", "missing_units",
        "seed"}},
  };
  return s;
}

class Reader {
 public:
  Reader(const fs::path& file, const pt::ptree& tree) : file_(file.string()), tree_(tree) {}

  ValidationError error(const std::string& section, const std::string& key,
                        const std::string& what) const {
    return ValidationError(file_ + ": [" + section + "] " + key + ": " + what);
  }

  std::optional<std::string> get(const std::string& section,
                                 const std::string& key) const {
    const auto sec = tree_.get_child_optional(pt::ptree::path_type(section, '\0'));
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return std::string(csv::trim(*v));
  }

  std::string require(const std::string& section, const std::string& key) const {
    auto v = get(section, key);
    if (!v) throw error(section, key, "missing");
    return *v;
  }

  double to_double(const std::string& section, const std::string& key,
                   const std::string& s) const {
    double x = 0.0;
    const auto t = csv::trim(s);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size() || t.empty()) {
      throw error(section, key, "'" + s + "' is not a number");
    }
    return x;
  }

  long long to_int(const std::string& section, const std::string& key,
                   const std::string& s) const {
    long long x = 0;
    const auto t = csv::trim(s);
    const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
    if (res.ec != std::errc() || res.ptr != t.data() + t.size() || t.empty()) {
      throw error(section, key, "'" + s + "' is not an integer");
    }
    return x;
  }

  std::vector<double> to_doubles(const std::string& section, const std::string& key,
                                 const std::string& s) const {
    std::vector<double> out;
    for (const auto& f : csv::split(s)) out.push_back(to_double(section, key, f));
    return out;
  }

  std::optional<double> number(const std::string& section, const std::string& key) const {
    auto v = get(section, key);
    if (!v) return std::nullopt;
    return to_double(section, key, *v);
  }

  std::optional<long long> integer(const std::string& section,
                                   const std::string& key) const {
    auto v = get(section, key);
    if (!v) return std::nullopt;
    return to_int(section, key, *v);
  }

  bool boolean(const std::string& section, const std::string& key, bool def) const {
    auto v = get(section, key);
    if (!v) return def;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw error(section, key, "'" + *v + "' is not a boolean");
  }

 private:
  std::string file_;
  const pt::ptree& tree_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

TimeWindow parse_window(const Reader& rd, const std::string& s) {
  const auto t = std::string(csv::trim(s));
  const auto dash = t.find('-');
  TimeWindow w;
  if (dash == std::string::npos) {
    w.first = w.last = static_cast<int>(rd.to_int("design", "windows", t));
  } else {
    w.first = static_cast<int>(rd.to_int("design", "windows", t.substr(0, dash)));
    w.last = static_cast<int>(rd.to_int("design", "windows", t.substr(dash + 1)));
  }
  return w;
}

}  // namespace

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInputError("config file not found: " + path.string());
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  for (const auto& [section, child] : tree) {
    const auto it = schema().find(section);
    if (it == schema().end()) {
      throw ValidationError(path.string() + ": unknown section [" + section + "]");
    }
    if (child.empty() && !child.data().empty()) {
      throw ValidationError(path.string() + ": key '" + section + "' outside a section");
    }
    for (const auto& [key, value] : child) {
      if (section == "transforms") continue;
      if (!it->second.count(key)) {
        throw ValidationError(path.string() + ": unknown key '" + key +
                              "' in [" + section + "]");
      }
    }
  }

  const Reader rd(path, tree);
  RunConfig cfg;
  cfg.source = path;
  const fs::path base = fs::absolute(path).parent_path();

  cfg.paths.observations = resolve(base, rd.get("paths", "observations").value_or("observations.csv"));
  cfg.paths.covariates = resolve(base, rd.require("paths", "covariates"));
  cfg.paths.edges = resolve(base, rd.require("paths", "edges"));
  cfg.paths.output = resolve(base, rd.get("paths", "output").value_or("output"));

  auto& st = cfg.study;
  st.variables = static_cast<int>(rd.integer("design", "variables").value_or(1));
  if (st.variables < 1) throw rd.error("design", "variables", "must be at least 1");
  st.rank = static_cast<int>(rd.to_int("design", "rank", rd.require("design", "rank")));
  if (auto p = rd.integer("design", "covariates")) st.covariates = static_cast<int>(*p);
  const auto windows = csv::split(rd.require("design", "windows"));
  if (windows.size() == 1) {
    st.windows.assign(static_cast<std::size_t>(st.variables), parse_window(rd, windows[0]));
  } else if (static_cast<int>(windows.size()) == st.variables) {
    for (const auto& w : windows) st.windows.push_back(parse_window(rd, w));
  } else {
    throw rd.error("design", "windows",
                   "expected 1 or " + std::to_string(st.variables) + " windows");
  }
  st.transforms.assign(static_cast<std::size_t>(st.variables), TransformSpec{});
  if (const auto sec = tree.get_child_optional("transforms")) {
    for (const auto& [key, value] : *sec) {
      const auto l = rd.to_int("transforms", key, key);
      if (l < 1 || l > st.variables) {
        throw rd.error("transforms", key, "no such variable");
      }
      st.transforms[static_cast<std::size_t>(l - 1)] =
          parse_transform(csv::trim(value.data()));
    }
  }
  st.validate();

  if (auto v = rd.get("model", "propagator")) cfg.propagator = parse_propagator(*v);
  if (auto v = rd.get("model", "prior_form")) cfg.prior.form = parse_prior_form(*v);
  cfg.prior.pooled = rd.boolean("model", "pooled", false);
  if (auto e = rd.number("model", "epsilon")) {
    if (!(*e > 0.0)) throw rd.error("model", "epsilon", "must be positive");
    cfg.prior.epsilon = *e;
  }

  auto& so = cfg.sampler;
  if (auto v = rd.integer("sampler", "iterations")) so.iterations = static_cast<int>(*v);
  if (auto v = rd.integer("sampler", "burn_in")) so.burn_in = static_cast<int>(*v);
  if (auto v = rd.integer("sampler", "thin")) so.thin = static_cast<int>(*v);
  if (auto v = rd.get("sampler", "seed")) {
    std::uint64_t s = 0;
    const auto r = std::from_chars(v->data(), v->data() + v->size(), s);
    if (r.ec != std::errc() || r.ptr != v->data() + v->size()) {
      throw rd.error("sampler", "seed", "'" + *v + "' is not an unsigned integer");
    }
    so.seed = s;
  }
  so.validate();

  auto& h = cfg.hyper;
  if (auto v = rd.get("hyper", "mu_beta")) {
    const auto mu = rd.to_doubles("hyper", "mu_beta", *v);
    h.mu_beta = Eigen::Map<const Eigen::VectorXd>(mu.data(), static_cast<Eigen::Index>(mu.size()));
  }
  if (auto v = rd.number("hyper", "sigma_beta2")) h.sigma_beta2 = *v;
  if (auto v = rd.number("hyper", "alpha_xi")) h.alpha_xi = *v;
  if (auto v = rd.number("hyper", "beta_xi")) h.beta_xi = *v;
  if (auto v = rd.number("hyper", "alpha_k")) h.alpha_k = *v;
  if (auto v = rd.number("hyper", "beta_k")) h.beta_k = *v;
  if (st.covariates) h.validate(*st.covariates);

  if (tree.get_child_optional("truth")) {
    TruthConfig t;
    t.beta = rd.to_doubles("truth", "beta", rd.require("truth", "beta"));
    if (auto v = rd.number("truth", "sigma_k2")) t.sigma_k2 = *v;
    if (auto v = rd.get("truth", "sigma_xi2")) t.sigma_xi2 = rd.to_doubles("truth", "sigma_xi2", *v);
    if (auto v = rd.get("truth", "v")) t.v = rd.to_doubles("truth", "v", *v);
    if (auto v = rd.get("truth", "missing_fraction")) {
      t.missing_fraction = rd.to_doubles("truth", "missing_fraction", *v);
    }
    if (auto v = rd.get("truth", "missing_units")) {
      for (const auto& u : csv::split(*v)) {
        if (!u.empty()) t.missing_units.push_back(u);
      }
    }
    if (auto v = rd.get("truth", "seed")) {
      std::uint64_t s = 0;
      const auto r = std::from_chars(v->data(), v->data() + v->size(), s);
      if (r.ec != std::errc() || r.ptr != v->data() + v->size()) {
        throw rd.error("truth", "seed", "'" + *v + "' is not an unsigned integer");
      }
      t.seed = s;
    }
    if (t.missing_fraction.size() != 1 && t.missing_fraction.size() != t.v.size()) {
      throw rd.error("truth", "missing_fraction", "expected one value or one per survey");
    }
    cfg.truth = std::move(t);
  }
  return cfg;
}

TruthSpec make_truth_spec(const TruthConfig& cfg, const ArealGraph& graph,
                          int covariates) {
  TruthSpec spec;
  if (static_cast<int>(cfg.beta.size()) != covariates) {
    throw ValidationError("[truth] beta has " + std::to_string(cfg.beta.size()) +
                          " entries, the design has " + std::to_string(covariates) +
                          " covariates");
  }
  spec.beta = {Eigen::Map<const Eigen::VectorXd>(cfg.beta.data(), covariates)};
  spec.sigma_k2 = cfg.sigma_k2;
  spec.sigma_xi2 = cfg.sigma_xi2;
  std::vector<int> units;
  for (const auto& id : cfg.missing_units) {
    const auto u = graph.find(id);
    if (!u) throw ValidationError("[truth] missing_units: unknown unit '" + id + "'");
    units.push_back(*u);
  }
  spec.surveys.clear();
  for (std::size_t m = 0; m < cfg.v.size(); ++m) {
    SurveySpec s;
    s.id = static_cast<int>(m + 1);
    s.v = cfg.v[m];
    s.missing_fraction =
        cfg.missing_fraction.size() == 1 ? cfg.missing_fraction[0] : cfg.missing_fraction[m];
    s.missing_units = units;
    spec.surveys.push_back(s);
  }
  return spec;
}

}  // namespace mstm
