#include "mstm/chain_io.hpp"

#include <array>
#include <cstdio>

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "mstm/csv.hpp"
#include "mstm/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mstm {

namespace {

constexpr std::size_t kFlushEvery = 100;

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MissingInputError("cannot write " + path.string());
  return out;
}

void write_row(std::ofstream& out, int iteration,
               const std::vector<Eigen::VectorXd>& parts) {
  out << iteration;
  for (const auto& v : parts) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << csv::format(v(i));
  }
  out << '\n';
}

void write_header(std::ofstream& out, const std::vector<std::string>& cols) {
  out << "iteration";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
}

}  // namespace

ChainLayout ChainLayout::of(const FitProblem& problem,
                            std::vector<std::string> covariate_names) {
  ChainLayout l;
  l.horizon = problem.horizon();
  l.rank = problem.rank();
  if (static_cast<Eigen::Index>(covariate_names.size()) != problem.covariates()) {
    throw ValidationError("ChainLayout: covariate names do not match p");
  }
  l.covariate_names = std::move(covariate_names);
  for (const auto& td : problem.times()) l.xi_locations.push_back(td.locations);
  return l;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char tmp[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(tmp, sizeof tmp, "%02x", md[i]);
    hex += tmp;
  }
  return hex;
}

// ---------------------------------------------------------------------------

ChainWriter::ChainWriter(fs::path dir, ChainLayout layout,
                         SamplerOptions options, const ArealGraph& graph,
                         json extra)
    : dir_(std::move(dir)),
      layout_(std::move(layout)),
      options_(options),
      extra_(std::move(extra)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw MissingInputError("cannot create " + dir_.string() + ": " + ec.message());
  const int T = layout_.horizon;

  eta_ = open_out(dir_ / "eta.csv");
  beta_ = open_out(dir_ / "beta.csv");
  sigma_k2_ = open_out(dir_ / "sigma_k2.csv");
  sigma_xi2_ = open_out(dir_ / "sigma_xi2.csv");
  xi_ = open_out(dir_ / "xi.csv");

  std::vector<std::string> cols;
  for (int t = 1; t <= T; ++t) {
    for (Eigen::Index k = 1; k <= layout_.rank; ++k) {
      cols.push_back("eta_t" + std::to_string(t) + "_" + std::to_string(k));
    }
  }
  write_header(eta_, cols);
  cols.clear();
  for (int t = 1; t <= T; ++t) {
    for (const auto& name : layout_.covariate_names) {
      cols.push_back("beta_t" + std::to_string(t) + "_" + name);
    }
  }
  write_header(beta_, cols);
  write_header(sigma_k2_, {"sigma_k2"});
  cols.clear();
  for (int t = 1; t <= T; ++t) cols.push_back("sigma_xi2_t" + std::to_string(t));
  write_header(sigma_xi2_, cols);

  cols.clear();
  auto loc_out = open_out(dir_ / "xi_locations.csv");
  loc_out << "column,variable,time,unit_index,unit\n";
  for (int t = 1; t <= T; ++t) {
    int j = 0;
    for (const auto& loc : layout_.xi_locations[t - 1]) {
      const std::string name = "xi_t" + std::to_string(t) + "_" + std::to_string(++j);
      cols.push_back(name);
      loc_out << name << ',' << loc.variable << ',' << loc.time << ','
              << loc.unit << ',' << graph.unit(loc.unit) << '\n';
    }
  }
  write_header(xi_, cols);
  loc_out.close();
  write_manifest("running");
}

ChainWriter::~ChainWriter() {
  if (!finished_) {
    eta_.flush();
    beta_.flush();
    sigma_k2_.flush();
    sigma_xi2_.flush();
    xi_.flush();
  }
}

void ChainWriter::append(int iteration, const ModelState& s) {
  write_row(eta_, iteration, s.eta);
  write_row(beta_, iteration, s.beta);
  sigma_k2_ << iteration << ',' << csv::format(s.sigma_k2) << '\n';
  sigma_xi2_ << iteration;
  for (double x : s.sigma_xi2) sigma_xi2_ << ',' << csv::format(x);
  sigma_xi2_ << '\n';
  write_row(xi_, iteration, s.xi);
  if (++written_ % kFlushEvery == 0) {
    for (auto* f : {&eta_, &beta_, &sigma_k2_, &sigma_xi2_, &xi_}) f->flush();
  }
}

void ChainWriter::finish() {
  for (auto* f : {&eta_, &beta_, &sigma_k2_, &sigma_xi2_, &xi_}) {
    f->close();
    if (f->fail()) throw StateError("write failure in " + dir_.string());
  }
  finished_ = true;
  write_manifest("complete");
}

void ChainWriter::write_manifest(const std::string& status) {
  json m;
  m["format_version"] = kChainFormatVersion;
  m["spec_version"] = kChainFormatVersion;
  m["status"] = status;
  m["seed"] = options_.seed;
  m["iterations"] = options_.iterations;
  m["burn_in"] = options_.burn_in;
  m["thin"] = options_.thin;
  m["stored_draws"] = status == "complete" ? written_ : 0;
  m["sweep_order"] = kSweepOrder;
  m["moves"] = "gibbs";
  json dims;
  dims["T"] = layout_.horizon;
  dims["r"] = layout_.rank;
  dims["p"] = layout_.covariates();
  dims["covariates"] = layout_.covariate_names;
  std::vector<std::size_t> xi_sizes;
  for (const auto& v : layout_.xi_locations) xi_sizes.push_back(v.size());
  dims["xi"] = xi_sizes;
  m["dims"] = dims;
  m["settings"] = extra_;
  if (status == "complete") {
    json files;
    for (const auto& f : chain_files()) files[f] = sha256_file(dir_ / f);
    m["sha256"] = files;
  }
  std::ofstream out = open_out(dir_ / "manifest.json");
  out << m.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

struct ParsedCsv {
  std::vector<int> iterations;
  std::vector<std::vector<double>> rows;
};

ParsedCsv parse_draws(const fs::path& path, std::size_t columns) {
  const auto table = csv::read(path);
  if (table.header.size() != columns + 1) {
    throw StateError(path.string() + ": expected " + std::to_string(columns + 1) +
                     " columns, found " + std::to_string(table.header.size()));
  }
  ParsedCsv out;
  for (const auto& rec : table.rows) {
    out.iterations.push_back(static_cast<int>(csv::to_int(rec.fields[0], table, rec)));
    std::vector<double> row(columns);
    for (std::size_t j = 0; j < columns; ++j) {
      row[j] = csv::to_double(rec.fields[j + 1], table, rec);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace

StoredChain read_chain(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw StateError("no chain at " + dir.string() + " (manifest.json missing)");
  }
  StoredChain sc;
  try {
    std::ifstream in(manifest_path);
    sc.manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw StateError(manifest_path.string() + ": " + e.what());
  }
  try {
    const auto& m = sc.manifest;
    if (m.at("status").get<std::string>() != "complete") {
      throw StateError("chain at " + dir.string() + " is incomplete (status " +
                       m.at("status").get<std::string>() + ")");
    }
    if (m.at("format_version").get<int>() != kChainFormatVersion) {
      throw StateError("chain at " + dir.string() + " has unsupported format_version");
    }
    for (const auto& f : chain_files()) {
      if (!fs::exists(dir / f)) throw StateError("chain file missing: " + (dir / f).string());
      if (sha256_file(dir / f) != m.at("sha256").at(f).get<std::string>()) {
        throw StateError("chain file " + (dir / f).string() +
                         " does not match its manifest hash");
      }
    }
    auto& opt = sc.chain.options;
    opt.seed = m.at("seed").get<std::uint64_t>();
    opt.iterations = m.at("iterations").get<int>();
    opt.burn_in = m.at("burn_in").get<int>();
    opt.thin = m.at("thin").get<int>();
    const auto& dims = m.at("dims");
    auto& l = sc.layout;
    l.horizon = dims.at("T").get<int>();
    l.rank = dims.at("r").get<Eigen::Index>();
    l.covariate_names = dims.at("covariates").get<std::vector<std::string>>();
    const auto xi_sizes = dims.at("xi").get<std::vector<std::size_t>>();
    if (static_cast<int>(xi_sizes.size()) != l.horizon) {
      throw StateError("manifest dims.xi does not cover every t");
    }
    l.xi_locations.assign(static_cast<std::size_t>(l.horizon), {});
    const auto locs = csv::read(dir / "xi_locations.csv");
    const auto cv = locs.column("variable"), ct = locs.column("time"),
               cu = locs.column("unit_index");
    for (const auto& rec : locs.rows) {
      Location loc;
      loc.variable = static_cast<int>(csv::to_int(rec.fields[cv], locs, rec));
      loc.time = static_cast<int>(csv::to_int(rec.fields[ct], locs, rec));
      loc.unit = static_cast<int>(csv::to_int(rec.fields[cu], locs, rec));
      if (loc.time < 1 || loc.time > l.horizon) {
        throw StateError("xi_locations.csv: time out of range");
      }
      l.xi_locations[loc.time - 1].push_back(loc);
    }
    for (int t = 1; t <= l.horizon; ++t) {
      if (l.xi_locations[t - 1].size() != xi_sizes[t - 1]) {
        throw StateError("xi_locations.csv disagrees with manifest at t = " +
                         std::to_string(t));
      }
    }
  } catch (const json::exception& e) {
    throw StateError(manifest_path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw StateError(e.what());
  }

  const auto& l = sc.layout;
  const int T = l.horizon;
  const auto r = l.rank;
  const auto p = l.covariates();
  std::size_t n_xi = 0;
  for (const auto& v : l.xi_locations) n_xi += v.size();

  ParsedCsv eta, beta, sk, sx, xi;
  try {
    eta = parse_draws(dir / "eta.csv", static_cast<std::size_t>(T * r));
    beta = parse_draws(dir / "beta.csv", static_cast<std::size_t>(T * p));
    sk = parse_draws(dir / "sigma_k2.csv", 1);
    sx = parse_draws(dir / "sigma_xi2.csv", static_cast<std::size_t>(T));
    xi = parse_draws(dir / "xi.csv", n_xi);
  } catch (const ValidationError& e) {
    throw StateError(e.what());
  }
  const std::size_t J = eta.rows.size();
  for (const auto* part : {&beta, &sk, &sx, &xi}) {
    if (part->rows.size() != J || part->iterations != eta.iterations) {
      throw StateError("chain files at " + dir.string() + " have mismatched draws");
    }
  }
  sc.iterations = eta.iterations;
  sc.chain.draws.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    auto& s = sc.chain.draws[j];
    s.eta.resize(T);
    s.beta.resize(T);
    s.xi.resize(T);
    s.sigma_xi2.resize(T);
    std::size_t off = 0;
    for (int t = 0; t < T; ++t) {
      s.eta[t] = Eigen::Map<const Eigen::VectorXd>(eta.rows[j].data() + t * r, r);
      s.beta[t] = Eigen::Map<const Eigen::VectorXd>(beta.rows[j].data() + t * p, p);
      const auto n = static_cast<Eigen::Index>(l.xi_locations[t].size());
      s.xi[t] = Eigen::Map<const Eigen::VectorXd>(xi.rows[j].data() + off, n);
      off += static_cast<std::size_t>(n);
      s.sigma_xi2[t] = sx.rows[j][t];
    }
    s.sigma_k2 = sk.rows[j][0];
  }
  return sc;
}

}  // namespace mstm
