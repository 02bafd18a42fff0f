#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mstm/areal_data.hpp"
#include "mstm/gibbs.hpp"

namespace mstm {

inline constexpr int kChainFormatVersion = 1;

// Column layout of a chain directory.
struct ChainLayout {
  int horizon = 0;
  Eigen::Index rank = 0;
  std::vector<std::string> covariate_names;
  std::vector<std::vector<Location>> xi_locations;  // per t

  Eigen::Index covariates() const {
    return static_cast<Eigen::Index>(covariate_names.size());
  }
  static ChainLayout of(const FitProblem& problem,
                        std::vector<std::string> covariate_names);
};

// Streams stored draws into a chain directory:
//   manifest.json, eta.csv, beta.csv, sigma_k2.csv, sigma_xi2.csv, xi.csv,
//   xi_locations.csv
// Files are flushed every 100 draws and the manifest is rewritten with
// status "complete" and SHA-256 file hashes by finish().
class ChainWriter {
 public:
  ChainWriter(std::filesystem::path dir, ChainLayout layout,
              SamplerOptions options, const ArealGraph& graph,
              nlohmann::json extra = nlohmann::json::object());
  ~ChainWriter();

  void append(int iteration, const ModelState& state);
  void finish();

  std::size_t written() const { return written_; }
  DrawSink sink() {
    return [this](int it, const ModelState& s) { append(it, s); };
  }

 private:
  void write_manifest(const std::string& status);

  std::filesystem::path dir_;
  ChainLayout layout_;
  SamplerOptions options_;
  nlohmann::json extra_;
  std::ofstream eta_, beta_, sigma_k2_, sigma_xi2_, xi_;
  std::size_t written_ = 0;
  bool finished_ = false;
};

struct StoredChain {
  ChainLayout layout;
  PosteriorChain chain;
  std::vector<int> iterations;  // iteration index of every draw
  nlohmann::json manifest;
};

// Throws StateError for a missing, incomplete or corrupt chain directory.
StoredChain read_chain(const std::filesystem::path& dir);

// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

inline const std::vector<std::string>& chain_files() {
  static const std::vector<std::string> files = {
      "eta.csv", "beta.csv", "sigma_k2.csv", "sigma_xi2.csv", "xi.csv",
      "xi_locations.csv"};
  return files;
}

}  // namespace mstm
