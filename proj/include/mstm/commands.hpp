#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mstm/areal_data.hpp"
#include "mstm/config.hpp"
#include "mstm/mi_basis.hpp"
#include "mstm/mi_prior.hpp"

namespace mstm {

struct CommandOptions {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  int chains = 1;
  std::optional<std::filesystem::path> output;
  std::optional<int> survey;                   // fit: single-survey chain
  std::optional<std::filesystem::path> chain;  // predict: chain directory
};

// Config plus everything derived from the input files.
struct Workspace {
  RunConfig config;
  ArealGraph graph;
  Design design;
  std::optional<ObservationSet> observations;
  std::optional<BasisSystem> basis;
  std::optional<PriorStructure> prior;

  std::filesystem::path output() const { return config.paths.output; }
};

struct LoadSteps {
  bool observations = true;
  bool model = true;  // basis and prior
};

// Applies --seed / --output overrides to the loaded config.
RunConfig resolve_config(const CommandOptions& opt);
Workspace load_workspace(const RunConfig& cfg, LoadSteps steps = {});

// Chain directory names inside the output directory.
std::filesystem::path chain_dir(const std::filesystem::path& output,
                                std::optional<int> survey, int chain_index,
                                int chains);

// Each returns the process exit code; errors surface as mstm::Error.
int cmd_validate(const CommandOptions& opt, std::ostream& out, std::ostream& err);
// Returns the chain directories written.
std::vector<std::filesystem::path> cmd_fit(const CommandOptions& opt);
std::filesystem::path cmd_predict(const CommandOptions& opt);
std::filesystem::path cmd_simulate(const CommandOptions& opt);
std::filesystem::path cmd_rls(const CommandOptions& opt, std::ostream& out);
std::filesystem::path cmd_basis(const CommandOptions& opt, std::ostream& out);
std::filesystem::path cmd_prior(const CommandOptions& opt, std::ostream& out);

// Entry point of the `mstm` executable.
int run_cli(int argc, const char* const* argv);

}  // namespace mstm
