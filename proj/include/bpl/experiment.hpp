#pragma once

// Declarative experiment runs behind bplctl.
//
// Config files are plain `key = value` lines; `#` starts a comment and list
// values are comma separated. Every grid axis is an explicit list:
//
//   mode     = sim
//   m        = 64
//   mbs      = 8, 32
//   lambda   = 0.01, 0.1, 1.0
//   policies = FL, PL, BPL
//   seeds    = 1, 2, 3
//
// See README.md for the full key list per mode.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bpl/harness.hpp"
#include "bpl/metrics.hpp"
#include "bpl/simqueue.hpp"

namespace bpl::cli {

enum class Mode { kSim, kBench, kVerify };

std::string_view to_string(Mode m) noexcept;
std::optional<Mode> parse_mode(std::string_view name) noexcept;

enum class ExitCode : int { kOk = 0, kViolation = 1, kConfigError = 2 };

// Thrown for unusable configs; one message per offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> fields);
  const std::vector<std::string>& fields() const noexcept { return fields_; }

 private:
  std::vector<std::string> fields_;
};

using KeyValues = std::map<std::string, std::string>;

// Throws ConfigError on malformed lines or duplicate keys.
KeyValues parse_key_values(std::istream& is);

struct VerifyPlan {
  std::vector<Discipline> disciplines{Discipline::kSpin, Discipline::kFifo, Discipline::kBatchedPriority};
  unsigned stress_threads = 8;
  std::uint64_t stress_acquisitions = 1'000'000;
  std::vector<unsigned> explore_threads{2, 3, 4};
  unsigned explore_cycles = 2;
  unsigned preemption_bound = 2;
  std::uint64_t explore_max_executions = 0;
  std::uint64_t random_runs = 200;
};

struct BenchPlan {
  std::vector<bench::BenchConfig> contended;  // one per (cell, seed)
  std::vector<Discipline> overhead_disciplines;
  std::size_t overhead_samples = 10000;
};

struct ExperimentSpec {
  Mode mode = Mode::kSim;
  std::vector<sim::SimConfig> sim_grid;  // one per (cell, policy, seed)
  BenchPlan bench;
  VerifyPlan verify;
  std::vector<std::uint64_t> seeds;
  std::string out_dir = "results";
  std::string format = "csv";  // csv | json
  unsigned threads = 0;        // sim worker pool; 0 = one per CPU
  bool write_traces = false;
  KeyValues resolved;  // every key with its effective value, for the manifest
};

// Fills defaults, expands grids and validates. Overrides (from flags) win
// over file values. Throws ConfigError listing every bad field.
ExperimentSpec build_spec(KeyValues values, const KeyValues& overrides = {});
ExperimentSpec load_spec(const std::string& path, const KeyValues& overrides = {});

// Runs the experiment and writes results, a manifest and, on failure, a
// FAILED marker next to whatever rows were finished. Progress goes to `log`.
ExitCode run(const ExperimentSpec& spec, std::ostream& log);

// Reads cell files (CSV or JSON), normalizes against FL and prints one line
// per cell with the mean and min/max over seeds. Throws std::runtime_error on
// schema mismatch and std::invalid_argument when a cell lacks its FL row.
void summarize(const std::vector<std::string>& paths, std::ostream& out);

struct CellSummary {
  std::string cell;  // cell key without the seed
  std::string policy;
  std::size_t seeds = 0;
  double inversion_pct_mean = 0, inversion_pct_min = 0, inversion_pct_max = 0;
  double d_w_mean = 0;
  double d_w_norm_mean = 0, d_w_norm_min = 0, d_w_norm_max = 0;
  double d_highest_mean = 0;
};

std::vector<CellSummary> aggregate(std::vector<metrics::CellRow> rows);

}  // namespace bpl::cli
