#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bpl::metrics {

// One served request, stripped to what the metrics need. The three keys
// live in one total order (event sequence numbers) so simultaneous events
// in simulated or wall-clock time stay distinguishable.
struct GrantRecord {
  std::uint32_t source = 0;
  std::uint32_t priority = 0;  // lower value = higher priority
  std::uint64_t request_key = 0;
  std::uint64_t grant_key = 0;
  std::uint64_t complete_key = 0;
  double delay = 0;  // grant time - request time
};

struct SourceDelay {
  std::uint32_t source = 0;
  std::uint32_t priority = 0;
  std::uint32_t weight = 0;
  std::uint64_t requests = 0;
  double mean_delay = 0;
  double max_delay = 0;
};

struct DelayTable {
  std::vector<SourceDelay> sources;  // indexed by source

  double max_delay() const;
  // Mean delay of the source with the smallest priority value.
  double highest_priority_delay() const;
};

// Builds per-source delays for sources 0..m-1. `censored` holds requests
// still waiting at the end of a run (delay so far); they count toward their
// source's mean so starved sources are not silently dropped. Weights run
// from 1 for the lowest priority to m for the highest.
DelayTable build_delay_table(unsigned m, const std::vector<GrantRecord>& served,
                             const std::vector<GrantRecord>& censored = {});

// Sum(w_i * d_i) / Sum(w_i). Throws std::invalid_argument if a source has no
// data.
double weighted_mean_delay(const DelayTable& table);

struct InversionOptions {
  // Also charge the request already holding the server when R arrived.
  bool count_in_service_blocker = false;
};

struct InversionReport {
  std::uint64_t requests = 0;
  std::uint64_t instances = 0;
  std::uint64_t affected = 0;  // requests with at least one instance
  std::vector<std::uint64_t> instances_by_source;
  std::vector<std::uint64_t> affected_by_source;

  double affected_percent() const { return requests == 0 ? 0.0 : 100.0 * static_cast<double>(affected) / requests; }
};

// An inversion instance for request R is a lower-priority request G that is
// granted while R waits: R.request_key < G.grant_key < R.grant_key. Runs in
// O(n log n). Throws std::invalid_argument on overlapping services.
InversionReport count_inversions(const std::vector<GrantRecord>& served, InversionOptions options = {});

// One result row per (cell, policy, seed).
struct CellRow {
  unsigned m = 0;
  unsigned mbs = 0;            // 0 for native runs
  double lambda_ratio = 0;     // lambda_burst/mu (sim) or lambda_agg/mu_cs (bench)
  std::string policy;          // FL | PL | BPL | SL
  std::uint64_t seed = 0;
  double inversion_pct = 0;
  std::uint64_t inversion_instances = 0;
  double d_w = 0;
  std::optional<double> d_w_normalized;
  double d_highest_priority = 0;
  double d_max = 0;
  std::uint64_t inversion_affected = 0;
  std::uint64_t requests = 0;
  std::string arrival = "burst";  // burst | equal | skewed
  std::string fingerprint;        // machine description for native rows

  // Everything but policy: the grid cell and seed.
  std::string cell_key() const;
};

CellRow summarize_cell(unsigned m, const std::vector<GrantRecord>& served, const std::vector<GrantRecord>& censored,
                       InversionOptions options = {});

// Fills d_w_normalized = d_w / d_w(baseline) for rows sharing a cell key.
// Throws std::invalid_argument naming the first cell without a baseline.
void normalize(std::vector<CellRow>& rows, const std::string& baseline = "FL");

inline constexpr const char* kCellSchema = "bpl-cells/1";

void write_cells_csv(std::ostream& os, const std::vector<CellRow>& rows);
void write_cells_json(std::ostream& os, const std::vector<CellRow>& rows);
// Throws std::runtime_error on schema mismatch.
std::vector<CellRow> read_cells_csv(std::istream& is);
std::vector<CellRow> read_cells_json(std::istream& is);

}  // namespace bpl::metrics
