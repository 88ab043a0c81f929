#pragma once

// Native benchmarks: uncontested acquire+release cost in cycles, and
// contended runs where pinned threads issue Poisson-spaced requests against
// one lock and hold it for a fixed busy-wait critical section.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "bpl/metrics.hpp"
#include "bpl/ticket.hpp"
#include "bpl/trace.hpp"

namespace bpl::bench {

enum class ArrivalScheme { kEqual, kSkewed };

std::string_view to_string(ArrivalScheme a) noexcept;
std::optional<ArrivalScheme> parse_arrival(std::string_view name) noexcept;

// How contenders are scheduled.
//   kNormal   - the default time-sharing class
//   kRealtime - real-time FIFO class or fail. Beware the kernel's real-time
//               throttling: it stalls every contender for the remainder of
//               each period once the budget is spent, which shows up as
//               multi-millisecond delays.
enum class SchedMode { kNormal, kRealtime };

std::optional<SchedMode> parse_sched(std::string_view name) noexcept;

struct BenchConfig {
  unsigned m = 8;
  Discipline discipline = Discipline::kBatchedPriority;
  ArrivalScheme arrival = ArrivalScheme::kSkewed;
  double lambda_ratio = 1.0;  // lambda_agg / mu_cs
  double cs_us = 70.0;
  std::uint64_t budget = 80000;
  std::uint64_t seed = 1;
  std::vector<int> pinning;  // thread -> cpu; empty: round robin over allowed CPUs
  SchedMode sched = SchedMode::kNormal;

  std::vector<std::string> validate() const;
  // Per-thread request rates in requests per microsecond. Thread i has
  // priority i + 1. Skewed rates are proportional to i + 1, so the most
  // important thread is the least frequent requester.
  std::vector<double> rates_per_us() const;
};

// Parses a comma-separated CPU list such as "0,2,4".
std::vector<int> parse_cpu_list(std::string_view text);
// The BPL_PIN_CPUS override, if set.
std::vector<int> pinning_from_env();

struct RunEnvironment {
  unsigned cpus = 0;
  bool oversubscribed = false;  // more threads than usable CPUs
  bool realtime = false;
  std::uint64_t involuntary_switches = 0;
  std::vector<std::string> warnings;
};

// One acquisition; timestamps on the monotonic clock and the cycle counter.
using BenchSample = Acquisition;

struct ContendedRun {
  BenchConfig config;
  RunEnvironment env;
  std::vector<BenchSample> samples;  // in acquire order
  Verdict verdict;
  double elapsed_s = 0;
};

// Throws std::invalid_argument on bad config and std::runtime_error on
// pinning, scheduling or clock failures.
ContendedRun run_contended(const BenchConfig& config);

// Mutual exclusion for all disciplines; bounded bypass, batch cardinality
// and cross-batch FIFO for BPL; ticket order for FL.
Verdict verify_trace(const std::vector<BenchSample>& samples, Discipline discipline, unsigned m);

// Delays in microseconds.
std::vector<metrics::GrantRecord> grant_records(const std::vector<BenchSample>& samples);
metrics::CellRow contended_cell(const ContendedRun& run);

struct OverheadReport {
  Discipline discipline = Discipline::kSpin;
  double min = 0;
  double median = 0;
  double p999 = 0;
  double max = 0;
  std::uint64_t samples = 0;
  double timer_overhead = 0;  // cycles subtracted from every sample
  double first_sample = 0;    // the cold-cache sample, kept in max
  bool first_sample_is_max = false;
  unsigned pairs_per_sample = 1;  // >1 when the counter ticks coarsely; costs are per pair
};

// Median cost of two back-to-back cycle-counter reads. Throws
// std::runtime_error if the counter ever runs backwards.
double calibrate_timer_overhead(std::size_t reads = 10000);
// Smallest nonzero step between two counter reads.
std::uint64_t counter_granularity(std::size_t reads = 1000);
// Cycle-counter ticks per nanosecond, measured against the monotonic clock.
double cycles_per_ns();

OverheadReport measure_uncontested(Discipline discipline, std::size_t samples = 10000);

// discipline,min,median,p999,max,samples,pairs_per_sample
void write_overhead_csv(std::ostream& os, const std::vector<OverheadReport>& reports);

// Tight acquire/release loops with a tiny critical section that checks for
// intruders, for invariant checking rather than timing.
struct StressConfig {
  Discipline discipline = Discipline::kBatchedPriority;
  unsigned threads = 8;
  std::uint64_t acquisitions = 1'000'000;
  SchedMode sched = SchedMode::kNormal;
  std::uint64_t seed = 1;
};

struct StressReport {
  StressConfig config;
  RunEnvironment env;
  Verdict verdict;
  std::uint64_t acquisitions = 0;
  std::uint64_t intrusions = 0;  // another holder seen inside a critical section
  double elapsed_s = 0;
};

StressReport run_stress(const StressConfig& config);

// CPU model, CPU count and kernel, for bench CSV rows.
std::string machine_fingerprint();

}  // namespace bpl::bench
