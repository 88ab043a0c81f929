#pragma once

// Discrete-event simulation of a machine-repairman queue: m sources, each
// with at most one outstanding request, a single server, and a burst
// generator that wakes idle sources in groups. The order in which pending
// requests reach the server is the lock policy under study.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "bpl/metrics.hpp"
#include "bpl/trace.hpp"

namespace bpl::sim {

enum class Policy { kFifo, kPriority, kBatched };

std::string_view to_string(Policy p) noexcept;
std::optional<Policy> parse_policy(std::string_view name) noexcept;

struct SimConfig {
  unsigned m = 8;
  unsigned mean_burst_size = 4;
  double service_rate = 0.01;      // mu, services per time unit
  double burst_rate_ratio = 0.01;  // lambda_burst / mu
  Policy policy = Policy::kFifo;
  std::uint64_t seed = 1;
  std::uint64_t request_budget = 0;  // 0 selects m * 10000

  double burst_rate() const noexcept { return burst_rate_ratio * service_rate; }
  std::uint64_t budget() const noexcept { return request_budget != 0 ? request_budget : std::uint64_t{m} * 10000; }

  // Offending fields, one message each; empty when valid.
  std::vector<std::string> validate() const;
};

// Source s has priority s + 1; source 0 is the most important.
constexpr std::uint32_t source_priority(std::uint32_t source) noexcept { return source + 1; }

struct SimRequest {
  std::uint32_t source = 0;
  std::uint32_t priority = 0;
  double t_request = 0;
  double t_start = 0;
  double t_complete = 0;
  // BPL: batch open when the request arrived. Empty for a request that found
  // the server idle and was granted on arrival (the lock's fast path).
  std::optional<std::uint64_t> batch_tag;
  // Positions in the global event order; ties in simulated time are
  // resolved by these.
  std::uint64_t request_seq = 0;
  std::uint64_t grant_seq = 0;
  std::uint64_t complete_seq = 0;

  double delay() const noexcept { return t_start - t_request; }
};

struct SimResult {
  SimConfig config;
  std::vector<SimRequest> completed;    // in grant order
  std::vector<SimRequest> outstanding;  // still waiting when the budget was reached
  double end_time = 0;
};

// Pending events. Completions precede burst firings at equal times; then
// lower source index first.
class EventQueue {
 public:
  enum class Kind : std::uint8_t { kCompletion = 0, kBurst = 1 };
  struct Event {
    double time = 0;
    Kind kind = Kind::kBurst;
    std::uint32_t source = 0;
  };

  void push(Event e) { heap_.push(e); }
  Event pop();
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const noexcept {
      if (a.time != b.time) return a.time > b.time;
      if (a.kind != b.kind) return a.kind > b.kind;
      return a.source > b.source;
    }
  };
  std::priority_queue<Event, std::vector<Event>, Later> heap_;
};

// Independent generators per purpose, so a policy change never shifts the
// draws of an unrelated purpose.
struct RngStreams {
  explicit RngStreams(std::uint64_t seed);
  std::mt19937_64 arrivals;
  std::mt19937_64 burst_size;
  std::mt19937_64 selection;
  std::mt19937_64 service;
};

// Burst size uniform on {0, ..., 2 * mean_burst_size}; returns a uniformly
// random ordered subset of `idle` of that size (all of them if fewer).
std::vector<std::uint32_t> draw_burst(RngStreams& rng, unsigned mean_burst_size, std::vector<std::uint32_t> idle);

// Pending requests ordered by policy:
//   FL  - request time, then arrival order
//   PL  - priority, then request time, then source
//   BPL - batch tag, then priority, then source
class PendingSet {
 public:
  explicit PendingSet(Policy policy) : policy_(policy) {}

  void add(const SimRequest& request, std::size_t handle);
  // Handle of the request to grant next. Precondition: !empty().
  std::size_t next_grant();
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }

 private:
  struct Entry {
    double k0;
    std::uint64_t k1;
    std::uint64_t k2;
    std::uint64_t k3;
    std::size_t handle;
    bool operator>(const Entry& o) const noexcept {
      if (k0 != o.k0) return k0 > o.k0;
      if (k1 != o.k1) return k1 > o.k1;
      if (k2 != o.k2) return k2 > o.k2;
      return k3 > o.k3;
    }
  };
  Policy policy_;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap_;
};

SimResult run_sim(const SimConfig& config);

// Requests as lock acquisitions (grant = acquire, completion = release), for
// the trace verifiers.
std::vector<Acquisition> to_acquisitions(const SimResult& result);

// Server serialization, bounded bypass (BPL) and batch cardinality (BPL).
Verdict verify(const SimResult& result);

// Completed requests as metric records, keyed by event sequence numbers.
std::vector<metrics::GrantRecord> served_records(const SimResult& result);
// Requests still waiting at the end, with their wait so far as the delay.
std::vector<metrics::GrantRecord> censored_records(const SimResult& result);
// One result row for this run (m, mbs, lambda, policy and seed filled in).
metrics::CellRow summarize(const SimResult& result, metrics::InversionOptions options = {});

// Raw trace: source,priority,t_request,t_start,t_complete,batch_tag,policy,seed
void write_trace_csv(std::ostream& os, const SimResult& result);

}  // namespace bpl::sim
