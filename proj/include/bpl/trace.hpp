#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bpl/ticket.hpp"

namespace bpl {

enum class TraceKind : std::uint8_t { kRequest, kAcquire, kRelease };

struct TraceEvent {
  TraceKind kind = TraceKind::kRequest;
  std::int64_t timestamp_ns = 0;
  std::uint64_t cycles = 0;
  std::uint32_t core = 0;
  std::uint32_t priority = 0;
  std::optional<std::uint64_t> batch;
  std::uint64_t epoch = 0;
  std::optional<std::uint64_t> ticket;
  std::uint64_t seq = 0;
};

// One completed acquisition reconstructed from its three events. Sequence
// numbers come from one global counter, so they give a total order that is
// exact for events recorded while holding the lock.
struct Acquisition {
  std::uint32_t core = 0;
  std::uint32_t priority = 0;
  std::uint64_t request_seq = 0;
  std::uint64_t acquire_seq = 0;
  std::uint64_t release_seq = 0;
  std::int64_t request_ns = 0;
  std::int64_t acquire_ns = 0;
  std::int64_t release_ns = 0;
  std::uint64_t request_cycles = 0;
  std::uint64_t acquire_cycles = 0;
  std::uint64_t release_cycles = 0;
  std::optional<std::uint64_t> batch;
  std::uint64_t epoch = 0;
  std::optional<std::uint64_t> ticket;
};

inline std::int64_t monotonic_ns() noexcept {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

// Per-core bounded event buffers plus the global sequence counter. Recording
// never blocks; a full buffer drops the event and counts the drop.
class TraceRecorder {
 public:
  // `reserve` events per core are allocated up front; buffers grow on
  // demand up to the capacity.
  TraceRecorder(std::size_t cores, std::size_t capacity_per_core, std::size_t reserve = SIZE_MAX);

  void record(std::uint32_t core, TraceKind kind, std::uint32_t priority, const AcquireTicket* ticket = nullptr);

  std::uint64_t dropped() const;
  std::size_t cores() const { return buffers_.size(); }

  // All recorded events ordered by sequence number.
  std::vector<TraceEvent> merged() const;

 private:
  struct alignas(64) Buffer {
    std::vector<TraceEvent> events;
    std::size_t capacity = 0;
    std::uint64_t dropped = 0;
  };

  std::vector<Buffer> buffers_;
  alignas(64) std::atomic<std::uint64_t> seq_{0};
};

struct Verdict {
  bool ok = true;
  std::vector<std::string> violations;
  std::uint64_t checked = 0;
  std::uint64_t max_bypass = 0;
  std::uint64_t max_batch_size = 0;
  std::uint64_t reorderings = 0;  // acquisitions granted out of request order

  void fail(std::string what);
  void merge(const Verdict& other);
};

// Pairs request/acquire/release events per core. Malformed per-core order is
// reported as a violation.
std::vector<Acquisition> pair_events(const std::vector<TraceEvent>& events, Verdict& verdict);

// [acquire, release] intervals are disjoint.
Verdict check_mutual_exclusion(std::vector<Acquisition> acquisitions);

// Acquisitions by other cores between each request and its acquire.
std::vector<std::uint64_t> bypass_counts(const std::vector<Acquisition>& acquisitions);

// Every acquisition is bypassed at most m-1 times.
Verdict check_bounded_bypass(const std::vector<Acquisition>& acquisitions, unsigned m);

// Tickets sharing (epoch, batch) number at most m-1.
Verdict check_batch_cardinality(const std::vector<Acquisition>& acquisitions, unsigned m);

// Batch IDs are served in nondecreasing order within an epoch.
Verdict check_batch_fifo(std::vector<Acquisition> acquisitions);

// Ticket-lock grants happen in ticket order with no gaps.
Verdict check_ticket_order(std::vector<Acquisition> acquisitions);

// Number of acquisitions granted ahead of an earlier request.
std::uint64_t count_reorderings(std::vector<Acquisition> acquisitions);

}  // namespace bpl
