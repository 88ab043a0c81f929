#pragma once

// Systematic interleaving exploration of the lock algorithms.
//
// The locks are instantiated over ScheduledAtomics, whose every operation is
// a scheduling point. Contenders run as fibers on one OS thread and a
// Scheduler decides which fiber performs its next shared-memory operation.
// The explorer enumerates schedules depth-first under a preemption bound
// (switching away from a thread that is not spinning costs one preemption;
// a spinning thread hands over round-robin for free) and flags executions
// that exceed a step budget as livelocks.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "bpl/ticket.hpp"

namespace bpl::explore {

using ThreadId = std::size_t;

class Scheduler {
 public:
  explicit Scheduler(std::size_t stack_bytes = 64 * 1024);
  ~Scheduler();
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;

  ThreadId spawn(std::function<void()> body);

  // Lets thread `t` perform its pending operation and run up to the next
  // one. Returns false once the thread has finished.
  bool step(ThreadId t);

  // Steps `t` until it hits a spin hint or finishes. Returns true if it is
  // spinning.
  bool run_until_spinning(ThreadId t, std::size_t max_steps = 100000);
  // Steps `t` to completion; false if it did not finish within the budget.
  bool run_to_completion(ThreadId t, std::size_t max_steps = 100000);

  bool finished(ThreadId t) const;
  // The thread issued a spin hint during its most recent step.
  bool spinning(ThreadId t) const;
  std::size_t size() const { return threads_.size(); }
  std::uint64_t steps() const { return steps_; }

  // Hooks for ScheduledAtomics; no-ops outside a scheduled fiber.
  static void point();
  static void relax();

 private:
  struct Thread;
  std::vector<std::unique_ptr<Thread>> threads_;
  std::size_t stack_bytes_;
  std::uint64_t steps_ = 0;
  ThreadId running_ = 0;
  bool in_step_ = false;
};

// std::atomic look-alike that yields to the Scheduler before every operation.
// Memory-order arguments are accepted and ignored: executions are
// sequentially consistent interleavings.
template <class T>
class ScheduledAtomic {
 public:
  constexpr ScheduledAtomic(T v = T{}) noexcept : value_(v) {}  // NOLINT(google-explicit-constructor)
  ScheduledAtomic(const ScheduledAtomic&) = delete;
  ScheduledAtomic& operator=(const ScheduledAtomic&) = delete;

  T load(std::memory_order = std::memory_order_seq_cst) const {
    Scheduler::point();
    return value_;
  }
  void store(T v, std::memory_order = std::memory_order_seq_cst) {
    Scheduler::point();
    value_ = v;
  }
  T exchange(T v, std::memory_order = std::memory_order_seq_cst) {
    Scheduler::point();
    T old = value_;
    value_ = v;
    return old;
  }
  bool compare_exchange_strong(T& expected, T desired, std::memory_order = std::memory_order_seq_cst) {
    Scheduler::point();
    if (value_ == expected) {
      value_ = desired;
      return true;
    }
    expected = value_;
    return false;
  }
  T fetch_add(T v, std::memory_order = std::memory_order_seq_cst) { return rmw([v](T x) { return static_cast<T>(x + v); }); }
  T fetch_sub(T v, std::memory_order = std::memory_order_seq_cst) { return rmw([v](T x) { return static_cast<T>(x - v); }); }
  T fetch_or(T v, std::memory_order = std::memory_order_seq_cst) { return rmw([v](T x) { return static_cast<T>(x | v); }); }
  T fetch_and(T v, std::memory_order = std::memory_order_seq_cst) { return rmw([v](T x) { return static_cast<T>(x & v); }); }

  // Direct access for test setup; not a scheduling point.
  T peek() const noexcept { return value_; }

 private:
  template <class F>
  T rmw(F f) {
    Scheduler::point();
    T old = value_;
    value_ = f(old);
    return old;
  }

  T value_;
};

struct ScheduledAtomics {
  template <class T>
  using atomic = ScheduledAtomic<T>;
  static constexpr bool kInstrumented = true;
  static void relax() { Scheduler::relax(); }
};

struct ExploreOptions {
  Discipline discipline = Discipline::kBatchedPriority;
  unsigned threads = 2;
  unsigned cycles = 1;  // acquire/release cycles per thread
  unsigned preemption_bound = 2;
  std::uint64_t max_steps = 20000;      // per execution; exceeding it is a livelock
  std::uint64_t max_executions = 0;     // 0 = until the bounded space is exhausted
  std::vector<std::uint32_t> priorities;  // per thread; default gives thread 0 the lowest priority
};

struct ExploreReport {
  std::uint64_t executions = 0;
  std::uint64_t total_steps = 0;
  std::uint64_t longest_execution = 0;
  bool exhausted = false;

  std::uint64_t livelocks = 0;
  std::uint64_t exclusion_violations = 0;
  std::uint64_t ticket_order_violations = 0;
  std::uint64_t incomplete_acquisitions = 0;

  // Timing-dependent properties: recorded, not failures. Both bounds assume
  // contenders are never descheduled; a preempted waiter between its
  // fetch-and-add and settling can be bypassed more than m-1 times, and a
  // holder preempted between the two stores of its release lets a fast-path
  // reset open a batch that the old holder then joins (m members).
  std::uint64_t max_bypass = 0;
  std::uint64_t bypass_exceeded = 0;      // executions with some bypass > m-1
  std::uint64_t batch_size_exceeded = 0;  // executions with a batch of m or more
  std::uint64_t batch_order_inversions = 0;
  std::uint64_t max_batch_size = 0;

  std::vector<std::string> failures;

  bool ok() const {
    return livelocks == 0 && exclusion_violations == 0 && ticket_order_violations == 0 &&
           incomplete_acquisitions == 0;
  }
  std::string summary() const;
};

// Depth-first enumeration of all schedules within the preemption bound.
ExploreReport explore(const ExploreOptions& options);

// Random schedules: at each step, with probability `switch_probability`,
// run a different thread (up to the preemption bound).
ExploreReport explore_random(const ExploreOptions& options, std::uint64_t runs, std::uint64_t seed,
                             double switch_probability = 0.05);

}  // namespace bpl::explore
