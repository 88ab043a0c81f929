#pragma once

#include <bit>
#include <concepts>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "bpl/atomics.hpp"
#include "bpl/ticket.hpp"

namespace bpl {

// Batch-counter update performed by the releasing holder: drop the count in
// the low `k` bits and advance the batch ID in the high bits by one.
template <std::unsigned_integral Word>
constexpr Word next_batch_word(Word current, unsigned k) noexcept {
  const Word count_mask = static_cast<Word>((Word{1} << k) - 1);
  Word next = static_cast<Word>(current & static_cast<Word>(~count_mask));
  next = static_cast<Word>(next + (Word{1} << k));
  return next;
}

// Width of the waiter-count field for an m-contender lock: ceil(log2(m)).
constexpr unsigned batch_count_bits(unsigned m) noexcept {
  return m <= 1 ? 0u : static_cast<unsigned>(std::bit_width(m - 1u));
}

[[noreturn]] void contract_violation(const std::string& what);

struct BplSnapshot {
  std::uint32_t status = 0;
  std::uint32_t num_waiters = 0;
  std::uint64_t curr_batch = 0;
  std::uint64_t batch_barrier = 0;
  std::uint64_t priority_barrier = 0;
  std::uint64_t settling[2] = {0, 0};
  unsigned k = 0;

  std::uint64_t batch_id() const noexcept { return curr_batch >> k; }
  std::uint64_t batch_count() const noexcept { return curr_batch & ((std::uint64_t{1} << k) - 1); }
};

// Batched Priority Lock.
//
// Waiters that arrive while one holder runs its critical section share a
// batch. Earlier batches are served before later ones, and inside a batch
// the lowest priority value wins. Each waiter walks three stages:
//
//   batching  - agree on the smallest batch ID through batch_barrier
//   priority  - agree on the smallest priority value through priority_barrier
//   final     - the survivors race on the status bit
//
// A settling bit per (stage, core) keeps the first waiter to finish a stage
// from running ahead until every other waiter in that stage has compared
// itself against the barrier. The new holder resets both barriers, which
// sends the remaining waiters back to re-settle.
//
// Core indices must be unique among simultaneous contenders and < m.
template <class Atomics = FastAtomics>
class BasicBatchedPriorityLock {
 public:
  using Word = std::uint64_t;
  static constexpr Word kSentinel = ~Word{0};
  static constexpr unsigned kMaxContenders = 64;

  explicit BasicBatchedPriorityLock(unsigned m) : m_(m), k_(batch_count_bits(m)) {
    if (m == 0 || m > kMaxContenders) {
      throw std::invalid_argument("batched priority lock supports 1..64 contenders, got " + std::to_string(m));
    }
  }

  BasicBatchedPriorityLock(const BasicBatchedPriorityLock&) = delete;
  BasicBatchedPriorityLock& operator=(const BasicBatchedPriorityLock&) = delete;

  AcquireTicket acquire(std::uint32_t priority, std::uint32_t core) {
    if constexpr (Atomics::kInstrumented) {
      if (core >= m_) contract_violation("core index " + std::to_string(core) + " >= m");
    }
    AcquireTicket ticket{.priority = priority, .core = core};

    // Fast path. curr_batch is read before num_waiters, the reverse of the
    // order in which waiters bump them (num_waiters, then curr_batch). A
    // waiter racing with us is therefore either visible in num_waiters or
    // has moved curr_batch and makes the reset CAS fail.
    Word seen = curr_batch_.load(std::memory_order_seq_cst);
    if (num_waiters_.load(std::memory_order_seq_cst) == 0) {
      const Word before = seen;
      if constexpr (Atomics::kInstrumented) {
        if (before != 0) epoch_.fetch_add(1, std::memory_order_seq_cst);
      }
      // A CAS from 0 to 0 changes nothing, so skip the locked instruction.
      ticket.reset_batch = before != 0 && curr_batch_.compare_exchange_strong(seen, 0, std::memory_order_seq_cst);
      if (status_.exchange(1, std::memory_order_seq_cst) == 0) {
        if constexpr (Atomics::kInstrumented) ticket.epoch = epoch_.load(std::memory_order_seq_cst);
        reset_barriers(core);
        return ticket;
      }
    }

    num_waiters_.fetch_add(1, std::memory_order_seq_cst);
    const Word batch = curr_batch_.fetch_add(1, std::memory_order_seq_cst) >> k_;
    ticket.batch = batch;
    if constexpr (Atomics::kInstrumented) ticket.epoch = epoch_.load(std::memory_order_seq_cst);

    const Word mine = Word{1} << core;
    Stage stage = Stage::kBatching;
    while (stage != Stage::kAcquired) {
      switch (stage) {
        case Stage::kBatching: stage = settle_batch(batch, mine); break;
        case Stage::kPriority: stage = settle_priority(batch, priority, mine); break;
        case Stage::kFinal: stage = final_stage(batch, priority); break;
        case Stage::kAcquired: break;
      }
    }

    num_waiters_.fetch_sub(1, std::memory_order_seq_cst);
    reset_barriers(core);
    return ticket;
  }

  void release() {
    if constexpr (Atomics::kInstrumented) {
      if (status_.load(std::memory_order_seq_cst) == 0) contract_violation("release of a free batched priority lock");
    }
    // A plain store suffices: the count field cannot exceed m-1 < 2^k, so
    // no concurrent fetch-and-add can carry into the batch ID bits.
    const Word next = next_batch_word(curr_batch_.load(std::memory_order_seq_cst), k_);
    curr_batch_.store(next, std::memory_order_seq_cst);
    status_.store(0, std::memory_order_release);
  }

  unsigned contenders() const noexcept { return m_; }
  unsigned count_bits() const noexcept { return k_; }

  BplSnapshot snapshot() const {
    BplSnapshot s;
    s.status = status_.load(std::memory_order_seq_cst);
    s.num_waiters = num_waiters_.load(std::memory_order_seq_cst);
    s.curr_batch = curr_batch_.load(std::memory_order_seq_cst);
    s.batch_barrier = batch_barrier_.load(std::memory_order_seq_cst);
    s.priority_barrier = priority_barrier_.load(std::memory_order_seq_cst);
    s.settling[0] = settling_[0].load(std::memory_order_seq_cst);
    s.settling[1] = settling_[1].load(std::memory_order_seq_cst);
    s.k = k_;
    return s;
  }

 private:
  enum class Stage { kBatching, kPriority, kFinal, kAcquired };

  Stage settle_batch(Word batch, Word mine) {
    settling_[0].fetch_or(mine, std::memory_order_seq_cst);
    for (;;) {
      Word barrier = batch_barrier_.load(std::memory_order_seq_cst);
      // batch < barrier and batch == barrier share one CAS branch.
      if (batch <= barrier) {
        if (batch_barrier_.compare_exchange_strong(barrier, batch, std::memory_order_seq_cst)) {
          settling_[0].fetch_and(~mine, std::memory_order_seq_cst);
          break;
        }
        continue;
      }
      settling_[0].fetch_and(~mine, std::memory_order_seq_cst);
      Atomics::relax();
    }
    while (settling_[0].load(std::memory_order_acquire) != 0) Atomics::relax();
    // Someone from an older batch may have lowered the barrier after our CAS.
    return batch_barrier_.load(std::memory_order_seq_cst) == batch ? Stage::kPriority : Stage::kBatching;
  }

  Stage settle_priority(Word batch, std::uint32_t priority, Word mine) {
    settling_[1].fetch_or(mine, std::memory_order_seq_cst);
    for (;;) {
      Word barrier = priority_barrier_.load(std::memory_order_seq_cst);
      if (batch_barrier_.load(std::memory_order_seq_cst) != batch) {
        // No longer in the oldest batch (or the barriers were reset by a new
        // holder): give everyone else in stage 1 the same footing.
        priority_barrier_.store(kSentinel, std::memory_order_seq_cst);
        settling_[1].fetch_and(~mine, std::memory_order_seq_cst);
        return Stage::kBatching;
      }
      if (priority <= barrier) {
        if (priority_barrier_.compare_exchange_strong(barrier, priority, std::memory_order_seq_cst)) {
          settling_[1].fetch_and(~mine, std::memory_order_seq_cst);
          break;
        }
        continue;
      }
      settling_[1].fetch_and(~mine, std::memory_order_seq_cst);
      Atomics::relax();
    }
    while (settling_[1].load(std::memory_order_acquire) != 0) Atomics::relax();
    return Stage::kFinal;
  }

  Stage final_stage(Word batch, std::uint32_t priority) {
    for (;;) {
      if (priority_barrier_.load(std::memory_order_acquire) != priority) return Stage::kPriority;
      if (batch_barrier_.load(std::memory_order_acquire) != batch) {
        priority_barrier_.store(kSentinel, std::memory_order_seq_cst);
        return Stage::kBatching;
      }
      // Equal-priority survivors of the same batch: whoever wins the TAS.
      if (status_.exchange(1, std::memory_order_seq_cst) == 0) return Stage::kAcquired;
      Atomics::relax();
    }
  }

  void reset_barriers(std::uint32_t core) {
    if constexpr (Atomics::kInstrumented) {
      const Word mine = Word{1} << core;
      if (((settling_[0].load(std::memory_order_seq_cst) | settling_[1].load(std::memory_order_seq_cst)) & mine) != 0) {
        contract_violation("settling bit leaked by core " + std::to_string(core));
      }
    }
    // Release is enough: nothing the holder reads afterwards has to wait for
    // these stores, and they stay ordered before the release stores in
    // release(). Seq_cst here costs two locked exchanges on x86 and roughly
    // doubles the uncontested path.
    priority_barrier_.store(kSentinel, std::memory_order_release);
    batch_barrier_.store(kSentinel, std::memory_order_release);
  }

  const unsigned m_;
  const unsigned k_;

  typename Atomics::template atomic<std::uint32_t> status_{0};
  typename Atomics::template atomic<std::uint32_t> num_waiters_{0};
  typename Atomics::template atomic<Word> curr_batch_{0};
  typename Atomics::template atomic<Word> batch_barrier_{kSentinel};
  typename Atomics::template atomic<Word> priority_barrier_{kSentinel};
  typename Atomics::template atomic<Word> settling_[2] = {0, 0};
  // Bumped just before every fast-path attempt to clear a nonzero batch
  // counter. Failed attempts add spurious epochs, which only split batches.
  typename Atomics::template atomic<std::uint64_t> epoch_{0};
};

using BatchedPriorityLock = BasicBatchedPriorityLock<>;

}  // namespace bpl
