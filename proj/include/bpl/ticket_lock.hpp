#pragma once

#include <cstdint>

#include "bpl/atomics.hpp"
#include "bpl/ticket.hpp"

namespace bpl {

// FIFO ticket lock (FL): a request counter bumped by fetch-and-add at acquire
// and a release counter bumped by the holder.
template <class Atomics = FastAtomics>
class BasicTicketLock {
 public:
  BasicTicketLock() = default;
  BasicTicketLock(std::uint64_t request, std::uint64_t release) : request_(request), release_(release) {}
  BasicTicketLock(const BasicTicketLock&) = delete;
  BasicTicketLock& operator=(const BasicTicketLock&) = delete;

  AcquireTicket acquire(std::uint32_t priority = 0, std::uint32_t core = 0) {
    const std::uint64_t mine = request_.fetch_add(1, std::memory_order_seq_cst);
    while (release_.load(std::memory_order_acquire) != mine) {
      Atomics::relax();
    }
    return AcquireTicket{.priority = priority, .core = core, .ticket = mine};
  }

  void release() { release_.fetch_add(1, std::memory_order_seq_cst); }

  std::uint64_t requests() const { return request_.load(std::memory_order_acquire); }
  std::uint64_t releases() const { return release_.load(std::memory_order_acquire); }

 private:
  typename Atomics::template atomic<std::uint64_t> request_{0};
  typename Atomics::template atomic<std::uint64_t> release_{0};
};

using TicketLock = BasicTicketLock<>;

}  // namespace bpl
