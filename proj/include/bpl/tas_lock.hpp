#pragma once

#include <cstdint>

#include "bpl/atomics.hpp"
#include "bpl/ticket.hpp"

namespace bpl {

// Unordered test-and-set spinlock (SL).
template <class Atomics = FastAtomics>
class BasicTasLock {
 public:
  BasicTasLock() = default;
  BasicTasLock(const BasicTasLock&) = delete;
  BasicTasLock& operator=(const BasicTasLock&) = delete;

  AcquireTicket acquire(std::uint32_t priority = 0, std::uint32_t core = 0) {
    while (status_.exchange(1, std::memory_order_seq_cst) != 0) {
      Atomics::relax();
    }
    return AcquireTicket{.priority = priority, .core = core};
  }

  bool try_acquire() { return status_.exchange(1, std::memory_order_seq_cst) == 0; }

  void release() { status_.store(0, std::memory_order_release); }

  bool held() const { return status_.load(std::memory_order_acquire) != 0; }

 private:
  typename Atomics::template atomic<std::uint32_t> status_{0};
};

using TasLock = BasicTasLock<>;

}  // namespace bpl
