#pragma once

#include <atomic>
#include <sched.h>

#if defined(__x86_64__) || defined(__i386__)
#include <immintrin.h>
#endif

namespace bpl {

inline void cpu_relax() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  _mm_pause();
#elif defined(__aarch64__)
  asm volatile("yield" ::: "memory");
#else
  std::atomic_signal_fence(std::memory_order_seq_cst);
#endif
}

// Spin-loop hint for contenders that own their core.
struct PauseRelax {
  static void relax() noexcept { cpu_relax(); }
};

// Spin-loop hint for oversubscribed runs: hands the core to the next
// runnable contender instead of burning the rest of the time slice.
struct YieldRelax {
  static void relax() noexcept { ::sched_yield(); }
};

// Atomic-primitive policy consumed by the lock templates.
//
// Locks only touch shared words through `atomic<T>` and only hint through
// `relax()`. `kInstrumented` turns on epoch tracking for batch verification
// and the holder / settling-bit assertions; benchmark builds leave it off.
template <class Relax = PauseRelax, bool Instrumented = false>
struct NativeAtomics {
  template <class T>
  using atomic = std::atomic<T>;

  static constexpr bool kInstrumented = Instrumented;

  static void relax() noexcept { Relax::relax(); }
};

using FastAtomics = NativeAtomics<PauseRelax, false>;
using TracedAtomics = NativeAtomics<PauseRelax, true>;
using YieldingTracedAtomics = NativeAtomics<YieldRelax, true>;

}  // namespace bpl
