#pragma once

#include <cstdint>

#include "bpl/trace.hpp"

#if defined(__x86_64__) || defined(__i386__)
#include <x86intrin.h>
#endif

namespace bpl {

// Serialized read of the CPU cycle counter. Falls back to the monotonic
// clock (nanoseconds) where no user-readable counter exists.
inline std::uint64_t read_cycles() noexcept {
#if defined(__x86_64__) || defined(__i386__)
  _mm_lfence();
  const std::uint64_t t = __rdtsc();
  _mm_lfence();
  return t;
#elif defined(__aarch64__)
  std::uint64_t t;
  asm volatile("isb; mrs %0, cntvct_el0" : "=r"(t)::"memory");
  return t;
#else
  return static_cast<std::uint64_t>(monotonic_ns());
#endif
}

}  // namespace bpl
