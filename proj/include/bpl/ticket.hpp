#pragma once

#include <concepts>
#include <cstdint>
#include <optional>
#include <string_view>

namespace bpl {

// What a contender learned while acquiring a lock.
struct AcquireTicket {
  std::uint32_t priority = 0;  // lower value = higher priority
  std::uint32_t core = 0;

  // BPL: batch ID read at the slow-path fetch-and-add; empty on the fast path.
  std::optional<std::uint64_t> batch;
  // BPL (instrumented): number of batch-counter resets observed. Batch IDs are
  // only comparable between tickets of the same epoch.
  std::uint64_t epoch = 0;
  // BPL: this acquisition cleared a nonzero batch counter on the fast path.
  bool reset_batch = false;

  // FL: the request counter value drawn at acquire.
  std::optional<std::uint64_t> ticket;

  bool fast_path() const noexcept { return !batch.has_value() && !ticket.has_value(); }
};

enum class Discipline { kSpin, kFifo, kBatchedPriority };

constexpr std::string_view to_string(Discipline d) noexcept {
  switch (d) {
    case Discipline::kSpin: return "SL";
    case Discipline::kFifo: return "FL";
    case Discipline::kBatchedPriority: return "BPL";
  }
  return "?";
}

std::optional<Discipline> parse_discipline(std::string_view name) noexcept;

// Uniform acquire/release surface shared by all three disciplines.
template <class L>
concept LockDiscipline = requires(L& lock, std::uint32_t priority, std::uint32_t core) {
  { lock.acquire(priority, core) } -> std::same_as<AcquireTicket>;
  { lock.release() } -> std::same_as<void>;
};

}  // namespace bpl
