#include "bpl/trace.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <sstream>
#include <utility>

#include "bpl/batched_priority_lock.hpp"
#include "bpl/cycles.hpp"

namespace bpl {

void contract_violation(const std::string& what) {
  std::fprintf(stderr, "bpl contract violation: %s\n", what.c_str());
  std::abort();
}

std::optional<Discipline> parse_discipline(std::string_view name) noexcept {
  if (name == "SL" || name == "sl" || name == "tas") return Discipline::kSpin;
  if (name == "FL" || name == "fl" || name == "ticket") return Discipline::kFifo;
  if (name == "BPL" || name == "bpl") return Discipline::kBatchedPriority;
  return std::nullopt;
}

TraceRecorder::TraceRecorder(std::size_t cores, std::size_t capacity_per_core, std::size_t reserve)
    : buffers_(cores) {
  for (auto& b : buffers_) {
    b.capacity = capacity_per_core;
    b.events.reserve(std::min(capacity_per_core, reserve));
  }
}

void TraceRecorder::record(std::uint32_t core, TraceKind kind, std::uint32_t priority, const AcquireTicket* ticket) {
  Buffer& b = buffers_[core];
  TraceEvent e;
  e.kind = kind;
  e.core = core;
  e.priority = priority;
  if (ticket != nullptr) {
    e.batch = ticket->batch;
    e.epoch = ticket->epoch;
    e.ticket = ticket->ticket;
  }
  e.seq = seq_.fetch_add(1, std::memory_order_seq_cst);
  e.timestamp_ns = monotonic_ns();
  e.cycles = read_cycles();
  if (b.events.size() >= b.capacity) {
    ++b.dropped;
    return;
  }
  b.events.push_back(e);
}

std::uint64_t TraceRecorder::dropped() const {
  std::uint64_t total = 0;
  for (const auto& b : buffers_) total += b.dropped;
  return total;
}

std::vector<TraceEvent> TraceRecorder::merged() const {
  std::vector<TraceEvent> all;
  for (const auto& b : buffers_) all.insert(all.end(), b.events.begin(), b.events.end());
  std::sort(all.begin(), all.end(), [](const TraceEvent& a, const TraceEvent& b) { return a.seq < b.seq; });
  return all;
}

void Verdict::fail(std::string what) {
  ok = false;
  // Keep reports readable on badly broken runs.
  if (violations.size() < 32) violations.push_back(std::move(what));
}

void Verdict::merge(const Verdict& other) {
  ok = ok && other.ok;
  for (const auto& v : other.violations) {
    if (violations.size() < 32) violations.push_back(v);
  }
  checked = std::max(checked, other.checked);
  max_bypass = std::max(max_bypass, other.max_bypass);
  max_batch_size = std::max(max_batch_size, other.max_batch_size);
  reorderings = std::max(reorderings, other.reorderings);
}

std::vector<Acquisition> pair_events(const std::vector<TraceEvent>& events, Verdict& verdict) {
  struct Open {
    std::optional<Acquisition> current;
    int phase = 0;  // 0 idle, 1 requested, 2 acquired
  };
  std::map<std::uint32_t, Open> open;
  std::vector<Acquisition> out;
  for (const auto& e : events) {
    Open& o = open[e.core];
    switch (e.kind) {
      case TraceKind::kRequest:
        if (o.phase != 0) verdict.fail("core " + std::to_string(e.core) + " requested twice at seq " + std::to_string(e.seq));
        o.current = Acquisition{.core = e.core, .priority = e.priority, .request_seq = e.seq, .request_ns = e.timestamp_ns, .request_cycles = e.cycles};
        o.phase = 1;
        break;
      case TraceKind::kAcquire:
        if (o.phase != 1) {
          verdict.fail("core " + std::to_string(e.core) + " acquired without request at seq " + std::to_string(e.seq));
          o.current = Acquisition{.core = e.core, .priority = e.priority, .request_seq = e.seq, .request_ns = e.timestamp_ns, .request_cycles = e.cycles};
        }
        o.current->acquire_seq = e.seq;
        o.current->acquire_ns = e.timestamp_ns;
        o.current->acquire_cycles = e.cycles;
        o.current->batch = e.batch;
        o.current->epoch = e.epoch;
        o.current->ticket = e.ticket;
        o.phase = 2;
        break;
      case TraceKind::kRelease:
        if (o.phase != 2) {
          verdict.fail("core " + std::to_string(e.core) + " released without acquire at seq " + std::to_string(e.seq));
          break;
        }
        o.current->release_seq = e.seq;
        o.current->release_ns = e.timestamp_ns;
        o.current->release_cycles = e.cycles;
        out.push_back(*o.current);
        o.current.reset();
        o.phase = 0;
        break;
    }
  }
  return out;
}

namespace {

void sort_by_acquire(std::vector<Acquisition>& a) {
  std::sort(a.begin(), a.end(), [](const Acquisition& x, const Acquisition& y) { return x.acquire_seq < y.acquire_seq; });
}

std::string describe(const Acquisition& a) {
  std::ostringstream os;
  os << "core " << a.core << " (P=" << a.priority << ") req@" << a.request_seq << " acq@" << a.acquire_seq << " rel@"
     << a.release_seq;
  if (a.batch) os << " batch " << *a.batch << "/epoch " << a.epoch;
  if (a.ticket) os << " ticket " << *a.ticket;
  return os.str();
}

}  // namespace

Verdict check_mutual_exclusion(std::vector<Acquisition> acquisitions) {
  Verdict v;
  sort_by_acquire(acquisitions);
  v.checked = acquisitions.size();
  for (std::size_t i = 0; i < acquisitions.size(); ++i) {
    const auto& a = acquisitions[i];
    if (a.release_seq < a.acquire_seq) v.fail("release before acquire: " + describe(a));
    if (i + 1 < acquisitions.size() && acquisitions[i + 1].acquire_seq < a.release_seq) {
      v.fail("overlapping critical sections: " + describe(a) + " / " + describe(acquisitions[i + 1]));
    }
  }
  return v;
}

std::vector<std::uint64_t> bypass_counts(const std::vector<Acquisition>& acquisitions) {
  std::vector<std::uint64_t> grants;
  grants.reserve(acquisitions.size());
  for (const auto& a : acquisitions) grants.push_back(a.acquire_seq);
  std::sort(grants.begin(), grants.end());
  std::vector<std::uint64_t> out;
  out.reserve(acquisitions.size());
  for (const auto& a : acquisitions) {
    // A core has one acquisition in flight, so nothing in the open window
    // (request, acquire) belongs to the same core.
    const auto lo = std::upper_bound(grants.begin(), grants.end(), a.request_seq);
    const auto hi = std::lower_bound(grants.begin(), grants.end(), a.acquire_seq);
    out.push_back(hi > lo ? static_cast<std::uint64_t>(hi - lo) : 0);
  }
  return out;
}

Verdict check_bounded_bypass(const std::vector<Acquisition>& acquisitions, unsigned m) {
  Verdict v;
  v.checked = acquisitions.size();
  const auto counts = bypass_counts(acquisitions);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    v.max_bypass = std::max(v.max_bypass, counts[i]);
    if (counts[i] + 1 > m) {
      v.fail("bypassed " + std::to_string(counts[i]) + " times (bound " + std::to_string(m - 1) + "): " +
             describe(acquisitions[i]));
    }
  }
  return v;
}

Verdict check_batch_cardinality(const std::vector<Acquisition>& acquisitions, unsigned m) {
  Verdict v;
  std::map<std::pair<std::uint64_t, std::uint64_t>, std::uint64_t> sizes;
  for (const auto& a : acquisitions) {
    if (!a.batch) continue;
    ++v.checked;
    ++sizes[{a.epoch, *a.batch}];
  }
  for (const auto& [key, n] : sizes) {
    v.max_batch_size = std::max(v.max_batch_size, n);
    if (n + 1 > m) {
      v.fail("batch " + std::to_string(key.second) + " of epoch " + std::to_string(key.first) + " holds " +
             std::to_string(n) + " tickets (bound " + std::to_string(m - 1) + ")");
    }
  }
  return v;
}

Verdict check_batch_fifo(std::vector<Acquisition> acquisitions) {
  Verdict v;
  sort_by_acquire(acquisitions);
  std::map<std::uint64_t, const Acquisition*> latest;  // per epoch
  for (const auto& a : acquisitions) {
    if (!a.batch) continue;
    ++v.checked;
    auto [it, fresh] = latest.try_emplace(a.epoch, &a);
    if (!fresh) {
      if (*a.batch < *it->second->batch) {
        v.fail("older batch served after newer one: " + describe(*it->second) + " then " + describe(a));
      }
      it->second = &a;
    }
  }
  return v;
}

Verdict check_ticket_order(std::vector<Acquisition> acquisitions) {
  Verdict v;
  sort_by_acquire(acquisitions);
  std::optional<std::uint64_t> last;
  for (const auto& a : acquisitions) {
    ++v.checked;
    if (!a.ticket) {
      v.fail("ticket-lock acquisition without ticket: " + describe(a));
      continue;
    }
    if (last && *a.ticket != *last + 1) {
      v.fail("ticket " + std::to_string(*a.ticket) + " granted after ticket " + std::to_string(*last));
    }
    last = a.ticket;
  }
  return v;
}

std::uint64_t count_reorderings(std::vector<Acquisition> acquisitions) {
  sort_by_acquire(acquisitions);
  std::uint64_t later_min = ~std::uint64_t{0};
  std::uint64_t n = 0;
  for (auto it = acquisitions.rbegin(); it != acquisitions.rend(); ++it) {
    if (it->request_seq > later_min) ++n;
    later_min = std::min(later_min, it->request_seq);
  }
  return n;
}

}  // namespace bpl
