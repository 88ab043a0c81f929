#include "bpl/explore.hpp"

#include <boost/context/fiber.hpp>
#include <boost/context/fixedsize_stack.hpp>

#include <algorithm>
#include <exception>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "bpl/batched_priority_lock.hpp"
#include "bpl/tas_lock.hpp"
#include "bpl/ticket_lock.hpp"
#include "bpl/trace.hpp"

namespace ctx = boost::context;

namespace bpl::explore {

namespace {
thread_local Scheduler* t_active = nullptr;
}

struct Scheduler::Thread {
  std::function<void()> body;
  ctx::fiber sink;
  bool done = false;
  bool spinning = false;
  std::exception_ptr error;
  // Declared last so an unfinished fiber unwinds while body is still alive.
  ctx::fiber fiber;
};

Scheduler::Scheduler(std::size_t stack_bytes) : stack_bytes_(stack_bytes) {}

Scheduler::~Scheduler() {
  // Unfinished fibers are unwound by their destructors; they must see this
  // scheduler as active so their pending point() calls resolve.
  Scheduler* saved = t_active;
  t_active = this;
  threads_.clear();
  t_active = saved;
}

ThreadId Scheduler::spawn(std::function<void()> body) {
  const ThreadId id = threads_.size();
  auto th = std::make_unique<Thread>();
  th->body = std::move(body);
  Thread* raw = th.get();
  th->fiber = ctx::fiber(std::allocator_arg, ctx::fixedsize_stack(stack_bytes_), [raw](ctx::fiber&& sink) {
    raw->sink = std::move(sink);
    try {
      raw->body();
    } catch (const ctx::detail::forced_unwind&) {
      throw;
    } catch (...) {
      raw->error = std::current_exception();
    }
    raw->done = true;
    return std::move(raw->sink);
  });
  threads_.push_back(std::move(th));
  return id;
}

bool Scheduler::step(ThreadId t) {
  Thread& th = *threads_.at(t);
  if (th.done) return false;
  Scheduler* saved = t_active;
  t_active = this;
  running_ = t;
  in_step_ = true;
  th.spinning = false;
  ++steps_;
  th.fiber = std::move(th.fiber).resume();
  in_step_ = false;
  t_active = saved;
  if (th.error) std::rethrow_exception(std::exchange(th.error, nullptr));
  return !th.done;
}

bool Scheduler::run_until_spinning(ThreadId t, std::size_t max_steps) {
  for (std::size_t i = 0; i < max_steps; ++i) {
    if (!step(t)) return false;
    if (threads_[t]->spinning) return true;
  }
  return false;
}

bool Scheduler::run_to_completion(ThreadId t, std::size_t max_steps) {
  for (std::size_t i = 0; i < max_steps; ++i) {
    if (!step(t)) return true;
  }
  return finished(t);
}

bool Scheduler::finished(ThreadId t) const { return threads_.at(t)->done; }

bool Scheduler::spinning(ThreadId t) const { return threads_.at(t)->spinning; }

void Scheduler::point() {
  Scheduler* s = t_active;
  if (s == nullptr || !s->in_step_) return;
  Thread& th = *s->threads_[s->running_];
  th.sink = std::move(th.sink).resume();
}

void Scheduler::relax() {
  Scheduler* s = t_active;
  if (s == nullptr || !s->in_step_) return;
  s->threads_[s->running_]->spinning = true;
}

// ---------------------------------------------------------------------------

std::string ExploreReport::summary() const {
  std::ostringstream os;
  os << executions << " executions (" << (exhausted ? "exhausted" : "truncated") << "), longest " << longest_execution
     << " steps; livelocks=" << livelocks << " exclusion=" << exclusion_violations
     << " ticket-order=" << ticket_order_violations << " incomplete=" << incomplete_acquisitions << "; max bypass "
     << max_bypass << " (exceeded in " << bypass_exceeded << "), max batch " << max_batch_size << " (exceeded in "
     << batch_size_exceeded << "), batch-order inversions " << batch_order_inversions;
  return os.str();
}

namespace {

// Picks the next thread given the scheduler state; returns the choice.
struct Chooser {
  virtual ~Chooser() = default;
  virtual ThreadId choose(std::size_t step, ThreadId fallback, const std::vector<ThreadId>& others,
                          bool may_preempt) = 0;
};

struct Outcome {
  bool livelock = false;
  bool exclusion = false;
  std::uint64_t steps = 0;
  std::vector<TraceEvent> events;
  std::vector<std::pair<std::size_t, ThreadId>> switches;  // forced picks
};

std::vector<std::uint32_t> resolve_priorities(const ExploreOptions& o) {
  if (!o.priorities.empty()) {
    if (o.priorities.size() != o.threads) throw std::invalid_argument("one priority per thread required");
    return o.priorities;
  }
  std::vector<std::uint32_t> p(o.threads);
  for (unsigned i = 0; i < o.threads; ++i) p[i] = o.threads - i;  // thread 0 has the lowest priority
  return p;
}

template <class Lock>
Outcome run_once(const ExploreOptions& o, Lock& lock, Chooser& chooser) {
  const auto priorities = resolve_priorities(o);
  Outcome out;
  Scheduler sched;
  int in_cs = 0;
  ScheduledAtomic<int> probe{0};

  for (unsigned t = 0; t < o.threads; ++t) {
    sched.spawn([&, t] {
      const std::uint32_t prio = priorities[t];
      for (unsigned c = 0; c < o.cycles; ++c) {
        out.events.push_back(TraceEvent{.kind = TraceKind::kRequest, .core = t, .priority = prio, .seq = out.events.size()});
        AcquireTicket ticket = lock.acquire(prio, t);
        if (in_cs++ != 0) out.exclusion = true;
        out.events.push_back(TraceEvent{.kind = TraceKind::kAcquire,
                                        .core = t,
                                        .priority = prio,
                                        .batch = ticket.batch,
                                        .epoch = ticket.epoch,
                                        .ticket = ticket.ticket,
                                        .seq = out.events.size()});
        probe.load();  // lets other contenders run while this one holds the lock
        --in_cs;
        out.events.push_back(TraceEvent{.kind = TraceKind::kRelease, .core = t, .priority = prio, .seq = out.events.size()});
        lock.release();
      }
    });
  }

  ThreadId current = 0;
  bool started = false;
  unsigned preemptions = 0;
  std::vector<ThreadId> others;
  for (std::size_t s = 0;; ++s) {
    bool any = false;
    for (ThreadId t = 0; t < sched.size(); ++t) any = any || !sched.finished(t);
    if (!any) break;
    if (sched.steps() >= o.max_steps) {
      out.livelock = true;
      break;
    }
    ThreadId fallback = 0;
    if (started && !sched.finished(current) && !sched.spinning(current)) {
      fallback = current;
    } else {
      const ThreadId from = started ? current + 1 : 0;
      for (std::size_t k = 0; k < sched.size(); ++k) {
        const ThreadId t = (from + k) % sched.size();
        if (!sched.finished(t)) {
          fallback = t;
          break;
        }
      }
    }
    others.clear();
    for (ThreadId t = 0; t < sched.size(); ++t) {
      if (t != fallback && !sched.finished(t)) others.push_back(t);
    }
    const ThreadId pick = chooser.choose(s, fallback, others, preemptions < o.preemption_bound);
    if (pick != fallback) {
      ++preemptions;
      out.switches.emplace_back(s, pick);
    }
    sched.step(pick);
    current = pick;
    started = true;
  }
  out.steps = sched.steps();
  return out;
}

Outcome run_discipline(const ExploreOptions& o, Chooser& chooser) {
  switch (o.discipline) {
    case Discipline::kSpin: {
      BasicTasLock<ScheduledAtomics> lock;
      return run_once(o, lock, chooser);
    }
    case Discipline::kFifo: {
      BasicTicketLock<ScheduledAtomics> lock;
      return run_once(o, lock, chooser);
    }
    case Discipline::kBatchedPriority: {
      BasicBatchedPriorityLock<ScheduledAtomics> lock(o.threads);
      return run_once(o, lock, chooser);
    }
  }
  throw std::logic_error("unknown discipline");
}

std::string describe_schedule(const Outcome& out) {
  std::ostringstream os;
  os << "schedule switches:";
  for (const auto& [step, t] : out.switches) os << " @" << step << "->T" << t;
  return os.str();
}

void account(const ExploreOptions& o, const Outcome& out, ExploreReport& r) {
  ++r.executions;
  r.total_steps += out.steps;
  r.longest_execution = std::max(r.longest_execution, out.steps);
  auto note = [&](const std::string& what) {
    if (r.failures.size() < 16) r.failures.push_back(what + " [" + describe_schedule(out) + "]");
  };
  if (out.livelock) {
    ++r.livelocks;
    note("no termination within " + std::to_string(o.max_steps) + " steps");
    return;
  }
  Verdict pairing;
  const auto acquisitions = pair_events(out.events, pairing);
  if (!pairing.ok || acquisitions.size() != static_cast<std::size_t>(o.threads) * o.cycles) {
    ++r.incomplete_acquisitions;
    note("only " + std::to_string(acquisitions.size()) + " acquisitions completed");
  }
  if (out.exclusion || !check_mutual_exclusion(acquisitions).ok) {
    ++r.exclusion_violations;
    note("mutual exclusion violated");
  }
  if (o.discipline == Discipline::kFifo) {
    if (!check_ticket_order(acquisitions).ok) {
      ++r.ticket_order_violations;
      note("ticket order violated");
    }
  }
  if (o.discipline != Discipline::kSpin) {
    const auto bypass = check_bounded_bypass(acquisitions, o.threads);
    r.max_bypass = std::max(r.max_bypass, bypass.max_bypass);
    if (!bypass.ok) ++r.bypass_exceeded;
  }
  if (o.discipline == Discipline::kBatchedPriority) {
    const auto card = check_batch_cardinality(acquisitions, o.threads);
    r.max_batch_size = std::max(r.max_batch_size, card.max_batch_size);
    if (!card.ok) ++r.batch_size_exceeded;
    if (!check_batch_fifo(acquisitions).ok) ++r.batch_order_inversions;
  }
}

class DepthFirst final : public Chooser {
 public:
  ThreadId choose(std::size_t step, ThreadId fallback, const std::vector<ThreadId>& others, bool may_preempt) override {
    if (step < stack_.size()) {
      auto& d = stack_[step];
      return d.options[d.index];
    }
    Decision d;
    d.options.push_back(fallback);
    if (may_preempt) d.options.insert(d.options.end(), others.begin(), others.end());
    stack_.push_back(std::move(d));
    return fallback;
  }

  // Moves to the next unexplored schedule; false when none are left.
  bool advance(std::size_t executed_steps) {
    if (stack_.size() > executed_steps) stack_.resize(executed_steps);
    while (!stack_.empty()) {
      auto& d = stack_.back();
      if (d.index + 1 < d.options.size()) {
        ++d.index;
        return true;
      }
      stack_.pop_back();
    }
    return false;
  }

 private:
  struct Decision {
    std::vector<ThreadId> options;
    std::size_t index = 0;
  };
  std::vector<Decision> stack_;
};

class RandomChooser final : public Chooser {
 public:
  RandomChooser(std::uint64_t seed, double p) : rng_(seed), p_(p) {}
  ThreadId choose(std::size_t, ThreadId fallback, const std::vector<ThreadId>& others, bool may_preempt) override {
    if (!may_preempt || others.empty()) return fallback;
    if (std::bernoulli_distribution(p_)(rng_)) {
      return others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng_)];
    }
    return fallback;
  }

 private:
  std::mt19937_64 rng_;
  double p_;
};

}  // namespace

ExploreReport explore(const ExploreOptions& options) {
  if (options.threads == 0) throw std::invalid_argument("explore needs at least one thread");
  ExploreReport report;
  DepthFirst dfs;
  for (;;) {
    const Outcome out = run_discipline(options, dfs);
    account(options, out, report);
    // Decisions are recorded per scheduling step, one per Scheduler::step.
    if (!dfs.advance(out.steps)) {
      report.exhausted = true;
      break;
    }
    if (options.max_executions != 0 && report.executions >= options.max_executions) break;
  }
  return report;
}

ExploreReport explore_random(const ExploreOptions& options, std::uint64_t runs, std::uint64_t seed,
                             double switch_probability) {
  ExploreReport report;
  for (std::uint64_t r = 0; r < runs; ++r) {
    RandomChooser chooser(seed + r * 0x9E3779B97F4A7C15ull, switch_probability);
    account(options, run_discipline(options, chooser), report);
  }
  report.exhausted = false;
  return report;
}

}  // namespace bpl::explore
