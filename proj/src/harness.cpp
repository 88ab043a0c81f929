#include "bpl/harness.hpp"

#include <pthread.h>
#include <sched.h>
#include <sys/resource.h>
#include <sys/utsname.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <fstream>
#include <functional>
#include <latch>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <type_traits>

#include "bpl/atomics.hpp"
#include "bpl/batched_priority_lock.hpp"
#include "bpl/cycles.hpp"
#include "bpl/tas_lock.hpp"
#include "bpl/ticket_lock.hpp"

namespace bpl::bench {

std::string_view to_string(ArrivalScheme a) noexcept { return a == ArrivalScheme::kEqual ? "equal" : "skewed"; }

std::optional<ArrivalScheme> parse_arrival(std::string_view name) noexcept {
  if (name == "equal") return ArrivalScheme::kEqual;
  if (name == "skewed") return ArrivalScheme::kSkewed;
  return std::nullopt;
}

std::optional<SchedMode> parse_sched(std::string_view name) noexcept {
  if (name == "normal") return SchedMode::kNormal;
  if (name == "realtime" || name == "fifo") return SchedMode::kRealtime;
  return std::nullopt;
}

std::vector<std::string> BenchConfig::validate() const {
  std::vector<std::string> bad;
  if (m < 1 || m > 64) bad.push_back("m: thread count must lie in [1, 64], got " + std::to_string(m));
  if (!(lambda_ratio > 0) || lambda_ratio > 1.0) {
    bad.push_back("lambda: aggregate rate must lie in (0, 1] times the service rate, got " +
                  std::to_string(lambda_ratio));
  }
  if (!(cs_us > 0) || !std::isfinite(cs_us)) bad.push_back("cs_us: critical section length must be positive");
  if (budget == 0) bad.push_back("budget: request budget must be positive");
  if (!pinning.empty() && pinning.size() != m) {
    bad.push_back("pinning: need one CPU per thread, got " + std::to_string(pinning.size()) + " for " +
                  std::to_string(m) + " threads");
  }
  for (int cpu : pinning) {
    if (cpu < 0 || cpu >= CPU_SETSIZE) bad.push_back("pinning: bad CPU index " + std::to_string(cpu));
  }
  return bad;
}

std::vector<double> BenchConfig::rates_per_us() const {
  const double aggregate = lambda_ratio / cs_us;
  std::vector<double> rates(m);
  const double total_weight = m * (m + 1) / 2.0;
  for (unsigned i = 0; i < m; ++i) {
    rates[i] = arrival == ArrivalScheme::kEqual ? aggregate / m : aggregate * (i + 1) / total_weight;
  }
  return rates;
}

std::vector<int> parse_cpu_list(std::string_view text) {
  std::vector<int> cpus;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    std::size_t used = 0;
    int cpu = 0;
    try {
      cpu = std::stoi(item.substr(b), &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad CPU list entry '" + item + "'");
    }
    if (item.find_first_not_of(" \t", b + used) != std::string::npos || cpu < 0) {
      throw std::invalid_argument("bad CPU list entry '" + item + "'");
    }
    cpus.push_back(cpu);
  }
  return cpus;
}

std::vector<int> pinning_from_env() {
  const char* v = std::getenv("BPL_PIN_CPUS");
  if (v == nullptr || *v == '\0') return {};
  return parse_cpu_list(v);
}

namespace {

std::vector<int> allowed_cpus() {
  cpu_set_t set;
  CPU_ZERO(&set);
  std::vector<int> cpus;
  if (sched_getaffinity(0, sizeof set, &set) == 0) {
    for (int c = 0; c < CPU_SETSIZE; ++c) {
      if (CPU_ISSET(c, &set)) cpus.push_back(c);
    }
  }
  if (cpus.empty()) cpus.push_back(0);
  return cpus;
}

std::uint64_t involuntary_switches() {
  rusage u{};
  if (getrusage(RUSAGE_THREAD, &u) != 0) return 0;
  return static_cast<std::uint64_t>(u.ru_nivcsw);
}

struct Placement {
  std::vector<int> cpus;  // per thread
  bool explicit_map = false;
  bool oversubscribed = false;
  unsigned usable = 0;
};

Placement place(unsigned threads, std::vector<int> requested) {
  Placement p;
  const auto allowed = allowed_cpus();
  p.usable = static_cast<unsigned>(allowed.size());
  if (requested.empty()) requested = pinning_from_env();
  if (!requested.empty()) {
    if (requested.size() != threads) {
      throw std::invalid_argument("pinning map has " + std::to_string(requested.size()) + " entries for " +
                                  std::to_string(threads) + " threads");
    }
    p.cpus = std::move(requested);
    p.explicit_map = true;
  } else {
    for (unsigned i = 0; i < threads; ++i) p.cpus.push_back(allowed[i % allowed.size()]);
  }
  const std::set<int> distinct(p.cpus.begin(), p.cpus.end());
  p.oversubscribed = threads > distinct.size();
  return p;
}

// Starts one thread per body index, pins it, optionally moves it to the
// real-time FIFO class, then releases all of them at once. Workers block on
// the latch while being configured, so a real-time thread never spins
// against a driver that still has threads to set up.
RunEnvironment run_workers(unsigned n, const Placement& placement, SchedMode mode,
                           const std::function<void(unsigned)>& body) {
  RunEnvironment env;
  env.cpus = placement.usable;
  env.oversubscribed = placement.oversubscribed;
  const bool want_rt = mode == SchedMode::kRealtime;

  std::latch start(1);
  std::atomic<bool> cancelled{false};
  std::vector<std::uint64_t> switches(n, 0);
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(n);
  for (unsigned i = 0; i < n; ++i) {
    threads.emplace_back([&, i] {
      start.wait();
      if (cancelled.load()) return;
      const auto before = involuntary_switches();
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      switches[i] = involuntary_switches() - before;
    });
  }

  std::string fatal;
  for (unsigned i = 0; i < n && fatal.empty(); ++i) {
    cpu_set_t set;
    CPU_ZERO(&set);
    CPU_SET(placement.cpus[i], &set);
    if (int rc = pthread_setaffinity_np(threads[i].native_handle(), sizeof set, &set); rc != 0) {
      const std::string msg = "cannot pin thread " + std::to_string(i) + " to CPU " +
                              std::to_string(placement.cpus[i]) + ": " + std::strerror(rc);
      if (placement.explicit_map) {
        fatal = msg;
      } else if (env.warnings.empty() || env.warnings.back() != msg) {
        env.warnings.push_back(msg);
      }
    }
  }
  if (fatal.empty() && want_rt) {
    env.realtime = true;
    sched_param param{};
    param.sched_priority = std::min(10, sched_get_priority_max(SCHED_FIFO));
    for (unsigned i = 0; i < n; ++i) {
      if (int rc = pthread_setschedparam(threads[i].native_handle(), SCHED_FIFO, &param); rc != 0) {
        fatal = std::string("real-time scheduling unavailable: ") + std::strerror(rc);
        env.realtime = false;
        break;
      }
    }
  }

  if (!fatal.empty()) cancelled.store(true);
  start.count_down();
  for (auto& t : threads) t.join();
  if (!fatal.empty()) throw std::runtime_error(fatal);
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (auto s : switches) env.involuntary_switches += s;
  // Yielding shows up in the same counter, so it only means preemption when
  // every contender has a CPU of its own.
  if (env.involuntary_switches > 0 && !env.oversubscribed) {
    env.warnings.push_back("contenders were preempted " + std::to_string(env.involuntary_switches) + " times");
  }
  return env;
}

template <class Atomics, class Fn>
void with_lock(Discipline d, unsigned m, Fn&& fn) {
  switch (d) {
    case Discipline::kSpin: {
      BasicTasLock<Atomics> lock;
      fn(lock);
      return;
    }
    case Discipline::kFifo: {
      BasicTicketLock<Atomics> lock;
      fn(lock);
      return;
    }
    case Discipline::kBatchedPriority: {
      BasicBatchedPriorityLock<Atomics> lock(m);
      fn(lock);
      return;
    }
  }
}

std::mt19937_64 thread_rng(std::uint64_t seed, unsigned thread) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), thread};
  return std::mt19937_64(seq);
}

// When contenders share a CPU every wait, including the critical section's
// busy-wait, hands the CPU on so the others can arrive and settle while the
// lock is held, as they would on their own cores.
template <class Relax>
constexpr bool kShared = std::is_same_v<Relax, YieldRelax>;

template <class Relax>
void spin_until_ns(std::int64_t deadline) {
  while (monotonic_ns() < deadline) Relax::relax();
}

template <class Relax>
void busy_cycles(std::uint64_t cycles) {
  const std::uint64_t end = read_cycles() + cycles;
  while (read_cycles() < end) {
    if constexpr (kShared<Relax>) Relax::relax();
  }
}

template <class Relax>
RunEnvironment contended_impl(const BenchConfig& config, const Placement& placement, TraceRecorder& recorder) {
  using Atomics = NativeAtomics<Relax, true>;
  const auto rates = config.rates_per_us();
  const auto cs_cycles = static_cast<std::uint64_t>(config.cs_us * 1000.0 * cycles_per_ns());
  alignas(64) std::atomic<std::uint64_t> issued{0};
  RunEnvironment env;
  with_lock<Atomics>(config.discipline, config.m, [&](auto& lock) {
    env = run_workers(config.m, placement, config.sched, [&](unsigned i) {
      const std::uint32_t priority = i + 1;
      auto rng = thread_rng(config.seed, i);
      // Exponential think time in nanoseconds.
      std::exponential_distribution<double> think(rates[i] / 1000.0);
      std::int64_t next = monotonic_ns() + static_cast<std::int64_t>(think(rng));
      while (issued.fetch_add(1, std::memory_order_relaxed) < config.budget) {
        spin_until_ns<Relax>(next);
        recorder.record(i, TraceKind::kRequest, priority);
        const AcquireTicket ticket = lock.acquire(priority, i);
        recorder.record(i, TraceKind::kAcquire, priority, &ticket);
        busy_cycles<Relax>(cs_cycles);
        recorder.record(i, TraceKind::kRelease, priority, &ticket);
        lock.release();
        next = monotonic_ns() + static_cast<std::int64_t>(think(rng));
      }
    });
  });
  return env;
}

template <class Relax>
RunEnvironment stress_impl(const StressConfig& config, const Placement& placement, TraceRecorder& recorder,
                           std::uint64_t& intrusions, std::uint64_t& counted) {
  using Atomics = NativeAtomics<Relax, true>;
  constexpr std::uint32_t kFree = ~std::uint32_t{0};
  alignas(64) std::atomic<std::uint64_t> issued{0};
  alignas(64) std::atomic<std::uint32_t> owner{kFree};
  std::atomic<std::uint64_t> seen_intruders{0};
  std::uint64_t counter = 0;  // only touched under the lock
  RunEnvironment env;
  with_lock<Atomics>(config.discipline, config.threads, [&](auto& lock) {
    env = run_workers(config.threads, placement, config.sched, [&](unsigned i) {
      const std::uint32_t priority = i + 1;
      auto rng = thread_rng(config.seed, i);
      while (issued.fetch_add(1, std::memory_order_relaxed) < config.acquisitions) {
        recorder.record(i, TraceKind::kRequest, priority);
        const AcquireTicket ticket = lock.acquire(priority, i);
        recorder.record(i, TraceKind::kAcquire, priority, &ticket);
        if (owner.exchange(i, std::memory_order_relaxed) != kFree) seen_intruders.fetch_add(1);
        counter = counter + 1;
        if constexpr (kShared<Relax>) {
          if (rng() & 1) Relax::relax();
        }
        if (owner.exchange(kFree, std::memory_order_relaxed) != i) seen_intruders.fetch_add(1);
        recorder.record(i, TraceKind::kRelease, priority, &ticket);
        lock.release();
        if constexpr (kShared<Relax>) {
          if ((rng() & 3) == 0) Relax::relax();
        } else {
          for (auto spins = rng() & 63; spins > 0; --spins) cpu_relax();
        }
      }
    });
  });
  intrusions = seen_intruders.load();
  counted = counter;
  return env;
}

double seconds_since(std::int64_t t0) { return static_cast<double>(monotonic_ns() - t0) / 1e9; }

std::vector<BenchSample> collect(const TraceRecorder& recorder, Verdict& verdict) {
  if (auto d = recorder.dropped(); d > 0) verdict.fail("trace buffers dropped " + std::to_string(d) + " events");
  auto samples = pair_events(recorder.merged(), verdict);
  std::sort(samples.begin(), samples.end(),
            [](const BenchSample& a, const BenchSample& b) { return a.acquire_seq < b.acquire_seq; });
  return samples;
}

}  // namespace

ContendedRun run_contended(const BenchConfig& config) {
  if (auto bad = config.validate(); !bad.empty()) throw std::invalid_argument(bad.front());
  const Placement placement = place(config.m, config.pinning);

  ContendedRun run;
  run.config = config;
  // Worst case share of one thread under the skewed scheme is 2 / (m + 1).
  const std::size_t reserve = 3 * (2 * config.budget / config.m + 1024);
  TraceRecorder recorder(config.m, 3 * config.budget + 3, reserve);
  const auto t0 = monotonic_ns();
  run.env = placement.oversubscribed ? contended_impl<YieldRelax>(config, placement, recorder)
                                     : contended_impl<PauseRelax>(config, placement, recorder);
  run.elapsed_s = seconds_since(t0);
  run.samples = collect(recorder, run.verdict);
  run.verdict.merge(verify_trace(run.samples, config.discipline, config.m));
  if (run.samples.size() != config.budget) {
    run.verdict.fail("expected " + std::to_string(config.budget) + " acquisitions, traced " +
                     std::to_string(run.samples.size()));
  }
  return run;
}

StressReport run_stress(const StressConfig& config) {
  if (config.threads < 1 || config.threads > 64) throw std::invalid_argument("threads must lie in [1, 64]");
  const Placement placement = place(config.threads, {});
  StressReport report;
  report.config = config;
  const std::size_t reserve = 3 * (config.acquisitions / config.threads) * 3 / 2 + 1024;
  TraceRecorder recorder(config.threads, 3 * config.acquisitions + 3, reserve);
  std::uint64_t counted = 0;
  const auto t0 = monotonic_ns();
  report.env = placement.oversubscribed
                   ? stress_impl<YieldRelax>(config, placement, recorder, report.intrusions, counted)
                   : stress_impl<PauseRelax>(config, placement, recorder, report.intrusions, counted);
  report.elapsed_s = seconds_since(t0);
  const auto samples = collect(recorder, report.verdict);
  report.acquisitions = samples.size();
  report.verdict.merge(verify_trace(samples, config.discipline, config.threads));
  if (report.intrusions > 0) report.verdict.fail(std::to_string(report.intrusions) + " critical-section intrusions");
  if (counted != config.acquisitions) {
    report.verdict.fail("lost updates: counter " + std::to_string(counted) + " after " +
                        std::to_string(config.acquisitions) + " acquisitions");
  }
  if (config.discipline == Discipline::kSpin) report.verdict.reorderings = count_reorderings(samples);
  return report;
}

Verdict verify_trace(const std::vector<BenchSample>& samples, Discipline discipline, unsigned m) {
  Verdict v = check_mutual_exclusion(samples);
  switch (discipline) {
    case Discipline::kBatchedPriority:
      v.merge(check_bounded_bypass(samples, m));
      v.merge(check_batch_cardinality(samples, m));
      v.merge(check_batch_fifo(samples));
      break;
    case Discipline::kFifo:
      v.merge(check_ticket_order(samples));
      break;
    case Discipline::kSpin:
      v.reorderings = count_reorderings(samples);
      break;
  }
  return v;
}

std::vector<metrics::GrantRecord> grant_records(const std::vector<BenchSample>& samples) {
  std::vector<metrics::GrantRecord> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    out.push_back({.source = s.core,
                   .priority = s.priority,
                   .request_key = s.request_seq,
                   .grant_key = s.acquire_seq,
                   .complete_key = s.release_seq,
                   .delay = static_cast<double>(s.acquire_ns - s.request_ns) / 1000.0});
  }
  return out;
}

metrics::CellRow contended_cell(const ContendedRun& run) {
  auto row = metrics::summarize_cell(run.config.m, grant_records(run.samples), {});
  row.mbs = 0;
  row.lambda_ratio = run.config.lambda_ratio;
  row.policy = std::string(to_string(run.config.discipline));
  row.seed = run.config.seed;
  row.arrival = std::string(to_string(run.config.arrival));
  row.fingerprint = machine_fingerprint();
  return row;
}

double calibrate_timer_overhead(std::size_t reads) {
  std::vector<std::uint64_t> d(std::max<std::size_t>(reads, 1));
  for (auto& x : d) {
    const auto a = read_cycles();
    const auto b = read_cycles();
    if (b < a) throw std::runtime_error("unstable cycle counter: consecutive reads went backwards");
    x = b - a;
  }
  std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
  return static_cast<double>(d[d.size() / 2]);
}

std::uint64_t counter_granularity(std::size_t reads) {
  std::uint64_t g = 0;
  for (std::size_t i = 0; i < reads; ++i) {
    const auto a = read_cycles();
    auto b = read_cycles();
    while (b == a) b = read_cycles();
    if (b < a) throw std::runtime_error("unstable cycle counter: consecutive reads went backwards");
    if (g == 0 || b - a < g) g = b - a;
  }
  return g;
}

double cycles_per_ns() {
  static const double rate = [] {
    const auto n0 = monotonic_ns();
    const auto c0 = read_cycles();
    while (monotonic_ns() - n0 < 20'000'000) cpu_relax();
    const auto n1 = monotonic_ns();
    const auto c1 = read_cycles();
    if (c1 <= c0 || n1 <= n0) throw std::runtime_error("cycle counter calibration failed");
    return static_cast<double>(c1 - c0) / static_cast<double>(n1 - n0);
  }();
  return rate;
}

namespace {

constexpr unsigned kBatchedPairs = 64;

template <class Lock>
OverheadReport time_pairs(Lock& lock, Discipline d, std::size_t n) {
  OverheadReport r;
  r.discipline = d;
  r.samples = n;
  r.timer_overhead = calibrate_timer_overhead();
  // Some virtual machines advance the counter in coarse steps (tens of
  // cycles), which swamps a single uncontested pair. Time a run of pairs per
  // sample instead so one step is well under one cycle per pair.
  const std::uint64_t step = counter_granularity();
  r.pairs_per_sample = step <= 1 ? 1 : kBatchedPairs;
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t0 = read_cycles();
    for (unsigned k = 0; k < r.pairs_per_sample; ++k) {
      lock.acquire(0, 0);
      lock.release();
    }
    const auto t1 = read_cycles();
    if (t1 < t0) throw std::runtime_error("unstable cycle counter: timed region ended before it started");
    s[i] = std::max(0.0, static_cast<double>(t1 - t0) - r.timer_overhead) / r.pairs_per_sample;
  }
  r.first_sample = s[0];
  std::sort(s.begin(), s.end());
  r.min = s.front();
  r.max = s.back();
  r.median = s[(n - 1) / 2];
  r.p999 = s[static_cast<std::size_t>(std::ceil(0.999 * static_cast<double>(n))) - 1];
  r.first_sample_is_max = r.first_sample == r.max;
  return r;
}

}  // namespace

OverheadReport measure_uncontested(Discipline discipline, std::size_t samples) {
  if (samples == 0) throw std::invalid_argument("samples must be positive");
  OverheadReport r;
  with_lock<FastAtomics>(discipline, 8, [&](auto& lock) { r = time_pairs(lock, discipline, samples); });
  return r;
}

void write_overhead_csv(std::ostream& os, const std::vector<OverheadReport>& reports) {
  os << "discipline,min,median,p999,max,samples,pairs_per_sample\n";
  for (const auto& r : reports) {
    os << to_string(r.discipline) << ',' << r.min << ',' << r.median << ',' << r.p999 << ',' << r.max << ','
       << r.samples << ',' << r.pairs_per_sample << '\n';
  }
}

std::string machine_fingerprint() {
  std::string model = "unknown-cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      if (auto c = line.find(':'); c != std::string::npos) model = line.substr(line.find_first_not_of(' ', c + 1));
      break;
    }
  }
  utsname u{};
  const std::string kernel = uname(&u) == 0 ? std::string(u.sysname) + " " + u.release : "unknown-os";
  std::string fp = model + " x" + std::to_string(allowed_cpus().size()) + " " + kernel;
  std::replace(fp.begin(), fp.end(), ',', ' ');
  return fp;
}

}  // namespace bpl::bench
