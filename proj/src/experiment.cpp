#include "bpl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "bpl/explore.hpp"

namespace bpl::cli {

namespace fs = std::filesystem;

std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::kSim: return "sim";
    case Mode::kBench: return "bench";
    case Mode::kVerify: return "verify";
  }
  return "?";
}

std::optional<Mode> parse_mode(std::string_view name) noexcept {
  if (name == "sim") return Mode::kSim;
  if (name == "bench") return Mode::kBench;
  if (name == "verify") return Mode::kVerify;
  return std::nullopt;
}

namespace {

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> fields)
    : std::runtime_error("invalid config: " + join(fields, "; ")), fields_(std::move(fields)) {}

KeyValues parse_key_values(std::istream& is) {
  KeyValues kv;
  std::vector<std::string> bad;
  std::string line;
  for (std::size_t lineno = 1; std::getline(is, line); ++lineno) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad.push_back("line " + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      bad.push_back("line " + std::to_string(lineno) + ": empty key");
    } else if (!kv.emplace(key, value).second) {
      bad.push_back(key + ": given twice (line " + std::to_string(lineno) + ")");
    }
  }
  if (!bad.empty()) throw ConfigError(std::move(bad));
  return kv;
}

namespace {

// Typed reads that collect problems instead of throwing one at a time.
class Reader {
 public:
  explicit Reader(KeyValues values) : values_(std::move(values)) {}

  std::vector<std::string> strings(const std::string& key, const std::string& fallback) {
    const std::string raw = take(key, fallback);
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(raw);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::string string(const std::string& key, const std::string& fallback) { return take(key, fallback); }

  template <class T>
  std::vector<T> numbers(const std::string& key, const std::string& fallback) {
    std::vector<T> out;
    for (const auto& s : strings(key, fallback)) {
      if (auto v = number<T>(key, s)) out.push_back(*v);
    }
    return out;
  }

  template <class T>
  T scalar(const std::string& key, const std::string& fallback) {
    const auto list = numbers<T>(key, fallback);
    if (list.size() != 1) {
      if (errors.empty() || errors.back().rfind(key + ":", 0) != 0) errors.push_back(key + ": expected one value");
      return T{};
    }
    return list.front();
  }

  bool flag(const std::string& key, bool fallback) {
    const std::string v = take(key, fallback ? "true" : "false");
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    errors.push_back(key + ": expected true or false, got '" + v + "'");
    return fallback;
  }

  // Keys present in the input that nothing asked for.
  void reject_unused() {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) errors.push_back(k + ": unknown key");
    }
  }

  KeyValues resolved;
  std::vector<std::string> errors;

 private:
  std::string take(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    const std::string v = it == values_.end() ? fallback : it->second;
    resolved[key] = v;
    return v;
  }

  template <class T>
  std::optional<T> number(const std::string& key, const std::string& s) {
    errno = 0;
    char* end = nullptr;
    if constexpr (std::is_floating_point_v<T>) {
      const double v = std::strtod(s.c_str(), &end);
      if (end != s.c_str() + s.size() || errno != 0 || !std::isfinite(v)) {
        errors.push_back(key + ": not a number: '" + s + "'");
        return std::nullopt;
      }
      return static_cast<T>(v);
    } else {
      if (!s.empty() && s.front() == '-') {
        errors.push_back(key + ": must not be negative: '" + s + "'");
        return std::nullopt;
      }
      const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
      if (end != s.c_str() + s.size() || errno != 0 || v > std::numeric_limits<T>::max()) {
        errors.push_back(key + ": not an unsigned integer: '" + s + "'");
        return std::nullopt;
      }
      return static_cast<T>(v);
    }
  }

  KeyValues values_;
  std::set<std::string> used_;
};

std::vector<Discipline> disciplines(Reader& r, const std::string& key, const std::string& fallback) {
  std::vector<Discipline> out;
  for (const auto& name : r.strings(key, fallback)) {
    if (auto d = parse_discipline(name)) {
      out.push_back(*d);
    } else {
      r.errors.push_back(key + ": unknown discipline '" + name + "' (SL, FL, BPL)");
    }
  }
  return out;
}

void build_sim(Reader& r, ExperimentSpec& spec) {
  const auto ms = r.numbers<unsigned>("m", "64");
  const auto mbs = r.numbers<unsigned>("mbs", "8, 32");
  const auto lambdas = r.numbers<double>("lambda", "0.01, 0.1, 1.0");
  const double mu = r.scalar<double>("mu", "0.01");
  const auto budget = r.scalar<std::uint64_t>("budget", "0");
  std::vector<sim::Policy> policies;
  for (const auto& name : r.strings("policies", "FL, PL, BPL")) {
    if (auto p = sim::parse_policy(name)) {
      policies.push_back(*p);
    } else {
      r.errors.push_back("policies: unknown policy '" + name + "' (FL, PL, BPL)");
    }
  }
  if (ms.empty() || mbs.empty() || lambdas.empty() || policies.empty()) {
    r.errors.push_back("grid: m, mbs, lambda and policies must all be nonempty");
    return;
  }
  std::set<std::string> seen_errors;
  for (unsigned m : ms) {
    for (unsigned b : mbs) {
      for (double l : lambdas) {
        for (auto seed : spec.seeds) {
          for (auto p : policies) {
            sim::SimConfig c;
            c.m = m;
            c.mean_burst_size = b;
            c.burst_rate_ratio = l;
            c.service_rate = mu;
            c.policy = p;
            c.seed = seed;
            c.request_budget = budget;
            for (auto& e : c.validate()) {
              if (seen_errors.insert(e).second) r.errors.push_back(e);
            }
            spec.sim_grid.push_back(c);
          }
        }
      }
    }
  }
}

void build_bench(Reader& r, ExperimentSpec& spec) {
  const auto ms = r.numbers<unsigned>("m", "8");
  const auto ds = disciplines(r, "disciplines", "SL, FL, BPL");
  std::vector<bench::ArrivalScheme> arrivals;
  for (const auto& name : r.strings("arrival", "skewed")) {
    if (auto a = bench::parse_arrival(name)) {
      arrivals.push_back(*a);
    } else {
      r.errors.push_back("arrival: unknown scheme '" + name + "' (equal, skewed)");
    }
  }
  const auto lambdas = r.numbers<double>("lambda", "1.0");
  const double cs_us = r.scalar<double>("cs_us", "70");
  const auto budget = r.scalar<std::uint64_t>("budget", "80000");
  const std::string sched_name = r.string("sched", "normal");
  const auto sched = bench::parse_sched(sched_name);
  if (!sched) r.errors.push_back("sched: expected normal or realtime, got '" + sched_name + "'");
  std::vector<int> pinning;
  try {
    pinning = bench::parse_cpu_list(r.string("pinning", ""));
  } catch (const std::invalid_argument& e) {
    r.errors.push_back(std::string("pinning: ") + e.what());
  }
  spec.bench.overhead_disciplines = disciplines(r, "overhead", "SL, FL, BPL");
  spec.bench.overhead_samples = r.scalar<std::size_t>("overhead_samples", "10000");
  if (spec.bench.overhead_samples == 0 && !spec.bench.overhead_disciplines.empty()) {
    r.errors.push_back("overhead_samples: must be positive");
  }

  std::set<std::string> seen_errors;
  for (unsigned m : ms) {
    for (auto a : arrivals) {
      for (double l : lambdas) {
        for (auto seed : spec.seeds) {
          for (auto d : ds) {
            bench::BenchConfig c;
            c.m = m;
            c.discipline = d;
            c.arrival = a;
            c.lambda_ratio = l;
            c.cs_us = cs_us;
            c.budget = budget;
            c.seed = seed;
            c.pinning = pinning;
            c.sched = sched.value_or(bench::SchedMode::kNormal);
            for (auto& e : c.validate()) {
              if (seen_errors.insert(e).second) r.errors.push_back(e);
            }
            spec.bench.contended.push_back(c);
          }
        }
      }
    }
  }
}

void build_verify(Reader& r, ExperimentSpec& spec) {
  auto& v = spec.verify;
  v.disciplines = disciplines(r, "disciplines", "SL, FL, BPL");
  v.stress_threads = r.scalar<unsigned>("stress_threads", "8");
  v.stress_acquisitions = r.scalar<std::uint64_t>("stress_acquisitions", "1000000");
  v.explore_threads = r.numbers<unsigned>("explore_threads", "2, 3, 4");
  v.explore_cycles = r.scalar<unsigned>("explore_cycles", "2");
  v.preemption_bound = r.scalar<unsigned>("preemption_bound", "2");
  v.explore_max_executions = r.scalar<std::uint64_t>("explore_max_executions", "0");
  v.random_runs = r.scalar<std::uint64_t>("random_runs", "200");
  if (v.disciplines.empty()) r.errors.push_back("disciplines: need at least one");
  if (v.stress_threads < 1 || v.stress_threads > 64) r.errors.push_back("stress_threads: must lie in [1, 64]");
  for (unsigned t : v.explore_threads) {
    if (t < 1 || t > 8) r.errors.push_back("explore_threads: must lie in [1, 8], got " + std::to_string(t));
  }
  if (v.explore_cycles < 1) r.errors.push_back("explore_cycles: must be positive");
}

}  // namespace

ExperimentSpec build_spec(KeyValues values, const KeyValues& overrides) {
  for (const auto& [k, v] : overrides) values[k] = v;
  Reader r(std::move(values));
  ExperimentSpec spec;
  const std::string mode = r.string("mode", "");
  if (auto m = parse_mode(mode)) {
    spec.mode = *m;
  } else {
    r.errors.push_back("mode: expected sim, bench or verify, got '" + mode + "'");
  }
  spec.seeds = r.numbers<std::uint64_t>("seeds", "1");
  if (spec.seeds.empty()) r.errors.push_back("seeds: need at least one seed");
  if (std::set<std::uint64_t>(spec.seeds.begin(), spec.seeds.end()).size() != spec.seeds.size()) {
    r.errors.push_back("seeds: must be distinct");
  }
  spec.out_dir = r.string("out", "results");
  if (spec.out_dir.empty()) r.errors.push_back("out: output directory must be set");
  spec.format = r.string("format", "csv");
  if (spec.format != "csv" && spec.format != "json") r.errors.push_back("format: expected csv or json");
  spec.threads = r.scalar<unsigned>("threads", "0");
  spec.write_traces = r.flag("traces", false);

  if (parse_mode(mode)) {
    switch (spec.mode) {
      case Mode::kSim: build_sim(r, spec); break;
      case Mode::kBench: build_bench(r, spec); break;
      case Mode::kVerify: build_verify(r, spec); break;
    }
    r.reject_unused();
  }
  if (spec.mode == Mode::kSim && spec.sim_grid.empty() && r.errors.empty()) r.errors.push_back("grid: empty");
  if (spec.mode == Mode::kBench && spec.bench.contended.empty() && spec.bench.overhead_disciplines.empty() &&
      r.errors.empty()) {
    r.errors.push_back("grid: empty");
  }
  if (!r.errors.empty()) throw ConfigError(std::move(r.errors));
  spec.resolved = std::move(r.resolved);
  return spec;
}

ExperimentSpec load_spec(const std::string& path, const KeyValues& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config: cannot read '" + path + "'"});
  return build_spec(parse_key_values(in), overrides);
}

namespace {

struct Outcome {
  std::vector<std::string> violations;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  nlohmann::ordered_json details = nlohmann::ordered_json::array();
};

void write_cells(const ExperimentSpec& spec, const std::vector<metrics::CellRow>& rows) {
  const bool json = spec.format == "json";
  std::ofstream out(fs::path(spec.out_dir) / (json ? "cells.json" : "cells.csv"));
  if (json) {
    metrics::write_cells_json(out, rows);
  } else {
    metrics::write_cells_csv(out, rows);
  }
  if (!out) throw std::runtime_error("failed writing cell results to " + spec.out_dir);
}

void normalize_if_possible(std::vector<metrics::CellRow>& rows) {
  std::set<std::string> with_baseline;
  for (const auto& r : rows) {
    if (r.policy == "FL") with_baseline.insert(r.cell_key());
  }
  for (auto& r : rows) {
    if (!with_baseline.count(r.cell_key())) return;
  }
  metrics::normalize(rows, "FL");
}

std::string cell_label(const sim::SimConfig& c) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "m=%u mbs=%u lambda=%g %s seed=%llu", c.m, c.mean_burst_size, c.burst_rate_ratio,
                std::string(sim::to_string(c.policy)).c_str(), static_cast<unsigned long long>(c.seed));
  return buf;
}

void run_sim_mode(const ExperimentSpec& spec, std::ostream& log, Outcome& outcome) {
  const auto& grid = spec.sim_grid;
  std::vector<std::optional<metrics::CellRow>> rows(grid.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex mu;
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(spec.threads ? spec.threads : hw, std::max<std::size_t>(grid.size(), 1)));

  auto work = [&] {
    for (std::size_t i; !stop.load() && (i = next.fetch_add(1)) < grid.size();) {
      try {
        const auto result = sim::run_sim(grid[i]);
        const auto verdict = sim::verify(result);
        auto row = sim::summarize(result);
        if (spec.write_traces) {
          char name[160];
          std::snprintf(name, sizeof name, "trace_m%u_mbs%u_l%g_%s_s%llu.csv", grid[i].m, grid[i].mean_burst_size,
                        grid[i].burst_rate_ratio, std::string(sim::to_string(grid[i].policy)).c_str(),
                        static_cast<unsigned long long>(grid[i].seed));
          std::ofstream t(fs::path(spec.out_dir) / name);
          sim::write_trace_csv(t, result);
        }
        std::lock_guard lock(mu);
        rows[i] = std::move(row);
        if (!verdict.ok) {
          for (const auto& v : verdict.violations) outcome.violations.push_back(cell_label(grid[i]) + ": " + v);
        }
        log << "done " << cell_label(grid[i]) << " max_bypass=" << verdict.max_bypass << "\n";
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        outcome.errors.push_back(cell_label(grid[i]) + ": " + e.what());
        stop.store(true);
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < workers; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::vector<metrics::CellRow> done;
  for (auto& r : rows) {
    if (r) done.push_back(std::move(*r));
  }
  if (done.size() == grid.size()) normalize_if_possible(done);
  write_cells(spec, done);
}

void write_bench_trace(const ExperimentSpec& spec, const bench::ContendedRun& run) {
  const auto& c = run.config;
  char name[160];
  std::snprintf(name, sizeof name, "bench_trace_%s_%s_l%g_s%llu.csv", std::string(to_string(c.discipline)).c_str(),
                std::string(bench::to_string(c.arrival)).c_str(), c.lambda_ratio,
                static_cast<unsigned long long>(c.seed));
  std::ofstream t(fs::path(spec.out_dir) / name);
  t << "thread,priority,request_ns,acquire_ns,release_ns,request_cycles,acquire_cycles,release_cycles,batch,epoch,"
       "ticket\n";
  for (const auto& s : run.samples) {
    t << s.core << ',' << s.priority << ',' << s.request_ns << ',' << s.acquire_ns << ',' << s.release_ns << ','
      << s.request_cycles << ',' << s.acquire_cycles << ',' << s.release_cycles << ','
      << (s.batch ? std::to_string(*s.batch) : "") << ',' << s.epoch << ','
      << (s.ticket ? std::to_string(*s.ticket) : "") << '\n';
  }
}

void run_bench_mode(const ExperimentSpec& spec, std::ostream& log, Outcome& outcome) {
  if (!spec.bench.overhead_disciplines.empty()) {
    std::vector<bench::OverheadReport> reports;
    for (auto d : spec.bench.overhead_disciplines) {
      reports.push_back(bench::measure_uncontested(d, spec.bench.overhead_samples));
      const auto& r = reports.back();
      log << "uncontested " << to_string(d) << ": min " << r.min << " median " << r.median << " p99.9 " << r.p999
          << " max " << r.max << " cycles (timer overhead " << r.timer_overhead << ", first sample " << r.first_sample
          << ")\n";
    }
    std::ofstream out(fs::path(spec.out_dir) / "overhead.csv");
    bench::write_overhead_csv(out, reports);
  }

  std::vector<metrics::CellRow> rows;
  for (const auto& c : spec.bench.contended) {
    bench::ContendedRun run;
    try {
      run = bench::run_contended(c);
    } catch (const std::exception& e) {
      outcome.errors.push_back(std::string(to_string(c.discipline)) + " seed " + std::to_string(c.seed) + ": " +
                               e.what());
      break;
    }
    rows.push_back(bench::contended_cell(run));
    const auto& row = rows.back();
    log << "contended " << to_string(c.discipline) << ' ' << bench::to_string(c.arrival) << " lambda=" << c.lambda_ratio
        << " seed=" << c.seed << ": d_w " << row.d_w << " us, highest-priority delay " << row.d_highest_priority
        << " us, " << run.elapsed_s << " s" << (run.env.realtime ? " (real-time)" : "") << "\n";
    for (const auto& w : run.env.warnings) outcome.warnings.push_back(w);
    for (const auto& v : run.verdict.violations) {
      outcome.violations.push_back(std::string(to_string(c.discipline)) + " seed " + std::to_string(c.seed) + ": " + v);
    }
    if (!run.verdict.ok && run.verdict.violations.empty()) outcome.violations.push_back("unreported violation");
    outcome.details.push_back({{"discipline", std::string(to_string(c.discipline))},
                               {"seed", c.seed},
                               {"elapsed_s", run.elapsed_s},
                               {"realtime", run.env.realtime},
                               {"oversubscribed", run.env.oversubscribed},
                               {"involuntary_switches", run.env.involuntary_switches},
                               {"max_bypass", run.verdict.max_bypass},
                               {"max_batch_size", run.verdict.max_batch_size}});
    if (spec.write_traces) write_bench_trace(spec, run);
  }
  if (rows.size() == spec.bench.contended.size()) normalize_if_possible(rows);
  if (!spec.bench.contended.empty()) write_cells(spec, rows);
}

void run_verify_mode(const ExperimentSpec& spec, std::ostream& log, Outcome& outcome) {
  const auto& plan = spec.verify;
  std::ofstream csv(fs::path(spec.out_dir) / "verify.csv");
  csv << "suite,discipline,threads,checked,ok,max_bypass,max_batch_size,reorderings,detail\n";
  auto record = [&](const std::string& suite, Discipline d, unsigned threads, std::uint64_t checked, bool ok,
                    std::uint64_t bypass, std::uint64_t batch, std::uint64_t reorder, const std::string& detail) {
    csv << suite << ',' << to_string(d) << ',' << threads << ',' << checked << ',' << (ok ? "PASS" : "FAIL") << ','
        << bypass << ',' << batch << ',' << reorder << ',' << detail << '\n';
    csv.flush();
    log << suite << ' ' << to_string(d) << " threads=" << threads << ": " << (ok ? "ok" : "FAILED") << " (" << checked
        << " checked" << (detail.empty() ? "" : ", " + detail) << ")\n";
  };

  for (auto d : plan.disciplines) {
    if (plan.stress_acquisitions == 0) break;
    bench::StressConfig sc;
    sc.discipline = d;
    sc.threads = plan.stress_threads;
    sc.acquisitions = plan.stress_acquisitions;
    sc.seed = spec.seeds.front();
    const auto rep = bench::run_stress(sc);
    std::string detail = std::to_string(rep.elapsed_s) + " s";
    if (rep.env.realtime) detail += " real-time";
    record("stress", d, sc.threads, rep.acquisitions, rep.verdict.ok, rep.verdict.max_bypass,
           rep.verdict.max_batch_size, rep.verdict.reorderings, detail);
    for (const auto& v : rep.verdict.violations) outcome.violations.push_back("stress " + std::string(to_string(d)) + ": " + v);
    for (const auto& w : rep.env.warnings) outcome.warnings.push_back("stress " + std::string(to_string(d)) + ": " + w);
  }

  for (unsigned n : plan.explore_threads) {
    for (auto d : plan.disciplines) {
      explore::ExploreOptions opt;
      opt.discipline = d;
      opt.threads = n;
      opt.cycles = plan.explore_cycles;
      opt.preemption_bound = plan.preemption_bound;
      opt.max_executions = plan.explore_max_executions;
      auto rep = explore::explore(opt);
      record("explore", d, n, rep.executions, rep.ok(), rep.max_bypass, rep.max_batch_size, 0,
             rep.exhausted ? "exhausted" : "capped");
      for (const auto& f : rep.failures) outcome.violations.push_back("explore " + std::string(to_string(d)) + ": " + f);
      if (plan.random_runs > 0) {
        auto rnd = explore::explore_random(opt, plan.random_runs, spec.seeds.front());
        record("random", d, n, rnd.executions, rnd.ok(), rnd.max_bypass, rnd.max_batch_size, 0, "");
        for (const auto& f : rnd.failures) outcome.violations.push_back("random " + std::string(to_string(d)) + ": " + f);
      }
    }
  }
}

}  // namespace

ExitCode run(const ExperimentSpec& spec, std::ostream& log) {
  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  const fs::path probe = fs::path(spec.out_dir) / ".write_probe";
  {
    std::ofstream p(probe);
    if (ec || !p) {
      log << "error: output directory '" << spec.out_dir << "' is not writable\n";
      return ExitCode::kConfigError;
    }
  }
  fs::remove(probe, ec);
  fs::remove(fs::path(spec.out_dir) / "FAILED", ec);

  Outcome outcome;
  try {
    switch (spec.mode) {
      case Mode::kSim: run_sim_mode(spec, log, outcome); break;
      case Mode::kBench: run_bench_mode(spec, log, outcome); break;
      case Mode::kVerify: run_verify_mode(spec, log, outcome); break;
    }
  } catch (const std::exception& e) {
    outcome.errors.push_back(e.what());
  }

  const bool failed = !outcome.violations.empty() || !outcome.errors.empty();
  nlohmann::ordered_json manifest;
  manifest["tool"] = "bplctl";
  manifest["version"] = BPL_VERSION;
  manifest["mode"] = std::string(to_string(spec.mode));
  manifest["status"] = !outcome.errors.empty() ? "error" : (failed ? "violation" : "ok");
  manifest["config"] = spec.resolved;
  manifest["seeds"] = spec.seeds;
  if (spec.mode == Mode::kBench) manifest["machine"] = bench::machine_fingerprint();
  manifest["violations"] = outcome.violations;
  manifest["errors"] = outcome.errors;
  manifest["warnings"] = outcome.warnings;
  if (!outcome.details.empty()) manifest["runs"] = outcome.details;
  std::ofstream(fs::path(spec.out_dir) / "manifest.json") << manifest.dump(2) << "\n";

  for (const auto& w : outcome.warnings) log << "warning: " << w << "\n";
  if (failed) {
    std::ofstream marker(fs::path(spec.out_dir) / "FAILED");
    for (const auto& e : outcome.errors) marker << "error: " << e << "\n";
    for (const auto& v : outcome.violations) marker << "violation: " << v << "\n";
    for (const auto& e : outcome.errors) log << "error: " << e << "\n";
    for (const auto& v : outcome.violations) log << "violation: " << v << "\n";
    return ExitCode::kViolation;
  }
  return ExitCode::kOk;
}

std::vector<CellSummary> aggregate(std::vector<metrics::CellRow> rows) {
  struct Acc {
    CellSummary s;
    std::vector<double> inv, dw, norm, hp;
  };
  std::map<std::pair<std::string, std::string>, Acc> cells;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    char key[128];
    std::snprintf(key, sizeof key, "m=%u mbs=%u lambda=%g %s", r.m, r.mbs, r.lambda_ratio, r.arrival.c_str());
    auto k = std::make_pair(std::string(key), r.policy);
    auto [it, fresh] = cells.try_emplace(k);
    if (fresh) order.push_back(k);
    auto& a = it->second;
    a.s.cell = key;
    a.s.policy = r.policy;
    a.inv.push_back(r.inversion_pct);
    a.dw.push_back(r.d_w);
    a.norm.push_back(r.d_w_normalized.value_or(std::nan("")));
    a.hp.push_back(r.d_highest_priority);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  std::vector<CellSummary> out;
  for (const auto& k : order) {
    auto& a = cells[k];
    a.s.seeds = a.inv.size();
    a.s.inversion_pct_mean = mean(a.inv);
    a.s.inversion_pct_min = *std::min_element(a.inv.begin(), a.inv.end());
    a.s.inversion_pct_max = *std::max_element(a.inv.begin(), a.inv.end());
    a.s.d_w_mean = mean(a.dw);
    a.s.d_w_norm_mean = mean(a.norm);
    a.s.d_w_norm_min = *std::min_element(a.norm.begin(), a.norm.end());
    a.s.d_w_norm_max = *std::max_element(a.norm.begin(), a.norm.end());
    a.s.d_highest_mean = mean(a.hp);
    out.push_back(a.s);
  }
  return out;
}

void summarize(const std::vector<std::string>& paths, std::ostream& out) {
  std::vector<metrics::CellRow> rows;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot read '" + p + "'");
    const int first = in.peek();
    auto part = first == '{' ? metrics::read_cells_json(in) : metrics::read_cells_csv(in);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  metrics::normalize(rows, "FL");
  const auto summary = aggregate(std::move(rows));
  out << std::left << std::setw(36) << "cell" << std::setw(7) << "policy" << std::setw(6) << "seeds" << std::setw(28)
      << "inversion % mean [min, max]" << std::setw(32) << "d_w/d_w(FL) mean [min, max]"
      << "d_highest\n";
  char buf[256];
  for (const auto& s : summary) {
    std::snprintf(buf, sizeof buf, "%-36s%-7s%-6zu%7.2f [%6.2f, %6.2f]      %9.4f [%8.4f, %8.4f]   %.4g\n",
                  s.cell.c_str(), s.policy.c_str(), s.seeds, s.inversion_pct_mean, s.inversion_pct_min,
                  s.inversion_pct_max, s.d_w_norm_mean, s.d_w_norm_min, s.d_w_norm_max, s.d_highest_mean);
    out << buf;
  }
}

}  // namespace bpl::cli
