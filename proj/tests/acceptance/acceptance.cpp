// Acceptance run: one PASS/FAIL line per criterion.
//
//   bpl_acceptance [--out DIR] [--only 1,2,...]
//
// Expensive workloads (stress runs, the 64-source simulator grid, the
// contended benchmark) run once and feed every criterion that needs them.
// Result tables land in DIR for inspection and plotting.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "bpl/batched_priority_lock.hpp"
#include "bpl/experiment.hpp"
#include "bpl/explore.hpp"
#include "bpl/harness.hpp"
#include "bpl/metrics.hpp"
#include "bpl/simqueue.hpp"
#include "inversion_oracle.hpp"

namespace fs = std::filesystem;
using namespace bpl;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back(std::string(ok ? "" : "FAILED ") + what);
  }
  void note(const std::string& what) { notes.push_back(what); }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr Discipline kAll[] = {Discipline::kSpin, Discipline::kFifo, Discipline::kBatchedPriority};

// ---------------------------------------------------------------------------
// Shared workloads

struct Workloads {
  fs::path out;

  const std::map<Discipline, bench::StressReport>& stress() {
    if (!stress_) {
      stress_.emplace();
      for (auto d : kAll) {
        bench::StressConfig c;
        c.discipline = d;
        c.threads = 8;
        c.acquisitions = 1'000'000;
        std::cerr << "stress " << to_string(d) << " ... " << std::flush;
        auto r = bench::run_stress(c);
        std::cerr << fmt("%.1f s", r.elapsed_s) << "\n";
        stress_->emplace(d, std::move(r));
      }
    }
    return *stress_;
  }

  struct SimRun {
    sim::SimConfig config;
    Verdict verdict;
    metrics::CellRow row;
  };

  // m = 64, mbs {8, 32}, seven burst rates, three policies, three seeds.
  const std::vector<SimRun>& grid() {
    if (!grid_) {
      grid_.emplace();
      const auto t0 = std::chrono::steady_clock::now();
      std::cerr << "simulator grid ... " << std::flush;
      for (unsigned mbs : {8u, 32u}) {
        for (double lambda : {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0}) {
          for (std::uint64_t seed : {1, 2, 3}) {
            for (auto p : {sim::Policy::kFifo, sim::Policy::kPriority, sim::Policy::kBatched}) {
              sim::SimConfig c;
              c.m = 64;
              c.mean_burst_size = mbs;
              c.burst_rate_ratio = lambda;
              c.policy = p;
              c.seed = seed;
              const auto result = sim::run_sim(c);
              grid_->push_back({c, sim::verify(result), sim::summarize(result)});
            }
          }
        }
      }
      std::vector<metrics::CellRow> rows;
      for (const auto& r : *grid_) rows.push_back(r.row);
      metrics::normalize(rows);
      for (std::size_t i = 0; i < rows.size(); ++i) (*grid_)[i].row = rows[i];
      std::ofstream csv(out / "sim_cells.csv");
      metrics::write_cells_csv(csv, rows);
      std::cerr << fmt("%.1f s", seconds_since(t0)) << "\n";
    }
    return *grid_;
  }

  // m = 8, skewed rates, lambda_agg = mu_cs, 80,000 requests, five seeds.
  const std::vector<bench::ContendedRun>& contended() {
    if (!contended_) {
      contended_.emplace();
      std::vector<metrics::CellRow> rows;
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (auto d : {Discipline::kFifo, Discipline::kBatchedPriority}) {
          bench::BenchConfig c;
          c.discipline = d;
          c.seed = seed;
          std::cerr << "contended " << to_string(d) << " seed " << seed << " ... " << std::flush;
          auto run = bench::run_contended(c);
          std::cerr << fmt("%.1f s", run.elapsed_s) << "\n";
          rows.push_back(bench::contended_cell(run));
          run.samples.shrink_to_fit();
          contended_->push_back(std::move(run));
        }
      }
      metrics::normalize(rows);
      std::ofstream csv(out / "bench_cells.csv");
      metrics::write_cells_csv(csv, rows);
      contended_rows_ = rows;
    }
    return *contended_;
  }

  const std::vector<metrics::CellRow>& contended_rows() {
    contended();
    return contended_rows_;
  }

 private:
  std::optional<std::map<Discipline, bench::StressReport>> stress_;
  std::optional<std::vector<SimRun>> grid_;
  std::optional<std::vector<bench::ContendedRun>> contended_;
  std::vector<metrics::CellRow> contended_rows_;
};

std::string first_violation(const Verdict& v) { return v.violations.empty() ? "" : " (" + v.violations.front() + ")"; }

// ---------------------------------------------------------------------------
// Criteria

Outcome c1_mutual_exclusion(Workloads& w) {
  Outcome o;
  // Ordering properties (bypass, batches, tickets) belong to C2 and C3.
  auto ordering = [](const std::string& s) {
    return s.rfind("bypassed", 0) == 0 || s.rfind("batch", 0) == 0 || s.rfind("older batch", 0) == 0 ||
           s.find("ticket") != std::string::npos;
  };
  for (const auto& [d, r] : w.stress()) {
    const bool ok = r.intrusions == 0 && r.acquisitions == r.config.acquisitions &&
                    std::all_of(r.verdict.violations.begin(), r.verdict.violations.end(), ordering);
    o.require(ok, std::string(to_string(d)) + ": " + std::to_string(r.acquisitions) + " acquisitions, " +
                      std::to_string(r.intrusions) + " intrusions, " + fmt("%.1f s", r.elapsed_s));
  }
  return o;
}

Outcome c2_bounded_bypass(Workloads& w) {
  Outcome o;
  std::uint64_t worst = 0, failing = 0;
  for (const auto& r : w.grid()) {
    if (r.config.policy != sim::Policy::kBatched) continue;
    worst = std::max(worst, r.verdict.max_bypass);
    if (r.verdict.max_bypass > r.config.m - 1) ++failing;
  }
  o.require(failing == 0, "simulator: max bypass " + std::to_string(worst) + " over all BPL cells (bound 63)");

  const auto& stress = w.stress().at(Discipline::kBatchedPriority);
  o.require(stress.verdict.max_bypass <= stress.config.threads - 1,
            "native stress: max bypass " + std::to_string(stress.verdict.max_bypass) + " (bound " +
                std::to_string(stress.config.threads - 1) + ")" +
                (stress.env.oversubscribed ? ", " + std::to_string(stress.config.threads) + " threads on " +
                                                 std::to_string(stress.env.cpus) + " CPU(s)"
                                           : ""));
  std::uint64_t contended_worst = 0;
  for (const auto& run : w.contended()) {
    if (run.config.discipline == Discipline::kBatchedPriority) {
      contended_worst = std::max(contended_worst, run.verdict.max_bypass);
    }
  }
  o.require(contended_worst <= 7, "native contended: max bypass " + std::to_string(contended_worst) + " (bound 7)");
  return o;
}

Outcome c3_cardinality_and_tickets(Workloads& w) {
  Outcome o;
  std::uint64_t sim_worst = 0;
  bool sim_ok = true;
  for (const auto& r : w.grid()) {
    if (r.config.policy != sim::Policy::kBatched) continue;
    sim_worst = std::max(sim_worst, r.verdict.max_batch_size);
    sim_ok = sim_ok && r.verdict.max_batch_size <= r.config.m - 1;
  }
  o.require(sim_ok, "simulator: largest batch " + std::to_string(sim_worst) + " (bound 63)");

  std::uint64_t native_worst = w.stress().at(Discipline::kBatchedPriority).verdict.max_batch_size;
  for (const auto& run : w.contended()) {
    if (run.config.discipline == Discipline::kBatchedPriority) {
      native_worst = std::max(native_worst, run.verdict.max_batch_size);
    }
  }
  o.require(native_worst <= 7, "native: largest batch " + std::to_string(native_worst) + " (bound 7)");

  auto ticket_ok = [](const std::vector<std::string>& violations) {
    return std::none_of(violations.begin(), violations.end(),
                        [](const std::string& s) { return s.find("ticket") != std::string::npos; });
  };
  const auto& fl = w.stress().at(Discipline::kFifo);
  o.require(fl.verdict.ok && ticket_ok(fl.verdict.violations),
            "ticket order in FL stress (" + std::to_string(fl.acquisitions) + " grants)" + first_violation(fl.verdict));
  bool contended_ok = true;
  for (const auto& run : w.contended()) {
    if (run.config.discipline == Discipline::kFifo) contended_ok = contended_ok && check_ticket_order(run.samples).ok;
  }
  o.require(contended_ok, "ticket order in FL contended runs");
  return o;
}

Outcome c4_unlock_arithmetic(Workloads&) {
  Outcome o;
  std::uint64_t checked = 0, wrong = 0;
  for (unsigned k = 1; k <= 4; ++k) {
    for (std::uint32_t v = 0; v <= 0xFFFF; ++v) {
      const auto word = static_cast<std::uint16_t>(v);
      const std::uint32_t mask = (1u << k) - 1;
      const auto shadow = static_cast<std::uint16_t>((word & ~mask) + (1u << k));
      // Same thing in shift form, in case the mask arithmetic is what's wrong.
      const auto shifted = static_cast<std::uint16_t>(((static_cast<std::uint32_t>(word) >> k) + 1) << k);
      if (next_batch_word<std::uint16_t>(word, k) != shadow || shadow != shifted) ++wrong;
      ++checked;
    }
  }
  o.require(wrong == 0, std::to_string(checked) + " values checked, " + std::to_string(wrong) + " mismatches");
  return o;
}

Outcome c5_starvation_freedom(Workloads&) {
  Outcome o;
  struct Case {
    unsigned threads, bound;
  };
  for (auto c : {Case{2, 3}, Case{3, 3}, Case{4, 2}}) {
    explore::ExploreOptions opt;
    opt.threads = c.threads;
    opt.cycles = 2;
    opt.preemption_bound = c.bound;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = explore::explore(opt);
    o.require(r.ok() && r.exhausted, std::to_string(c.threads) + " threads, preemption bound " + std::to_string(c.bound) +
                                         ": " + std::to_string(r.executions) + " executions" +
                                         (r.exhausted ? " (exhausted)" : " (truncated)") + ", " +
                                         std::to_string(r.livelocks) + " livelocks, " +
                                         std::to_string(r.incomplete_acquisitions) + " incomplete, " +
                                         fmt("%.0f s", seconds_since(t0)));
  }
  explore::ExploreOptions opt;
  opt.threads = 4;
  opt.cycles = 3;
  opt.preemption_bound = 6;
  const auto r = explore::explore_random(opt, 2000, 1);
  o.require(r.ok(), "4 threads, 3 cycles, 2000 random schedules: " + std::to_string(r.livelocks) + " livelocks, " +
                        std::to_string(r.incomplete_acquisitions) + " incomplete");
  return o;
}

Outcome c6_metrics_oracle(Workloads& w) {
  Outcome o;
  std::mt19937_64 rng(2024);
  const unsigned ms[] = {8, 16, 32, 64};
  std::uint64_t mismatches = 0, pl_traces = 0, pl_nonzero = 0, requests = 0;
  for (int i = 0; i < 100; ++i) {
    sim::SimConfig c;
    c.m = ms[rng() % 4];
    c.mean_burst_size = 1 + static_cast<unsigned>(rng() % (c.m / 2));
    c.burst_rate_ratio = std::uniform_real_distribution<double>(0.005, 1.0)(rng);
    c.policy = static_cast<sim::Policy>(rng() % 3);
    c.seed = rng();
    c.request_budget = 1000 + rng() % 9001;
    const auto served = sim::served_records(sim::run_sim(c));
    requests += served.size();
    const auto fast = metrics::count_inversions(served);
    const auto slow = test::brute_force_inversions(served, false);
    if (fast.instances != slow.instances || fast.affected != slow.affected ||
        fast.instances_by_source != slow.instances_by_source) {
      ++mismatches;
    }
    if (c.policy == sim::Policy::kPriority) {
      ++pl_traces;
      if (fast.instances != 0) ++pl_nonzero;
    }
  }
  o.require(mismatches == 0, "100 random traces (" + std::to_string(requests) + " requests): " +
                                 std::to_string(mismatches) + " disagree with the quadratic oracle");
  for (const auto& r : w.grid()) {
    if (r.config.policy == sim::Policy::kPriority) {
      ++pl_traces;
      if (r.row.inversion_instances != 0) ++pl_nonzero;
    }
  }
  o.require(pl_nonzero == 0,
            std::to_string(pl_traces) + " PL traces, " + std::to_string(pl_nonzero) + " with inversions");
  return o;
}

std::vector<cli::CellSummary> grid_cells(Workloads& w) {
  std::vector<metrics::CellRow> rows;
  for (const auto& r : w.grid()) rows.push_back(r.row);
  return cli::aggregate(rows);
}

bool has_token(const std::string& key, const std::string& token) {
  return (" " + key + " ").find(" " + token + " ") != std::string::npos;
}

const cli::CellSummary* find_cell(const std::vector<cli::CellSummary>& cells, const std::string& cell,
                                  const std::string& policy) {
  for (const auto& c : cells) {
    if (c.cell == cell && c.policy == policy) return &c;
  }
  return nullptr;
}

Outcome c7_inversion_trend(Workloads& w) {
  Outcome o;
  const auto cells = grid_cells(w);
  std::set<std::string> keys;
  for (const auto& c : cells) keys.insert(c.cell);
  std::uint64_t bpl_above_fl = 0, pl_above_bpl = 0;
  for (const auto& k : keys) {
    const auto* fl = find_cell(cells, k, "FL");
    const auto* pl = find_cell(cells, k, "PL");
    const auto* bpl = find_cell(cells, k, "BPL");
    if (bpl->inversion_pct_mean > fl->inversion_pct_mean) ++bpl_above_fl;
    if (pl->inversion_pct_mean > bpl->inversion_pct_mean) ++pl_above_bpl;
  }
  o.require(bpl_above_fl == 0, "BPL <= FL in " + std::to_string(keys.size() - bpl_above_fl) + "/" +
                                   std::to_string(keys.size()) + " cells");
  o.require(pl_above_bpl == 0, "PL <= BPL in " + std::to_string(keys.size() - pl_above_bpl) + "/" +
                                   std::to_string(keys.size()) + " cells");
  bool gap_checked = false;
  for (const auto& k : keys) {
    if (!has_token(k, "mbs=32") || !has_token(k, "lambda=0.01")) continue;
    gap_checked = true;
    const double gap = find_cell(cells, k, "BPL")->inversion_pct_mean - find_cell(cells, k, "PL")->inversion_pct_mean;
    o.require(gap <= 10.0, "mbs=32 lambda=0.01: BPL " + fmt("%.1f%%", find_cell(cells, k, "BPL")->inversion_pct_mean) +
                               " vs PL " + fmt("%.1f%%", find_cell(cells, k, "PL")->inversion_pct_mean) + ", gap " +
                               fmt("%.1f", gap) + " points (limit 10)");
  }
  if (!gap_checked) o.require(false, "no mbs=32 lambda=0.01 cell in the grid");
  for (const auto& k : keys) {
    if (!has_token(k, "mbs=8") || !has_token(k, "lambda=0.01")) continue;
    o.note("mbs=8 lambda=0.01: FL " + fmt("%.1f%%", find_cell(cells, k, "FL")->inversion_pct_mean) + ", BPL " +
           fmt("%.1f%%", find_cell(cells, k, "BPL")->inversion_pct_mean) + ", PL " +
           fmt("%.1f%%", find_cell(cells, k, "PL")->inversion_pct_mean));
  }
  return o;
}

Outcome c8_delay_trend(Workloads& w) {
  Outcome o;
  const auto cells = grid_cells(w);
  double worst_bpl = 0, best_pl = 0;
  std::string worst_cell, best_cell;
  bool pl_high_with_bpl_ok = false;
  for (const auto& c : cells) {
    if (c.policy == "BPL" && c.d_w_norm_mean > worst_bpl) {
      worst_bpl = c.d_w_norm_mean;
      worst_cell = c.cell;
    }
    if (c.policy == "PL") {
      const auto* bpl = find_cell(cells, c.cell, "BPL");
      if (c.d_w_norm_mean > 10 && bpl->d_w_norm_mean <= 1.05) pl_high_with_bpl_ok = true;
      if (c.d_w_norm_mean > best_pl) {
        best_pl = c.d_w_norm_mean;
        best_cell = c.cell;
      }
    }
  }
  o.require(worst_bpl <= 1.05, "max d_w(BPL)/d_w(FL) " + fmt("%.3f", worst_bpl) + " at " + worst_cell);
  o.require(pl_high_with_bpl_ok, "max d_w(PL)/d_w(FL) " + fmt("%.1f", best_pl) + " at " + best_cell);
  return o;
}

Outcome c9_uncontested(Workloads& w) {
  Outcome o;
  std::vector<bench::OverheadReport> reports;
  for (auto d : kAll) reports.push_back(bench::measure_uncontested(d, 10000));
  std::ofstream csv(w.out / "overhead.csv");
  bench::write_overhead_csv(csv, reports);
  const double sl = reports[0].median, bpl = reports[2].median;
  const double ratio = sl > 0 ? bpl / sl : INFINITY;
  o.require(ratio <= 5.0, "median cycles SL " + fmt("%.1f", sl) + ", FL " + fmt("%.1f", reports[1].median) +
                              ", BPL " + fmt("%.1f", bpl) + "; BPL/SL " + fmt("%.2f", ratio) + " (limit 5), gap " +
                              fmt("%.1f", bpl - sl) + " cycles");
  if (reports[0].pairs_per_sample > 1) {
    o.note("coarse cycle counter: each sample times " + std::to_string(reports[0].pairs_per_sample) + " pairs");
  }
  return o;
}

Outcome c10_contended(Workloads& w) {
  Outcome o;
  const auto& rows = w.contended_rows();
  double fl_dw = 0, bpl_dw = 0, fl_hi = 0, bpl_hi = 0;
  int dw_wins = 0, hi_wins = 0, seeds = 0;
  for (std::size_t i = 0; i + 1 < rows.size(); i += 2) {
    const auto& fl = rows[i];
    const auto& bpl = rows[i + 1];
    fl_dw += fl.d_w;
    bpl_dw += bpl.d_w;
    fl_hi += fl.d_highest_priority;
    bpl_hi += bpl.d_highest_priority;
    dw_wins += bpl.d_w < fl.d_w;
    hi_wins += bpl.d_highest_priority < fl.d_highest_priority;
    ++seeds;
  }
  const double ratio = bpl_dw / fl_dw;
  o.require(ratio < 1.0, "mean d_w FL " + fmt("%.1f us", fl_dw / seeds) + ", BPL " + fmt("%.1f us", bpl_dw / seeds) +
                             ", ratio " + fmt("%.3f", ratio) + " (BPL lower in " + std::to_string(dw_wins) + "/" +
                             std::to_string(seeds) + " seeds)");
  o.require(bpl_hi < fl_hi, "highest-priority mean delay FL " + fmt("%.1f us", fl_hi / seeds) + ", BPL " +
                                fmt("%.1f us", bpl_hi / seeds) + " (BPL lower in " + std::to_string(hi_wins) + "/" +
                                std::to_string(seeds) + " seeds)");
  const auto& env = w.contended().front().env;
  if (env.oversubscribed) {
    o.note("8 contenders on " + std::to_string(env.cpus) + " CPU(s): waiters yield instead of spinning");
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-10"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "directory for result tables");
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  CLI11_PARSE(app, argc, argv);

  Workloads w;
  w.out = out;
  fs::create_directories(w.out);

  using Check = std::function<Outcome(Workloads&)>;
  const std::vector<std::pair<std::string, Check>> criteria = {
      {"mutual exclusion under stress", c1_mutual_exclusion},
      {"BPL bounded bypass", c2_bounded_bypass},
      {"batch cardinality and ticket order", c3_cardinality_and_tickets},
      {"unlock arithmetic", c4_unlock_arithmetic},
      {"starvation freedom at small scale", c5_starvation_freedom},
      {"inversion metric oracle", c6_metrics_oracle},
      {"inversion trend", c7_inversion_trend},
      {"weighted delay trend", c8_delay_trend},
      {"uncontested cost", c9_uncontested},
      {"contended skewed run", c10_contended},
  };

  int failed = 0;
  std::vector<std::string> lines;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), n) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[i].second(w);
    } catch (const std::exception& e) {
      o.require(false, std::string("error: ") + e.what());
    }
    std::ostringstream line;
    line << "CRITERION " << n << ' ' << (o.pass ? "PASS" : "FAIL") << ' ' << criteria[i].first;
    for (std::size_t k = 0; k < o.notes.size(); ++k) line << (k == 0 ? " | " : "; ") << o.notes[k];
    std::cout << line.str() << std::endl;
    lines.push_back(line.str());
    failed += !o.pass;
  }
  std::ofstream summary(w.out / "acceptance.txt");
  for (const auto& l : lines) summary << l << '\n';
  return failed == 0 ? 0 : 1;
}
