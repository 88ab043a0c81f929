#include <gtest/gtest.h>

#include <cstdlib>
#include <numeric>
#include <sstream>

#include "bpl/harness.hpp"

namespace bpl::bench {
namespace {

TEST(BenchConfig, SkewedRatesGrowWithIndexAndSumToAggregate) {
  BenchConfig c;
  c.m = 8;
  c.cs_us = 70;
  c.lambda_ratio = 1.0;
  const auto r = c.rates_per_us();
  ASSERT_EQ(r.size(), 8u);
  EXPECT_NEAR(std::accumulate(r.begin(), r.end(), 0.0), 1.0 / 70.0, 1e-12);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_NEAR(r[i] / r[0], static_cast<double>(i + 1), 1e-9);
}

TEST(BenchConfig, EqualRatesSplitEvenly) {
  BenchConfig c;
  c.m = 4;
  c.arrival = ArrivalScheme::kEqual;
  c.lambda_ratio = 0.5;
  c.cs_us = 10;
  for (double r : c.rates_per_us()) EXPECT_NEAR(r, 0.05 / 4, 1e-12);
}

TEST(BenchConfig, ValidateNamesFields) {
  BenchConfig c;
  c.m = 0;
  c.lambda_ratio = 2;
  c.cs_us = -1;
  c.budget = 0;
  EXPECT_EQ(c.validate().size(), 4u);
  BenchConfig p;
  p.pinning = {0, 1};
  EXPECT_EQ(p.validate().size(), 1u);
  EXPECT_THROW(run_contended(c), std::invalid_argument);
}

TEST(Parsing, CpuListsAndNames) {
  EXPECT_EQ(parse_cpu_list("0, 2,4"), (std::vector<int>{0, 2, 4}));
  EXPECT_TRUE(parse_cpu_list("").empty());
  EXPECT_THROW(parse_cpu_list("1,x"), std::invalid_argument);
  EXPECT_THROW(parse_cpu_list("-1"), std::invalid_argument);
  EXPECT_EQ(parse_arrival("equal"), ArrivalScheme::kEqual);
  EXPECT_FALSE(parse_arrival("bursty").has_value());
  EXPECT_EQ(parse_sched("fifo"), SchedMode::kRealtime);
  EXPECT_EQ(parse_sched("normal"), SchedMode::kNormal);
  EXPECT_FALSE(parse_sched("auto").has_value());
}

TEST(Parsing, PinningFromEnvironment) {
  ::setenv("BPL_PIN_CPUS", "3,1", 1);
  EXPECT_EQ(pinning_from_env(), (std::vector<int>{3, 1}));
  ::unsetenv("BPL_PIN_CPUS");
  EXPECT_TRUE(pinning_from_env().empty());
}

TEST(Timer, CalibrationIsSane) {
  const double overhead = calibrate_timer_overhead(2000);
  EXPECT_GE(overhead, 0.0);
  EXPECT_LT(overhead, 10000.0);
  EXPECT_GT(cycles_per_ns(), 0.01);
  EXPECT_GE(counter_granularity(100), 1u);
}

TEST(Uncontested, ReportsOrderedQuantiles) {
  for (auto d : {Discipline::kSpin, Discipline::kFifo, Discipline::kBatchedPriority}) {
    const auto r = measure_uncontested(d, 500);
    EXPECT_EQ(r.samples, 500u);
    EXPECT_LE(r.min, r.median);
    EXPECT_LE(r.median, r.p999);
    EXPECT_LE(r.p999, r.max);
    EXPECT_GE(r.pairs_per_sample, 1u);
  }
  EXPECT_THROW(measure_uncontested(Discipline::kSpin, 0), std::invalid_argument);
}

TEST(Uncontested, CsvHeader) {
  std::ostringstream os;
  write_overhead_csv(os, {measure_uncontested(Discipline::kSpin, 50)});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "discipline,min,median,p999,max,samples,pairs_per_sample");
}

TEST(VerifyTrace, ChecksPerDiscipline) {
  std::vector<BenchSample> s(2);
  s[0] = {.core = 0, .request_seq = 0, .acquire_seq = 1, .release_seq = 2, .ticket = 0};
  s[1] = {.core = 1, .request_seq = 3, .acquire_seq = 4, .release_seq = 5, .ticket = 1};
  EXPECT_TRUE(verify_trace(s, Discipline::kFifo, 2).ok);
  std::swap(s[0].ticket, s[1].ticket);
  EXPECT_FALSE(verify_trace(s, Discipline::kFifo, 2).ok);
  EXPECT_TRUE(verify_trace(s, Discipline::kSpin, 2).ok);
  s[1].acquire_seq = 1;
  EXPECT_FALSE(verify_trace(s, Discipline::kSpin, 2).ok);
}

TEST(Contended, ShortRunTracesEveryRequest) {
  for (auto d : {Discipline::kSpin, Discipline::kFifo, Discipline::kBatchedPriority}) {
    BenchConfig c;
    c.m = 4;
    c.discipline = d;
    c.cs_us = 5;
    c.budget = 400;
    const auto run = run_contended(c);
    ASSERT_EQ(run.samples.size(), 400u);
    EXPECT_TRUE(check_mutual_exclusion(run.samples).ok);
    for (const auto& s : run.samples) {
      EXPECT_LE(s.request_ns, s.acquire_ns);
      EXPECT_LE(s.acquire_ns, s.release_ns);
      EXPECT_EQ(s.priority, s.core + 1);
    }
    const auto row = contended_cell(run);
    EXPECT_EQ(row.policy, std::string(to_string(d)));
    EXPECT_EQ(row.requests, 400u);
    EXPECT_EQ(row.arrival, "skewed");
    EXPECT_FALSE(row.fingerprint.empty());
    EXPECT_EQ(row.fingerprint.find(','), std::string::npos);
  }
}

TEST(Contended, ExplicitPinningMustFit) {
  BenchConfig c;
  c.m = 2;
  c.budget = 10;
  c.pinning = {0, 100000};
  EXPECT_THROW(run_contended(c), std::exception);
}

TEST(Stress, ShortRunsKeepExclusion) {
  for (auto d : {Discipline::kSpin, Discipline::kFifo, Discipline::kBatchedPriority}) {
    StressConfig c;
    c.discipline = d;
    c.threads = 4;
    c.acquisitions = 5000;
    const auto r = run_stress(c);
    EXPECT_EQ(r.acquisitions, 5000u);
    EXPECT_EQ(r.intrusions, 0u);
    if (d == Discipline::kFifo) EXPECT_TRUE(r.verdict.ok);
  }
}

}  // namespace
}  // namespace bpl::bench
