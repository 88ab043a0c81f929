#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "bpl/metrics.hpp"
#include "bpl/simqueue.hpp"
#include "inversion_oracle.hpp"

namespace bpl::metrics {
namespace {

GrantRecord rec(std::uint32_t source, std::uint32_t prio, std::uint64_t req, std::uint64_t grant, std::uint64_t done,
                double delay = 0) {
  return {.source = source, .priority = prio, .request_key = req, .grant_key = grant, .complete_key = done, .delay = delay};
}

TEST(WeightedMeanDelay, ThreeSources) {
  // (d, w) = (2, 3), (4, 2), (6, 1).
  const auto t = build_delay_table(3, {rec(0, 1, 0, 0, 0, 2), rec(1, 2, 0, 0, 0, 4), rec(2, 3, 0, 0, 0, 6)});
  EXPECT_EQ(t.sources[0].weight, 3u);
  EXPECT_EQ(t.sources[2].weight, 1u);
  EXPECT_DOUBLE_EQ(weighted_mean_delay(t), 10.0 / 3.0);
  EXPECT_DOUBLE_EQ(t.highest_priority_delay(), 2.0);
  EXPECT_DOUBLE_EQ(t.max_delay(), 6.0);
}

TEST(WeightedMeanDelay, ConstantDelayGivesConstant) {
  std::vector<GrantRecord> served;
  for (std::uint32_t s = 0; s < 8; ++s) served.push_back(rec(s, s + 1, 0, 0, 0, 7.5));
  EXPECT_DOUBLE_EQ(weighted_mean_delay(build_delay_table(8, served)), 7.5);
}

TEST(WeightedMeanDelay, MissingSourceIsAnError) {
  const auto t = build_delay_table(3, {rec(0, 1, 0, 0, 0, 2), rec(2, 3, 0, 0, 0, 6)});
  EXPECT_THROW(weighted_mean_delay(t), std::invalid_argument);
  EXPECT_THROW(build_delay_table(2, {rec(5, 1, 0, 0, 0)}), std::invalid_argument);
}

TEST(WeightedMeanDelay, CensoredRequestsCount) {
  const auto t = build_delay_table(2, {rec(0, 1, 0, 0, 0, 1)}, {rec(1, 2, 0, 0, 0, 9)});
  EXPECT_EQ(t.sources[1].requests, 1u);
  EXPECT_DOUBLE_EQ(weighted_mean_delay(t), (2 * 1.0 + 9.0) / 3.0);
}

TEST(WeightedMeanDelay, LiesBetweenExtremes) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> d(0, 100);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GrantRecord> served;
    for (std::uint32_t s = 0; s < 16; ++s) {
      for (int k = 0; k < 3; ++k) served.push_back(rec(s, s + 1, 0, 0, 0, d(rng)));
    }
    const auto t = build_delay_table(16, served);
    double lo = 1e300, hi = -1;
    for (const auto& s : t.sources) {
      lo = std::min(lo, s.mean_delay);
      hi = std::max(hi, s.mean_delay);
    }
    const double dw = weighted_mean_delay(t);
    EXPECT_GE(dw, lo);
    EXPECT_LE(dw, hi);
  }
}

TEST(Inversions, LowerPriorityServedFirstCountsOnce) {
  // R (P=1) asks at 1; G (P=5) asks at 2 and is served first.
  const auto rep = count_inversions({rec(1, 5, 2, 3, 4), rec(0, 1, 1, 5, 6)});
  EXPECT_EQ(rep.instances, 1u);
  EXPECT_EQ(rep.affected, 1u);
  EXPECT_DOUBLE_EQ(rep.affected_percent(), 50.0);
  EXPECT_EQ(rep.affected_by_source[0], 1u);
}

// tau_b (P=2) holds; tau_c (P=3) then tau_a (P=1) request; FIFO hands the
// lock to tau_c first and tau_a waits through its critical section.
TEST(Inversions, FifoHighestWaitsThroughLowest) {
  const std::vector<GrantRecord> fl = {
      rec(1, 2, 0, 1, 4),  // tau_b
      rec(2, 3, 2, 5, 6),  // tau_c
      rec(0, 1, 3, 7, 8),  // tau_a
  };
  const auto rep = count_inversions(fl);
  EXPECT_EQ(rep.instances_by_source[0], 1u);
  EXPECT_EQ(rep.instances, 1u);
  EXPECT_EQ(rep.affected, 1u);

  // Charging the holder as well adds tau_b for tau_a; tau_c is outranked
  // by tau_b and gets nothing.
  const auto rep2 = count_inversions(fl, {.count_in_service_blocker = true});
  EXPECT_EQ(rep2.instances_by_source[0], 2u);
  EXPECT_EQ(rep2.instances_by_source[2], 0u);

  // Priority order instead: tau_a before tau_c, no inversion.
  const std::vector<GrantRecord> pl = {rec(1, 2, 0, 1, 4), rec(0, 1, 3, 5, 6), rec(2, 3, 2, 7, 8)};
  EXPECT_EQ(count_inversions(pl).instances, 0u);
}

TEST(Inversions, OverlapIsAnError) {
  EXPECT_THROW(count_inversions({rec(0, 1, 0, 1, 5), rec(1, 2, 0, 3, 6)}), std::invalid_argument);
}

TEST(Inversions, EmptyTrace) {
  const auto rep = count_inversions({});
  EXPECT_EQ(rep.requests, 0u);
  EXPECT_EQ(rep.affected_percent(), 0.0);
}

TEST(Inversions, MatchesBruteForceOnSimulatedTraces) {
  int cases = 0;
  for (auto p : {sim::Policy::kFifo, sim::Policy::kPriority, sim::Policy::kBatched}) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      sim::SimConfig c;
      c.m = 16;
      c.mean_burst_size = 2 + seed % 6;
      c.burst_rate_ratio = seed % 2 ? 0.05 : 0.8;
      c.policy = p;
      c.seed = seed;
      c.request_budget = 1500;
      const auto served = sim::served_records(sim::run_sim(c));
      for (bool blocker : {false, true}) {
        InversionOptions o{.count_in_service_blocker = blocker};
        const auto fast = count_inversions(served, o);
        const auto slow = test::brute_force_inversions(served, blocker);
        ASSERT_EQ(fast.instances, slow.instances);
        ASSERT_EQ(fast.affected, slow.affected);
        ASSERT_EQ(fast.instances_by_source, slow.instances_by_source);
        ++cases;
      }
    }
  }
  EXPECT_EQ(cases, 36);
}

TEST(Inversions, InstancesAtLeastAffected) {
  sim::SimConfig c;
  c.m = 32;
  c.mean_burst_size = 8;
  c.policy = sim::Policy::kFifo;
  c.request_budget = 5000;
  const auto rep = count_inversions(sim::served_records(sim::run_sim(c)));
  EXPECT_GE(rep.instances, rep.affected);
  EXPECT_GE(rep.affected_percent(), 0.0);
  EXPECT_LE(rep.affected_percent(), 100.0);
}

CellRow cell(std::string policy, double dw, std::uint64_t seed = 1) {
  CellRow r;
  r.m = 8;
  r.mbs = 4;
  r.lambda_ratio = 0.1;
  r.policy = std::move(policy);
  r.seed = seed;
  r.d_w = dw;
  return r;
}

TEST(Normalize, DividesByBaselineOfSameCell) {
  std::vector<CellRow> rows = {cell("FL", 100), cell("BPL", 84), cell("PL", 100), cell("FL", 50, 2), cell("BPL", 60, 2)};
  normalize(rows);
  EXPECT_DOUBLE_EQ(*rows[0].d_w_normalized, 1.0);
  EXPECT_DOUBLE_EQ(*rows[1].d_w_normalized, 0.84);
  EXPECT_DOUBLE_EQ(*rows[2].d_w_normalized, 1.0);
  EXPECT_DOUBLE_EQ(*rows[4].d_w_normalized, 1.2);
}

TEST(Normalize, MissingBaselineIsAnError) {
  std::vector<CellRow> rows = {cell("FL", 100), cell("BPL", 84, 2)};
  EXPECT_THROW(normalize(rows), std::invalid_argument);
}

TEST(CellFiles, CsvRoundTrip) {
  std::vector<CellRow> rows = {cell("FL", 100), cell("BPL", 84.25)};
  rows[1].inversion_pct = 12.5;
  rows[1].inversion_instances = 40;
  rows[1].fingerprint = "cpu x 1";
  normalize(rows);
  std::stringstream ss;
  write_cells_csv(ss, rows);
  const auto back = read_cells_csv(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].policy, "BPL");
  EXPECT_DOUBLE_EQ(back[1].d_w, 84.25);
  EXPECT_DOUBLE_EQ(back[1].inversion_pct, 12.5);
  EXPECT_EQ(back[1].inversion_instances, 40u);
  ASSERT_TRUE(back[1].d_w_normalized.has_value());
  EXPECT_NEAR(*back[1].d_w_normalized, 0.8425, 1e-9);
}

TEST(CellFiles, JsonRoundTrip) {
  std::vector<CellRow> rows = {cell("FL", 10), cell("PL", 12.5)};
  std::stringstream ss;
  write_cells_json(ss, rows);
  const auto back = read_cells_json(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].policy, "PL");
  EXPECT_DOUBLE_EQ(back[1].d_w, 12.5);
  EXPECT_FALSE(back[1].d_w_normalized.has_value());
}

TEST(CellFiles, SchemaMismatchIsRejected) {
  std::istringstream bad_csv("# schema: other/9\nm,mbs\n");
  EXPECT_THROW(read_cells_csv(bad_csv), std::runtime_error);
  std::istringstream bad_json(R"({"schema": "other/9", "rows": []})");
  EXPECT_THROW(read_cells_json(bad_json), std::runtime_error);
}

}  // namespace
}  // namespace bpl::metrics
