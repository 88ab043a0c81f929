#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bpl/experiment.hpp"

namespace bpl::cli {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bpl_cli_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(KeyValues, CommentsTrimmingAndDuplicates) {
  std::istringstream in("# header\nmode = sim  # trailing\n\n  mbs=8, 32\n");
  const auto kv = parse_key_values(in);
  EXPECT_EQ(kv.at("mode"), "sim");
  EXPECT_EQ(kv.at("mbs"), "8, 32");
  std::istringstream dup("m = 1\nm = 2\n");
  EXPECT_THROW(parse_key_values(dup), ConfigError);
  std::istringstream junk("no equals sign here\n");
  EXPECT_THROW(parse_key_values(junk), ConfigError);
}

TEST(ExperimentConfig, ExpandsSimGrid) {
  const auto spec = build_spec({{"mode", "sim"}, {"m", "16"}, {"mbs", "4, 8"}, {"lambda", "0.1, 1"}, {"seeds", "1,2"}});
  EXPECT_EQ(spec.mode, Mode::kSim);
  EXPECT_EQ(spec.sim_grid.size(), 2u * 2 * 2 * 3);
  EXPECT_EQ(spec.sim_grid.front().policy, sim::Policy::kFifo);
  EXPECT_EQ(spec.resolved.at("policies"), "FL, PL, BPL");
}

TEST(ExperimentConfig, OverridesWin) {
  const auto spec = build_spec({{"mode", "sim"}, {"out", "a"}}, {{"out", "b"}});
  EXPECT_EQ(spec.out_dir, "b");
}

TEST(ExperimentConfig, CollectsEveryBadField) {
  try {
    build_spec({{"mode", "sim"}, {"m", "8"}, {"mbs", "5"}, {"lambda", "2"}, {"colour", "red"}, {"seeds", "1,1"}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const auto& f = e.fields();
    auto has = [&](const std::string& prefix) {
      return std::any_of(f.begin(), f.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
    };
    EXPECT_TRUE(has("mbs:"));
    EXPECT_TRUE(has("lambda:"));
    EXPECT_TRUE(has("colour:"));
    EXPECT_TRUE(has("seeds:"));
  }
  EXPECT_THROW(build_spec({{"mode", "party"}}), ConfigError);
  EXPECT_THROW(build_spec({{"mode", "bench"}, {"sched", "auto"}}), ConfigError);
  EXPECT_THROW(build_spec({{"mode", "verify"}, {"explore_threads", "12"}}), ConfigError);
}

TEST(ExperimentConfig, BenchAndVerifyDefaults) {
  const auto bench = build_spec({{"mode", "bench"}});
  EXPECT_EQ(bench.bench.contended.size(), 3u);
  EXPECT_EQ(bench.bench.contended[0].budget, 80000u);
  EXPECT_EQ(bench.bench.contended[0].cs_us, 70.0);
  EXPECT_EQ(bench.bench.overhead_disciplines.size(), 3u);
  const auto verify = build_spec({{"mode", "verify"}});
  EXPECT_EQ(verify.verify.stress_acquisitions, 1000000u);
  EXPECT_EQ(verify.verify.explore_threads, (std::vector<unsigned>{2, 3, 4}));
}

TEST(Run, SimWritesCellsManifestAndTraces) {
  const auto out = scratch("sim");
  auto spec = build_spec({{"mode", "sim"},
                          {"m", "8"},
                          {"mbs", "4"},
                          {"lambda", "0.1"},
                          {"budget", "2000"},
                          {"seeds", "1,2"},
                          {"traces", "true"},
                          {"out", out.string()}});
  std::ostringstream log;
  EXPECT_EQ(run(spec, log), ExitCode::kOk);
  EXPECT_TRUE(fs::exists(out / "cells.csv"));
  EXPECT_FALSE(fs::exists(out / "FAILED"));
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["status"], "ok");
  EXPECT_EQ(manifest["mode"], "sim");
  std::size_t traces = 0;
  for (const auto& e : fs::directory_iterator(out)) traces += e.path().filename().string().rfind("trace", 0) == 0;
  EXPECT_EQ(traces, 6u);

  std::ifstream cells(out / "cells.csv");
  const auto rows = metrics::read_cells_csv(cells);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& r : rows) ASSERT_TRUE(r.d_w_normalized.has_value());

  std::ostringstream table;
  summarize({(out / "cells.csv").string()}, table);
  EXPECT_NE(table.str().find("BPL"), std::string::npos);

  // Same seeds, same numbers.
  std::ostringstream log2;
  const auto again = scratch("sim_again");
  spec.out_dir = again.string();
  spec.write_traces = false;
  ASSERT_EQ(run(spec, log2), ExitCode::kOk);
  EXPECT_EQ(slurp(out / "cells.csv"), slurp(again / "cells.csv"));
  fs::remove_all(out);
  fs::remove_all(again);
}

TEST(Run, JsonFormat) {
  const auto out = scratch("json");
  const auto spec = build_spec({{"mode", "sim"},
                                {"m", "8"},
                                {"mbs", "4"},
                                {"lambda", "0.5"},
                                {"budget", "500"},
                                {"format", "json"},
                                {"out", out.string()}});
  std::ostringstream log;
  ASSERT_EQ(run(spec, log), ExitCode::kOk);
  std::ifstream in(out / "cells.json");
  EXPECT_EQ(metrics::read_cells_json(in).size(), 3u);
  std::ostringstream table;
  summarize({(out / "cells.json").string()}, table);
  EXPECT_NE(table.str().find("PL"), std::string::npos);
  fs::remove_all(out);
}

TEST(Run, UnwritableOutputIsAConfigError) {
  const auto spec = build_spec({{"mode", "sim"}, {"m", "8"}, {"mbs", "4"}, {"out", "/proc/definitely/not/here"}});
  std::ostringstream log;
  EXPECT_EQ(run(spec, log), ExitCode::kConfigError);
}

TEST(Run, VerifyWritesTable) {
  const auto out = scratch("verify");
  const auto spec = build_spec({{"mode", "verify"},
                                {"disciplines", "FL"},
                                {"stress_threads", "2"},
                                {"stress_acquisitions", "2000"},
                                {"explore_threads", "2"},
                                {"random_runs", "5"},
                                {"out", out.string()}});
  std::ostringstream log;
  EXPECT_EQ(run(spec, log), ExitCode::kOk) << log.str();
  const auto table = slurp(out / "verify.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')),
            "suite,discipline,threads,checked,ok,max_bypass,max_batch_size,reorderings,detail");
  EXPECT_NE(table.find("stress,FL,2,2000,PASS"), std::string::npos);
  fs::remove_all(out);
}

TEST(Summarize, MissingBaselineIsAnError) {
  const auto out = scratch("nobase");
  const auto spec = build_spec(
      {{"mode", "sim"}, {"m", "8"}, {"mbs", "4"}, {"budget", "300"}, {"policies", "BPL"}, {"out", out.string()}});
  std::ostringstream log;
  ASSERT_EQ(run(spec, log), ExitCode::kOk);
  std::ostringstream table;
  EXPECT_THROW(summarize({(out / "cells.csv").string()}, table), std::invalid_argument);
  fs::remove_all(out);
}

TEST(Aggregate, MeanAndRangeOverSeeds) {
  std::vector<metrics::CellRow> rows;
  for (std::uint64_t seed : {1, 2}) {
    metrics::CellRow fl;
    fl.m = 8;
    fl.mbs = 4;
    fl.lambda_ratio = 0.1;
    fl.policy = "FL";
    fl.seed = seed;
    fl.d_w = 10;
    fl.inversion_pct = 40;
    auto bpl = fl;
    bpl.policy = "BPL";
    bpl.d_w = seed == 1 ? 8 : 9;
    bpl.inversion_pct = seed == 1 ? 10 : 20;
    rows.push_back(fl);
    rows.push_back(bpl);
  }
  metrics::normalize(rows);
  const auto cells = aggregate(rows);
  ASSERT_EQ(cells.size(), 2u);
  const auto& b = cells[0].policy == "BPL" ? cells[0] : cells[1];
  EXPECT_EQ(b.seeds, 2u);
  EXPECT_DOUBLE_EQ(b.inversion_pct_mean, 15);
  EXPECT_DOUBLE_EQ(b.inversion_pct_min, 10);
  EXPECT_DOUBLE_EQ(b.inversion_pct_max, 20);
  EXPECT_DOUBLE_EQ(b.d_w_norm_mean, 0.85);
  EXPECT_EQ(b.cell.find("seed"), std::string::npos);
}

}  // namespace
}  // namespace bpl::cli
