// Python surface for the lock, the simulator, the metrics and the harness.
// Long runs release the GIL.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "bpl/batched_priority_lock.hpp"
#include "bpl/explore.hpp"
#include "bpl/harness.hpp"
#include "bpl/metrics.hpp"
#include "bpl/simqueue.hpp"

namespace py = pybind11;
using namespace bpl;

namespace {

Discipline discipline_arg(const std::string& name) {
  auto d = parse_discipline(name);
  if (!d) throw py::value_error("unknown discipline '" + name + "' (expected SL, FL or BPL)");
  return *d;
}

sim::Policy policy_arg(const std::string& name) {
  auto p = sim::parse_policy(name);
  if (!p) throw py::value_error("unknown policy '" + name + "' (expected FL, PL or BPL)");
  return *p;
}

py::dict ticket_dict(const AcquireTicket& t) {
  py::dict d;
  d["priority"] = t.priority;
  d["core"] = t.core;
  d["batch"] = t.batch ? py::cast(*t.batch) : py::none();
  d["fast_path"] = t.fast_path();
  d["reset_batch"] = t.reset_batch;
  return d;
}

py::dict verdict_dict(const Verdict& v) {
  py::dict d;
  d["ok"] = v.ok;
  d["violations"] = v.violations;
  d["checked"] = v.checked;
  d["max_bypass"] = v.max_bypass;
  d["max_batch_size"] = v.max_batch_size;
  return d;
}

py::dict row_dict(const metrics::CellRow& r) {
  py::dict d;
  d["m"] = r.m;
  d["mbs"] = r.mbs;
  d["lambda_ratio"] = r.lambda_ratio;
  d["policy"] = r.policy;
  d["seed"] = r.seed;
  d["inversion_pct"] = r.inversion_pct;
  d["inversion_instances"] = r.inversion_instances;
  d["inversion_affected"] = r.inversion_affected;
  d["d_w"] = r.d_w;
  d["d_w_normalized"] = r.d_w_normalized ? py::cast(*r.d_w_normalized) : py::none();
  d["d_highest_priority"] = r.d_highest_priority;
  d["d_max"] = r.d_max;
  d["requests"] = r.requests;
  return d;
}

metrics::GrantRecord record_arg(const py::handle& h) {
  const auto t = h.cast<py::tuple>();
  if (t.size() != 5 && t.size() != 6) {
    throw py::value_error("grant record needs (source, priority, request, grant, complete[, delay])");
  }
  metrics::GrantRecord r;
  r.source = t[0].cast<std::uint32_t>();
  r.priority = t[1].cast<std::uint32_t>();
  r.request_key = t[2].cast<std::uint64_t>();
  r.grant_key = t[3].cast<std::uint64_t>();
  r.complete_key = t[4].cast<std::uint64_t>();
  if (t.size() == 6) r.delay = t[5].cast<double>();
  return r;
}

std::vector<metrics::GrantRecord> records_arg(const py::iterable& it) {
  std::vector<metrics::GrantRecord> out;
  for (auto h : it) out.push_back(record_arg(h));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Batched priority lock: native lock, queue simulator and metrics";
  m.attr("__version__") = BPL_VERSION;

  py::class_<BatchedPriorityLock>(m, "BatchedPriorityLock")
      .def(py::init<unsigned>(), py::arg("m"))
      .def(
          "acquire",
          [](BatchedPriorityLock& lock, std::uint32_t priority, std::uint32_t core) {
            AcquireTicket t;
            {
              py::gil_scoped_release nogil;
              t = lock.acquire(priority, core);
            }
            return ticket_dict(t);
          },
          py::arg("priority"), py::arg("core"), "Spin until granted. Lower priority value wins within a batch.")
      .def("release", &BatchedPriorityLock::release);

  m.def("batch_count_bits", &batch_count_bits, py::arg("m"));
  m.def(
      "next_batch_word",
      [](std::uint64_t word, unsigned k) {
        if (k == 0 || k >= 64) throw py::value_error("k must be in 1..63");
        return next_batch_word<std::uint64_t>(word, k);
      },
      py::arg("word"), py::arg("k"), "Clear the low k count bits and advance the batch ID.");

  m.def(
      "simulate",
      [](unsigned sources, unsigned mbs, double lambda_ratio, const std::string& policy, std::uint64_t seed,
         std::uint64_t budget, bool trace) {
        sim::SimConfig c;
        c.m = sources;
        c.mean_burst_size = mbs;
        c.burst_rate_ratio = lambda_ratio;
        c.policy = policy_arg(policy);
        c.seed = seed;
        c.request_budget = budget;
        if (auto errors = c.validate(); !errors.empty()) throw py::value_error(errors.front());
        sim::SimResult result;
        metrics::CellRow row;
        Verdict verdict;
        {
          py::gil_scoped_release nogil;
          result = sim::run_sim(c);
          row = sim::summarize(result);
          verdict = sim::verify(result);
        }
        py::dict d = row_dict(row);
        d["verdict"] = verdict_dict(verdict);
        if (trace) {
          std::ostringstream os;
          sim::write_trace_csv(os, result);
          d["trace_csv"] = os.str();
          py::list served;
          for (const auto& r : sim::served_records(result)) {
            served.append(py::make_tuple(r.source, r.priority, r.request_key, r.grant_key, r.complete_key, r.delay));
          }
          d["served"] = served;
        }
        return d;
      },
      py::arg("m") = 8, py::arg("mbs") = 4, py::arg("lambda_ratio") = 0.01, py::arg("policy") = "BPL",
      py::arg("seed") = 1, py::arg("budget") = 0, py::arg("trace") = false,
      "Run the machine-repairman simulator; budget 0 means m * 10000 requests.");

  m.def(
      "count_inversions",
      [](const py::iterable& served, bool count_in_service_blocker) {
        const auto rep = metrics::count_inversions(records_arg(served), {.count_in_service_blocker = count_in_service_blocker});
        py::dict d;
        d["requests"] = rep.requests;
        d["instances"] = rep.instances;
        d["affected"] = rep.affected;
        d["affected_percent"] = rep.affected_percent();
        d["instances_by_source"] = rep.instances_by_source;
        return d;
      },
      py::arg("served"), py::arg("count_in_service_blocker") = false,
      "served: (source, priority, request, grant, complete[, delay]) tuples.");

  m.def(
      "weighted_mean_delay",
      [](unsigned sources, const py::iterable& served) {
        return metrics::weighted_mean_delay(metrics::build_delay_table(sources, records_arg(served)));
      },
      py::arg("m"), py::arg("served"));

  m.def(
      "stress",
      [](const std::string& discipline, unsigned threads, std::uint64_t acquisitions) {
        bench::StressConfig c;
        c.discipline = discipline_arg(discipline);
        c.threads = threads;
        c.acquisitions = acquisitions;
        bench::StressReport r;
        {
          py::gil_scoped_release nogil;
          r = bench::run_stress(c);
        }
        py::dict d = verdict_dict(r.verdict);
        d["acquisitions"] = r.acquisitions;
        d["intrusions"] = r.intrusions;
        d["elapsed_s"] = r.elapsed_s;
        d["oversubscribed"] = r.env.oversubscribed;
        return d;
      },
      py::arg("discipline") = "BPL", py::arg("threads") = 4, py::arg("acquisitions") = 10000);

  m.def(
      "uncontested",
      [](const std::string& discipline, std::size_t samples) {
        bench::OverheadReport r;
        const auto d = discipline_arg(discipline);
        {
          py::gil_scoped_release nogil;
          r = bench::measure_uncontested(d, samples);
        }
        py::dict out;
        out["min"] = r.min;
        out["median"] = r.median;
        out["p999"] = r.p999;
        out["max"] = r.max;
        out["samples"] = r.samples;
        out["pairs_per_sample"] = r.pairs_per_sample;
        return out;
      },
      py::arg("discipline") = "BPL", py::arg("samples") = 10000, "Acquire+release cost in cycles.");

  m.def(
      "explore",
      [](unsigned threads, unsigned cycles, unsigned bound, const std::string& discipline) {
        explore::ExploreOptions o;
        o.threads = threads;
        o.cycles = cycles;
        o.preemption_bound = bound;
        o.discipline = discipline_arg(discipline);
        explore::ExploreReport r;
        {
          py::gil_scoped_release nogil;
          r = explore::explore(o);
        }
        py::dict d;
        d["ok"] = r.ok();
        d["exhausted"] = r.exhausted;
        d["executions"] = r.executions;
        d["livelocks"] = r.livelocks;
        d["max_bypass"] = r.max_bypass;
        d["max_batch_size"] = r.max_batch_size;
        d["summary"] = r.summary();
        return d;
      },
      py::arg("threads") = 2, py::arg("cycles") = 1, py::arg("bound") = 2, py::arg("discipline") = "BPL",
      "Enumerate schedules within a preemption bound.");
}
