#include "bpl/simqueue.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace bpl::sim {

std::string_view to_string(Policy p) noexcept {
  switch (p) {
    case Policy::kFifo: return "FL";
    case Policy::kPriority: return "PL";
    case Policy::kBatched: return "BPL";
  }
  return "?";
}

std::optional<Policy> parse_policy(std::string_view name) noexcept {
  if (name == "FL" || name == "fl") return Policy::kFifo;
  if (name == "PL" || name == "pl") return Policy::kPriority;
  if (name == "BPL" || name == "bpl") return Policy::kBatched;
  return std::nullopt;
}

std::vector<std::string> SimConfig::validate() const {
  std::vector<std::string> bad;
  if (m < 2) bad.push_back("m: need at least 2 sources, got " + std::to_string(m));
  if (m > 64) bad.push_back("m: at most 64 sources, got " + std::to_string(m));
  if (mean_burst_size < 1 || mean_burst_size > m / 2) {
    bad.push_back("mbs: mean burst size must lie in [1, m/2], got " + std::to_string(mean_burst_size));
  }
  if (!(service_rate > 0) || !std::isfinite(service_rate)) bad.push_back("mu: service rate must be positive");
  if (!(burst_rate_ratio > 0) || burst_rate_ratio > 1.0) {
    bad.push_back("lambda: burst rate must lie in (0, 1] times mu, got " + std::to_string(burst_rate_ratio));
  }
  return bad;
}

EventQueue::Event EventQueue::pop() {
  Event e = heap_.top();
  heap_.pop();
  return e;
}

namespace {
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose};
  return std::mt19937_64(seq);
}
}  // namespace

RngStreams::RngStreams(std::uint64_t seed)
    : arrivals(stream(seed, 1)), burst_size(stream(seed, 2)), selection(stream(seed, 3)), service(stream(seed, 4)) {}

std::vector<std::uint32_t> draw_burst(RngStreams& rng, unsigned mean_burst_size, std::vector<std::uint32_t> idle) {
  const unsigned size = std::uniform_int_distribution<unsigned>(0, 2 * mean_burst_size)(rng.burst_size);
  const std::size_t take = std::min<std::size_t>(size, idle.size());
  // Partial Fisher-Yates: the first `take` slots become a uniform ordered sample.
  for (std::size_t i = 0; i < take; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, idle.size() - 1)(rng.selection);
    std::swap(idle[i], idle[j]);
  }
  idle.resize(take);
  return idle;
}

void PendingSet::add(const SimRequest& r, std::size_t handle) {
  switch (policy_) {
    case Policy::kFifo:
      heap_.push({r.t_request, r.request_seq, 0, 0, handle});
      break;
    case Policy::kPriority:
      heap_.push({static_cast<double>(r.priority), 0, static_cast<std::uint64_t>(r.request_seq), r.source, handle});
      break;
    case Policy::kBatched:
      heap_.push({static_cast<double>(r.batch_tag.value_or(0)), r.priority, r.source, 0, handle});
      break;
  }
}

std::size_t PendingSet::next_grant() {
  if (heap_.empty()) throw std::logic_error("next_grant on an empty pending set");
  const std::size_t h = heap_.top().handle;
  heap_.pop();
  return h;
}

SimResult run_sim(const SimConfig& config) {
  if (auto bad = config.validate(); !bad.empty()) throw std::invalid_argument(bad.front());

  SimResult result;
  result.config = config;
  const std::uint64_t budget = config.budget();
  result.completed.reserve(budget);

  RngStreams rng(config.seed);
  std::exponential_distribution<double> inter_burst(config.burst_rate());
  std::exponential_distribution<double> service_time(config.service_rate);

  std::vector<SimRequest> requests;  // every request ever issued, by handle
  std::vector<std::optional<std::size_t>> outstanding(config.m);
  PendingSet pending(config.policy);
  EventQueue events;
  std::uint64_t seq = 0;
  std::uint64_t open_batch = 0;
  std::optional<std::size_t> in_service;
  double now = 0;

  auto grant_next = [&] {
    const std::size_t h = pending.next_grant();
    SimRequest& r = requests[h];
    r.t_start = now;
    r.grant_seq = seq++;
    r.t_complete = now + service_time(rng.service);
    in_service = h;
    events.push({r.t_complete, EventQueue::Kind::kCompletion, r.source});
  };

  events.push({inter_burst(rng.arrivals), EventQueue::Kind::kBurst, 0});
  while (result.completed.size() < budget) {
    const auto ev = events.pop();
    now = ev.time;
    if (ev.kind == EventQueue::Kind::kCompletion) {
      SimRequest& done = requests[*in_service];
      done.complete_seq = seq++;
      outstanding[done.source].reset();
      result.completed.push_back(done);
      in_service.reset();
      // The holder opens a new batch just before it lets go.
      ++open_batch;
      if (!pending.empty()) grant_next();
      continue;
    }

    std::vector<std::uint32_t> idle;
    for (std::uint32_t s = 0; s < config.m; ++s) {
      if (!outstanding[s]) idle.push_back(s);
    }
    for (std::uint32_t s : draw_burst(rng, config.mean_burst_size, std::move(idle))) {
      SimRequest r;
      r.source = s;
      r.priority = source_priority(s);
      r.t_request = now;
      r.request_seq = seq++;
      if (config.policy == Policy::kBatched) r.batch_tag = open_batch;
      outstanding[s] = requests.size();
      pending.add(r, requests.size());
      requests.push_back(r);
    }
    if (!in_service && !pending.empty()) {
      grant_next();
      // Granted on arrival at an idle server: no batch membership.
      requests[*in_service].batch_tag.reset();
    }
    events.push({now + inter_burst(rng.arrivals), EventQueue::Kind::kBurst, 0});
  }

  result.end_time = now;
  for (std::uint32_t s = 0; s < config.m; ++s) {
    if (outstanding[s] && outstanding[s] != in_service) {
      SimRequest r = requests[*outstanding[s]];
      r.t_start = std::numeric_limits<double>::quiet_NaN();
      r.t_complete = std::numeric_limits<double>::quiet_NaN();
      result.outstanding.push_back(r);
    }
  }
  return result;
}

std::vector<Acquisition> to_acquisitions(const SimResult& result) {
  std::vector<Acquisition> out;
  out.reserve(result.completed.size());
  for (const auto& r : result.completed) {
    out.push_back(Acquisition{.core = r.source,
                              .priority = r.priority,
                              .request_seq = r.request_seq,
                              .acquire_seq = r.grant_seq,
                              .release_seq = r.complete_seq,
                              .batch = r.batch_tag});
  }
  return out;
}

Verdict verify(const SimResult& result) {
  const auto acquisitions = to_acquisitions(result);
  Verdict v = check_mutual_exclusion(acquisitions);
  for (std::size_t i = 1; i < result.completed.size(); ++i) {
    if (result.completed[i].t_start < result.completed[i - 1].t_complete) {
      v.fail("service intervals overlap at grant " + std::to_string(i));
      break;
    }
  }
  if (result.config.policy == Policy::kBatched) {
    v.merge(check_bounded_bypass(acquisitions, result.config.m));
    v.merge(check_batch_cardinality(acquisitions, result.config.m));
    v.merge(check_batch_fifo(acquisitions));
  }
  return v;
}

std::vector<metrics::GrantRecord> served_records(const SimResult& result) {
  std::vector<metrics::GrantRecord> out;
  out.reserve(result.completed.size());
  for (const auto& r : result.completed) {
    out.push_back({.source = r.source,
                   .priority = r.priority,
                   .request_key = r.request_seq,
                   .grant_key = r.grant_seq,
                   .complete_key = r.complete_seq,
                   .delay = r.delay()});
  }
  return out;
}

std::vector<metrics::GrantRecord> censored_records(const SimResult& result) {
  std::vector<metrics::GrantRecord> out;
  for (const auto& r : result.outstanding) {
    out.push_back({.source = r.source,
                   .priority = r.priority,
                   .request_key = r.request_seq,
                   .delay = result.end_time - r.t_request});
  }
  return out;
}

metrics::CellRow summarize(const SimResult& result, metrics::InversionOptions options) {
  auto row = metrics::summarize_cell(result.config.m, served_records(result), censored_records(result), options);
  row.mbs = result.config.mean_burst_size;
  row.lambda_ratio = result.config.burst_rate_ratio;
  row.policy = std::string(to_string(result.config.policy));
  row.seed = result.config.seed;
  return row;
}

void write_trace_csv(std::ostream& os, const SimResult& result) {
  os << "source,priority,t_request,t_start,t_complete,batch_tag,policy,seed\n";
  char buf[256];
  const auto policy = to_string(result.config.policy);
  for (const auto& r : result.completed) {
    const std::string tag = r.batch_tag ? std::to_string(*r.batch_tag) : "";
    std::snprintf(buf, sizeof buf, "%u,%u,%.6f,%.6f,%.6f,%s,%.*s,%llu\n", r.source, r.priority, r.t_request, r.t_start,
                  r.t_complete, tag.c_str(), static_cast<int>(policy.size()), policy.data(),
                  static_cast<unsigned long long>(result.config.seed));
    os << buf;
  }
}

}  // namespace bpl::sim
