#pragma once

// Quadratic reference for metrics::count_inversions: for each request R,
// scan every other grant G and charge it when G ranks below R and is
// granted while R waits. Deliberately naive; share nothing with the
// production code path.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "bpl/metrics.hpp"

namespace bpl::test {

struct OracleReport {
  std::uint64_t instances = 0;
  std::uint64_t affected = 0;
  std::vector<std::uint64_t> instances_by_source;
};

inline OracleReport brute_force_inversions(const std::vector<metrics::GrantRecord>& served, bool in_service_blocker) {
  OracleReport rep;
  std::uint32_t max_source = 0;
  for (const auto& r : served) max_source = std::max(max_source, r.source);
  rep.instances_by_source.assign(served.empty() ? 0 : max_source + 1, 0);
  for (const auto& r : served) {
    std::uint64_t n = 0;
    for (const auto& g : served) {
      if (&g == &r || g.priority <= r.priority) continue;
      const bool during_wait = r.request_key < g.grant_key && g.grant_key < r.grant_key;
      const bool holding_at_request = g.grant_key < r.request_key && r.request_key < g.complete_key;
      if (during_wait || (in_service_blocker && holding_at_request)) ++n;
    }
    rep.instances += n;
    rep.instances_by_source[r.source] += n;
    if (n > 0) ++rep.affected;
  }
  return rep;
}

}  // namespace bpl::test
