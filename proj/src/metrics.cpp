#include "bpl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bpl::metrics {

double DelayTable::max_delay() const {
  double d = 0;
  for (const auto& s : sources) d = std::max(d, s.max_delay);
  return d;
}

double DelayTable::highest_priority_delay() const {
  if (sources.empty()) throw std::invalid_argument("empty delay table");
  const auto it = std::min_element(sources.begin(), sources.end(),
                                   [](const SourceDelay& a, const SourceDelay& b) { return a.priority < b.priority; });
  return it->mean_delay;
}

DelayTable build_delay_table(unsigned m, const std::vector<GrantRecord>& served,
                             const std::vector<GrantRecord>& censored) {
  DelayTable t;
  t.sources.resize(m);
  std::vector<double> sums(m, 0.0);
  std::vector<bool> seen(m, false);
  auto add = [&](const GrantRecord& g) {
    if (g.source >= m) throw std::invalid_argument("source " + std::to_string(g.source) + " outside 0..m-1");
    auto& s = t.sources[g.source];
    if (seen[g.source] && s.priority != g.priority) {
      throw std::invalid_argument("source " + std::to_string(g.source) + " changed priority");
    }
    seen[g.source] = true;
    s.source = g.source;
    s.priority = g.priority;
    ++s.requests;
    sums[g.source] += g.delay;
    s.max_delay = std::max(s.max_delay, g.delay);
  };
  for (const auto& g : served) add(g);
  for (const auto& g : censored) add(g);
  for (unsigned i = 0; i < m; ++i) {
    t.sources[i].source = i;
    if (t.sources[i].requests > 0) t.sources[i].mean_delay = sums[i] / static_cast<double>(t.sources[i].requests);
  }

  // Weight m for the most important source down to 1 for the least.
  std::vector<unsigned> order(m);
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](unsigned a, unsigned b) {
    const auto pa = seen[a] ? t.sources[a].priority : std::numeric_limits<std::uint32_t>::max();
    const auto pb = seen[b] ? t.sources[b].priority : std::numeric_limits<std::uint32_t>::max();
    return pa < pb;
  });
  for (unsigned rank = 0; rank < m; ++rank) t.sources[order[rank]].weight = m - rank;
  return t;
}

double weighted_mean_delay(const DelayTable& table) {
  if (table.sources.empty()) throw std::invalid_argument("weighted mean delay of an empty table");
  double num = 0;
  double den = 0;
  for (const auto& s : table.sources) {
    if (s.requests == 0) throw std::invalid_argument("no delay data for source " + std::to_string(s.source));
    num += static_cast<double>(s.weight) * s.mean_delay;
    den += static_cast<double>(s.weight);
  }
  return num / den;
}

namespace {

class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t i) {
    for (++i; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  // Count over [0, i).
  std::uint64_t prefix(std::size_t i) const {
    std::uint64_t s = 0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

}  // namespace

InversionReport count_inversions(const std::vector<GrantRecord>& served, InversionOptions options) {
  std::vector<GrantRecord> g = served;
  std::sort(g.begin(), g.end(), [](const GrantRecord& a, const GrantRecord& b) { return a.grant_key < b.grant_key; });
  const std::size_t n = g.size();
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (g[i + 1].grant_key < g[i].complete_key) {
      throw std::invalid_argument("overlapping services at grant " + std::to_string(i));
    }
  }

  InversionReport rep;
  rep.requests = n;
  std::uint32_t max_source = 0;
  for (const auto& r : g) max_source = std::max(max_source, r.source);
  rep.instances_by_source.assign(n == 0 ? 0 : max_source + 1, 0);
  rep.affected_by_source.assign(n == 0 ? 0 : max_source + 1, 0);

  // Priority ranks, so "lower priority than p" is a suffix of rank space.
  std::vector<std::uint32_t> prios;
  prios.reserve(n);
  for (const auto& r : g) prios.push_back(r.priority);
  std::sort(prios.begin(), prios.end());
  prios.erase(std::unique(prios.begin(), prios.end()), prios.end());
  auto rank = [&](std::uint32_t p) {
    return static_cast<std::size_t>(std::lower_bound(prios.begin(), prios.end(), p) - prios.begin());
  };

  std::vector<std::uint64_t> grant_keys(n);
  for (std::size_t i = 0; i < n; ++i) grant_keys[i] = g[i].grant_key;

  // For request r: lower-priority grants among positions [lo, r).
  struct Query {
    std::size_t pos;
    std::size_t owner;
    int sign;
  };
  std::vector<Query> queries;
  queries.reserve(2 * n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto lo = static_cast<std::size_t>(std::upper_bound(grant_keys.begin(), grant_keys.end(), g[r].request_key) -
                                             grant_keys.begin());
    if (lo >= r) continue;
    queries.push_back({r, r, +1});
    queries.push_back({lo, r, -1});
  }
  std::sort(queries.begin(), queries.end(), [](const Query& a, const Query& b) { return a.pos < b.pos; });

  std::vector<std::int64_t> counts(n, 0);
  Fenwick tree(prios.size());
  std::size_t q = 0;
  for (std::size_t pos = 0; pos <= n; ++pos) {
    for (; q < queries.size() && queries[q].pos == pos; ++q) {
      const auto& query = queries[q];
      const std::size_t rk = rank(g[query.owner].priority);
      const std::uint64_t lower_priority = tree.prefix(prios.size()) - tree.prefix(rk + 1);
      counts[query.owner] += query.sign * static_cast<std::int64_t>(lower_priority);
    }
    if (pos < n) tree.add(rank(g[pos].priority));
  }

  if (options.count_in_service_blocker) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto lo = std::upper_bound(grant_keys.begin(), grant_keys.end(), g[r].request_key);
      if (lo == grant_keys.begin()) continue;
      const std::size_t holder = static_cast<std::size_t>(lo - grant_keys.begin()) - 1;
      if (holder == r) continue;
      if (g[holder].complete_key > g[r].request_key && g[holder].priority > g[r].priority) ++counts[r];
    }
  }

  for (std::size_t r = 0; r < n; ++r) {
    const auto c = static_cast<std::uint64_t>(counts[r]);
    rep.instances += c;
    rep.instances_by_source[g[r].source] += c;
    if (c > 0) {
      ++rep.affected;
      ++rep.affected_by_source[g[r].source];
    }
  }
  return rep;
}

std::string CellRow::cell_key() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "m=%u|mbs=%u|lambda=%.9g|arrival=%s|seed=%llu", m, mbs, lambda_ratio, arrival.c_str(),
                static_cast<unsigned long long>(seed));
  return buf;
}

CellRow summarize_cell(unsigned m, const std::vector<GrantRecord>& served, const std::vector<GrantRecord>& censored,
                       InversionOptions options) {
  CellRow row;
  row.m = m;
  const auto inv = count_inversions(served, options);
  row.inversion_pct = inv.affected_percent();
  row.inversion_instances = inv.instances;
  row.inversion_affected = inv.affected;
  row.requests = inv.requests;
  const auto table = build_delay_table(m, served, censored);
  row.d_w = weighted_mean_delay(table);
  row.d_highest_priority = table.highest_priority_delay();
  row.d_max = table.max_delay();
  return row;
}

void normalize(std::vector<CellRow>& rows, const std::string& baseline) {
  std::map<std::string, double> base;
  for (const auto& r : rows) {
    if (r.policy == baseline) base[r.cell_key()] = r.d_w;
  }
  for (auto& r : rows) {
    const auto it = base.find(r.cell_key());
    if (it == base.end()) throw std::invalid_argument("no " + baseline + " baseline for cell " + r.cell_key());
    r.d_w_normalized = it->second > 0 ? r.d_w / it->second : std::numeric_limits<double>::quiet_NaN();
  }
}

namespace {

constexpr const char* kColumns[] = {"m",        "mbs",   "lambda_ratio",       "policy",
                                    "seed",     "inversion_pct",      "inversion_instances",
                                    "d_w",      "d_w_normalized",     "d_highest_priority",
                                    "d_max",    "inversion_affected", "requests",
                                    "arrival",  "fingerprint"};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string sanitize(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void write_cells_csv(std::ostream& os, const std::vector<CellRow>& rows) {
  os << "# schema: " << kCellSchema << "\n";
  for (std::size_t i = 0; i < std::size(kColumns); ++i) os << (i ? "," : "") << kColumns[i];
  os << "\n";
  for (const auto& r : rows) {
    os << r.m << ',' << r.mbs << ',' << num(r.lambda_ratio) << ',' << r.policy << ',' << r.seed << ','
       << num(r.inversion_pct) << ',' << r.inversion_instances << ',' << num(r.d_w) << ','
       << (r.d_w_normalized ? num(*r.d_w_normalized) : "") << ',' << num(r.d_highest_priority) << ',' << num(r.d_max)
       << ',' << r.inversion_affected << ',' << r.requests << ',' << r.arrival << ',' << sanitize(r.fingerprint) << "\n";
  }
}

void write_cells_json(std::ostream& os, const std::vector<CellRow>& rows) {
  nlohmann::ordered_json doc;
  doc["schema"] = kCellSchema;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["m"] = r.m;
    j["mbs"] = r.mbs;
    j["lambda_ratio"] = r.lambda_ratio;
    j["policy"] = r.policy;
    j["seed"] = r.seed;
    j["inversion_pct"] = r.inversion_pct;
    j["inversion_instances"] = r.inversion_instances;
    j["d_w"] = r.d_w;
    j["d_w_normalized"] = r.d_w_normalized ? nlohmann::ordered_json(*r.d_w_normalized) : nlohmann::ordered_json();
    j["d_highest_priority"] = r.d_highest_priority;
    j["d_max"] = r.d_max;
    j["inversion_affected"] = r.inversion_affected;
    j["requests"] = r.requests;
    j["arrival"] = r.arrival;
    j["fingerprint"] = r.fingerprint;
    doc["rows"].push_back(std::move(j));
  }
  os << doc.dump(2) << "\n";
}

std::vector<CellRow> read_cells_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != std::string("# schema: ") + kCellSchema) {
    throw std::runtime_error("schema mismatch: expected '# schema: " + std::string(kCellSchema) + "', got '" + line + "'");
  }
  if (!std::getline(is, line)) throw std::runtime_error("missing header row");
  const auto header = split(line);
  if (header.size() != std::size(kColumns) || !std::equal(header.begin(), header.end(), std::begin(kColumns))) {
    throw std::runtime_error("schema mismatch: unexpected header '" + line + "'");
  }
  std::vector<CellRow> rows;
  std::size_t lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != std::size(kColumns)) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": expected " + std::to_string(std::size(kColumns)) +
                               " fields, got " + std::to_string(f.size()));
    }
    try {
      CellRow r;
      r.m = static_cast<unsigned>(std::stoul(f[0]));
      r.mbs = static_cast<unsigned>(std::stoul(f[1]));
      r.lambda_ratio = std::stod(f[2]);
      r.policy = f[3];
      r.seed = std::stoull(f[4]);
      r.inversion_pct = std::stod(f[5]);
      r.inversion_instances = std::stoull(f[6]);
      r.d_w = std::stod(f[7]);
      if (!f[8].empty()) r.d_w_normalized = std::stod(f[8]);
      r.d_highest_priority = std::stod(f[9]);
      r.d_max = std::stod(f[10]);
      r.inversion_affected = std::stoull(f[11]);
      r.requests = std::stoull(f[12]);
      r.arrival = f[13];
      r.fingerprint = f[14];
      rows.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw std::runtime_error("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<CellRow> read_cells_json(std::istream& is) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("unreadable JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != kCellSchema) {
    throw std::runtime_error("schema mismatch: expected schema '" + std::string(kCellSchema) + "'");
  }
  std::vector<CellRow> rows;
  try {
    for (const auto& j : doc.at("rows")) {
      CellRow r;
      r.m = j.at("m").get<unsigned>();
      r.mbs = j.at("mbs").get<unsigned>();
      r.lambda_ratio = j.at("lambda_ratio").get<double>();
      r.policy = j.at("policy").get<std::string>();
      r.seed = j.at("seed").get<std::uint64_t>();
      r.inversion_pct = j.at("inversion_pct").get<double>();
      r.inversion_instances = j.at("inversion_instances").get<std::uint64_t>();
      r.d_w = j.at("d_w").get<double>();
      if (!j.at("d_w_normalized").is_null()) r.d_w_normalized = j.at("d_w_normalized").get<double>();
      r.d_highest_priority = j.at("d_highest_priority").get<double>();
      r.d_max = j.at("d_max").get<double>();
      r.inversion_affected = j.at("inversion_affected").get<std::uint64_t>();
      r.requests = j.at("requests").get<std::uint64_t>();
      r.arrival = j.at("arrival").get<std::string>();
      r.fingerprint = j.at("fingerprint").get<std::string>();
      rows.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("schema mismatch: ") + e.what());
  }
  return rows;
}

}  // namespace bpl::metrics
