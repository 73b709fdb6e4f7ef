#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csv.hpp"
#include "error.hpp"
#include "random.hpp"
#include "timeutil.hpp"

namespace opr {

inline constexpr double kEarthRadiusM = 6371000.0;

struct MeterLocation {
  std::string meter_id;
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees

  bool operator==(const MeterLocation&) const = default;
};

/// Fixed-interval boolean occupancy, one row per location (true = occupied).
class OccupancyMatrix {
 public:
  OccupancyMatrix() = default;

  OccupancyMatrix(std::vector<std::string> meter_ids, std::size_t num_intervals,
                  std::vector<std::uint8_t> states, int interval_minutes = 5,
                  Minutes start_time = 0)
      : meter_ids_(std::move(meter_ids)),
        num_intervals_(num_intervals),
        states_(std::move(states)),
        interval_minutes_(interval_minutes),
        start_time_(start_time) {
    if (interval_minutes_ <= 0) throw DataError("interval_minutes must be positive");
    if (states_.size() != meter_ids_.size() * num_intervals_) {
      throw DataError("occupancy matrix: state buffer does not match dimensions");
    }
    for (std::size_t i = 0; i < meter_ids_.size(); ++i) {
      if (!index_.emplace(meter_ids_[i], i).second) {
        throw DataError("duplicate meter_id '" + meter_ids_[i] + "'");
      }
    }
    for (auto& s : states_) s = s ? 1 : 0;
  }

  std::size_t num_locations() const noexcept { return meter_ids_.size(); }
  std::size_t num_intervals() const noexcept { return num_intervals_; }
  int interval_minutes() const noexcept { return interval_minutes_; }
  Minutes start_time() const noexcept { return start_time_; }
  const std::vector<std::string>& meter_ids() const noexcept { return meter_ids_; }

  bool occupied(std::size_t location, std::size_t t) const {
    return states_[location * num_intervals_ + t] != 0;
  }
  std::span<const std::uint8_t> row(std::size_t location) const {
    return {states_.data() + location * num_intervals_, num_intervals_};
  }
  std::optional<std::size_t> index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  /// Wall-clock time of interval t.
  Minutes time_of(std::size_t t) const {
    return start_time_ + static_cast<Minutes>(t) * interval_minutes_;
  }

  bool operator==(const OccupancyMatrix& o) const {
    return meter_ids_ == o.meter_ids_ && num_intervals_ == o.num_intervals_ &&
           states_ == o.states_ && interval_minutes_ == o.interval_minutes_ &&
           start_time_ == o.start_time_;
  }

 private:
  std::vector<std::string> meter_ids_;
  std::size_t num_intervals_ = 0;
  std::vector<std::uint8_t> states_;
  int interval_minutes_ = 5;
  Minutes start_time_ = 0;
  std::map<std::string, std::size_t> index_;
};

/// Undirected spatial graph over meter locations. Edges are stored once as
/// (i, j) with i < j, sorted.
class SpatialGraph {
 public:
  SpatialGraph() = default;

  SpatialGraph(std::vector<MeterLocation> vertices,
               std::vector<std::pair<std::size_t, std::size_t>> edges)
      : vertices_(std::move(vertices)), adjacency_(vertices_.size()) {
    for (auto [a, b] : edges) {
      if (a >= vertices_.size() || b >= vertices_.size()) {
        throw DataError("edge endpoint out of range");
      }
      if (a == b) throw DataError("self-edge on vertex " + std::to_string(a));
      if (a > b) std::swap(a, b);
      edges_.emplace_back(a, b);
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
    for (auto [a, b] : edges_) {
      adjacency_[a].push_back(b);
      adjacency_[b].push_back(a);
    }
    for (auto& n : adjacency_) std::sort(n.begin(), n.end());
  }

  std::size_t num_vertices() const noexcept { return vertices_.size(); }
  const std::vector<MeterLocation>& vertices() const noexcept { return vertices_; }
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }
  /// Sorted neighbor ids of v.
  const std::vector<std::size_t>& neighbors(std::size_t v) const { return adjacency_[v]; }

  bool has_edge(std::size_t a, std::size_t b) const {
    const auto& n = adjacency_[a];
    return std::binary_search(n.begin(), n.end(), b);
  }

  /// d itself plus its 1-hop neighbors, ascending.
  std::vector<std::size_t> candidates(std::size_t d) const {
    std::vector<std::size_t> c = adjacency_[d];
    c.insert(std::lower_bound(c.begin(), c.end(), d), d);
    return c;
  }

  bool operator==(const SpatialGraph& o) const {
    return vertices_ == o.vertices_ && edges_ == o.edges_;
  }

 private:
  std::vector<MeterLocation> vertices_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::vector<std::vector<std::size_t>> adjacency_;
};

/// Great-circle distance in meters.
inline double haversine_distance(const MeterLocation& a, const MeterLocation& b) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double phi1 = a.lat * deg, phi2 = b.lat * deg;
  const double dphi = (b.lat - a.lat) * deg;
  const double dlambda = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dphi / 2), s2 = std::sin(dlambda / 2);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(std::min(1.0, h)));
}

/// Connects every pair of locations strictly closer than threshold_m.
inline SpatialGraph build_adjacency(std::vector<MeterLocation> locations, double threshold_m = 50.0) {
  if (!(threshold_m > 0.0)) throw ConfigError("adjacency threshold must be positive");
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    if (!seen.emplace(locations[i].meter_id, i).second) {
      throw DataError("duplicate meter_id '" + locations[i].meter_id + "'");
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i < locations.size(); ++i) {
    for (std::size_t j = i + 1; j < locations.size(); ++j) {
      if (haversine_distance(locations[i], locations[j]) < threshold_m) edges.emplace_back(i, j);
    }
  }
  return SpatialGraph(std::move(locations), std::move(edges));
}

// ---------------------------------------------------------------------------
// Record parsing

struct IngestOptions {
  int interval_minutes = 5;
  /// Rows with a larger fraction of empty cells are dropped.
  double max_missing_fraction = 0.10;
};

struct IngestResult {
  OccupancyMatrix matrix;
  std::vector<std::string> dropped;  // meter ids removed for excessive gaps
};

namespace detail {

struct Observation {
  std::size_t meter;  // index in first-appearance order
  Minutes time;
  bool occupied;
};

inline Minutes floor_to(Minutes t, int interval) {
  const Minutes q = t >= 0 ? t / interval : (t - interval + 1) / interval;
  return q * interval;
}

inline IngestResult assemble(const std::vector<std::string>& ids,
                             const std::vector<Observation>& obs, const IngestOptions& opt) {
  if (obs.empty()) throw DataError("empty dataset: no records");
  if (opt.interval_minutes <= 0) throw ConfigError("interval_minutes must be positive");
  Minutes lo = obs.front().time, hi = obs.front().time;
  for (const auto& o : obs) {
    lo = std::min(lo, o.time);
    hi = std::max(hi, o.time);
  }
  const Minutes start = floor_to(lo, opt.interval_minutes);
  const auto n = static_cast<std::size_t>((floor_to(hi, opt.interval_minutes) - start) /
                                          opt.interval_minutes) + 1;

  std::vector<std::vector<std::int8_t>> cells(ids.size(), std::vector<std::int8_t>(n, -1));
  for (const auto& o : obs) {
    const auto t = static_cast<std::size_t>((floor_to(o.time, opt.interval_minutes) - start) /
                                            opt.interval_minutes);
    cells[o.meter][t] = o.occupied ? 1 : 0;
  }

  IngestResult result;
  std::vector<std::string> kept;
  std::vector<std::uint8_t> states;
  for (std::size_t m = 0; m < ids.size(); ++m) {
    auto& row = cells[m];
    const auto missing = static_cast<std::size_t>(std::count(row.begin(), row.end(), -1));
    if (static_cast<double>(missing) > opt.max_missing_fraction * static_cast<double>(n)) {
      result.dropped.push_back(ids[m]);
      continue;
    }
    // Carry the last observation forward; a leading gap takes the first observation.
    auto first = std::find_if(row.begin(), row.end(), [](std::int8_t c) { return c >= 0; });
    std::int8_t last = *first;
    for (auto& c : row) {
      if (c < 0) c = last;
      last = c;
    }
    kept.push_back(ids[m]);
    states.insert(states.end(), row.begin(), row.end());
  }
  result.matrix = OccupancyMatrix(std::move(kept), n, std::move(states), opt.interval_minutes, start);
  return result;
}

inline std::size_t intern(std::map<std::string, std::size_t>& index, std::vector<std::string>& ids,
                          const std::string& id) {
  auto [it, inserted] = index.emplace(id, ids.size());
  if (inserted) ids.push_back(id);
  return it->second;
}

inline Minutes require_timestamp(const std::string& s, std::size_t line) {
  auto t = parse_timestamp(s);
  if (!t) throw DataError("invalid timestamp '" + s + "'", line);
  return *t;
}

}  // namespace detail

/// Per-space records: header `meter_id,timestamp,state`, state in {0,1}.
inline IngestResult parse_space_records(const csv::Table& table, const IngestOptions& opt = {}) {
  const std::size_t c_id = table.require("meter_id");
  const std::size_t c_ts = table.require("timestamp");
  const std::size_t c_state = table.require("state");
  std::map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<detail::Observation> obs;
  obs.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.lines[r];
    if (row[c_id].empty()) throw DataError("empty meter_id", line);
    const Minutes t = detail::require_timestamp(row[c_ts], line);
    const auto& st = row[c_state];
    if (st != "0" && st != "1") throw DataError("invalid state '" + st + "'", line);
    obs.push_back({detail::intern(index, ids, row[c_id]), t, st == "1"});
  }
  return detail::assemble(ids, obs, opt);
}

/// Per-street records: header `street_id,timestamp,occupied_count,capacity`.
/// A cell is occupied when occupied_count / capacity is strictly above
/// `threshold`.
inline IngestResult parse_street_records(const csv::Table& table, double threshold = 0.90,
                                         const IngestOptions& opt = {}) {
  const std::size_t c_id = table.require("street_id");
  const std::size_t c_ts = table.require("timestamp");
  const std::size_t c_occ = table.require("occupied_count");
  const std::size_t c_cap = table.require("capacity");
  std::map<std::string, std::size_t> index;
  std::vector<std::string> ids;
  std::vector<detail::Observation> obs;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.lines[r];
    if (row[c_id].empty()) throw DataError("empty street_id", line);
    const Minutes t = detail::require_timestamp(row[c_ts], line);
    auto occ = csv::to_number<double>(row[c_occ]);
    auto cap = csv::to_number<double>(row[c_cap]);
    if (!occ || *occ < 0) throw DataError("invalid occupied_count '" + row[c_occ] + "'", line);
    if (!cap || !(*cap > 0)) throw DataError("invalid capacity '" + row[c_cap] + "'", line);
    // Compare occ > threshold * cap to avoid rounding in the ratio at the boundary.
    obs.push_back({detail::intern(index, ids, row[c_id]), t, *occ > threshold * *cap});
  }
  return detail::assemble(ids, obs, opt);
}

/// Locations file: header `meter_id,lat,lon`.
inline std::vector<MeterLocation> parse_locations(const csv::Table& table) {
  const std::size_t c_id = table.require("meter_id");
  const std::size_t c_lat = table.require("lat");
  const std::size_t c_lon = table.require("lon");
  std::vector<MeterLocation> out;
  std::map<std::string, std::size_t> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t line = table.lines[r];
    auto lat = csv::to_number<double>(row[c_lat]);
    auto lon = csv::to_number<double>(row[c_lon]);
    if (!lat || *lat < -90 || *lat > 90) throw DataError("invalid lat '" + row[c_lat] + "'", line);
    if (!lon || *lon < -180 || *lon > 180) throw DataError("invalid lon '" + row[c_lon] + "'", line);
    if (!seen.emplace(row[c_id], r).second) {
      throw DataError("duplicate meter_id '" + row[c_id] + "'", line);
    }
    out.push_back({row[c_id], *lat, *lon});
  }
  if (out.empty()) throw DataError("empty dataset: no locations");
  return out;
}

/// Subset and reorder `locations` to follow the matrix rows.
inline std::vector<MeterLocation> align_locations(const OccupancyMatrix& matrix,
                                                  const std::vector<MeterLocation>& locations) {
  std::map<std::string, const MeterLocation*> by_id;
  for (const auto& l : locations) by_id.emplace(l.meter_id, &l);
  std::vector<MeterLocation> out;
  for (const auto& id : matrix.meter_ids()) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("no location for meter '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: occupancy CSV has one column per meter, one row per interval.

inline void write_matrix_csv(std::ostream& os, const OccupancyMatrix& m) {
  for (std::size_t i = 0; i < m.num_locations(); ++i) os << (i ? "," : "") << m.meter_ids()[i];
  os << '\n';
  std::string line;
  for (std::size_t t = 0; t < m.num_intervals(); ++t) {
    line.clear();
    for (std::size_t i = 0; i < m.num_locations(); ++i) {
      if (i) line.push_back(',');
      line.push_back(m.occupied(i, t) ? '1' : '0');
    }
    line.push_back('\n');
    os << line;
  }
}

inline OccupancyMatrix read_matrix_csv(const csv::Table& table, int interval_minutes,
                                       Minutes start_time) {
  const std::size_t L = table.header.size();
  const std::size_t n = table.rows.size();
  if (n == 0) throw DataError("empty dataset: occupancy matrix has no rows");
  std::vector<std::uint8_t> states(L * n);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < L; ++i) {
      const auto& c = table.rows[t][i];
      if (c != "0" && c != "1") throw DataError("invalid state '" + c + "'", table.lines[t]);
      states[i * n + t] = c == "1";
    }
  }
  return OccupancyMatrix(table.header, n, std::move(states), interval_minutes, start_time);
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthConfig {
  std::size_t num_locations = 30;
  std::size_t num_intervals = 5000;
  double grid_spacing_m = 40.0;
  double base_occupancy_rate = 0.5;
  double spatial_correlation = 0.5;
  std::size_t daily_period_intervals = 288;
  std::uint64_t rng_seed = 7;
  /// Spread of per-location occupancy levels around the base rate, as a
  /// fraction of min(base, 1 - base).
  double heterogeneity = 0.9;
  /// Per-location turnover speed is drawn uniformly from this range.
  double turnover_min = 0.7;
  double turnover_max = 1.0;
  int interval_minutes = 5;
  Minutes start_time = *parse_timestamp("2022-01-03T00:00");

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (num_locations < 1 || num_intervals < 1 || daily_period_intervals < 1) {
      throw ConfigError("synth: counts must be >= 1");
    }
    if (!prob(base_occupancy_rate) || !prob(spatial_correlation) || !prob(heterogeneity) ||
        !prob(turnover_min) || !prob(turnover_max) || turnover_min > turnover_max) {
      throw ConfigError("synth: probabilities must lie in [0,1]");
    }
    if (!(grid_spacing_m > 0.0)) throw ConfigError("synth: grid_spacing_m must be positive");
    if (interval_minutes <= 0) throw ConfigError("synth: interval_minutes must be positive");
  }
};

struct SynthData {
  std::vector<MeterLocation> locations;
  OccupancyMatrix matrix;
};

/// Grid-placed locations, each following a two-state Markov chain. The
/// chain's stationary occupancy mixes a per-location level with a daily
/// sinusoid, and is pulled toward the neighbors' mean state at the previous
/// interval with weight `spatial_correlation`.
inline SynthData synth_generate(const SynthConfig& cfg, double adjacency_m = 50.0) {
  cfg.validate();
  const std::size_t N = cfg.num_locations, T = cfg.num_intervals;
  Rng rng(cfg.rng_seed);

  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(N))));
  constexpr double lat0 = 22.28, lon0 = 114.16;
  constexpr double deg = 180.0 / std::numbers::pi;
  std::vector<MeterLocation> locations;
  for (std::size_t i = 0; i < N; ++i) {
    const double dy = static_cast<double>(i / cols) * cfg.grid_spacing_m;
    const double dx = static_cast<double>(i % cols) * cfg.grid_spacing_m;
    char id[24];
    std::snprintf(id, sizeof id, "S%03zu", i);
    locations.push_back({id, lat0 + dy / kEarthRadiusM * deg,
                         lon0 + dx / (kEarthRadiusM * std::cos(lat0 / deg)) * deg});
  }
  const SpatialGraph graph = build_adjacency(locations, adjacency_m);

  const double margin = std::min(cfg.base_occupancy_rate, 1.0 - cfg.base_occupancy_rate);
  std::vector<double> offsets(N);
  for (std::size_t i = 0; i < N; ++i) {
    offsets[i] = N == 1 ? 0.0 : 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(N) - 1.0;
  }
  rng.shuffle(offsets);
  std::vector<double> level(N), speed(N);
  for (std::size_t i = 0; i < N; ++i) {
    level[i] = cfg.base_occupancy_rate + cfg.heterogeneity * margin * offsets[i];
    speed[i] = cfg.turnover_min + (cfg.turnover_max - cfg.turnover_min) * rng.uniform();
  }
  const double amplitude = (1.0 - cfg.heterogeneity) * margin;
  const double rho = cfg.spatial_correlation;

  std::vector<std::uint8_t> states(N * T);
  for (std::size_t i = 0; i < N; ++i) states[i * T] = rng.uniform() < level[i];
  for (std::size_t t = 1; t < T; ++t) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(t % cfg.daily_period_intervals) /
                         static_cast<double>(cfg.daily_period_intervals);
    const double diurnal = amplitude * std::sin(phase);
    for (std::size_t i = 0; i < N; ++i) {
      const auto& nb = graph.neighbors(i);
      double own = std::clamp(level[i] + diurnal, 0.0, 1.0);
      double pull = own;
      if (!nb.empty()) {
        pull = 0.0;
        for (std::size_t j : nb) pull += states[j * T + t - 1];
        pull /= static_cast<double>(nb.size());
      }
      const double target = (1.0 - rho) * own + rho * pull;
      const bool prev = states[i * T + t - 1] != 0;
      const double flip = prev ? speed[i] * (1.0 - target) : speed[i] * target;
      const bool next = rng.uniform() < flip ? !prev : prev;
      states[i * T + t] = next;
    }
  }

  std::vector<std::string> ids;
  for (const auto& l : locations) ids.push_back(l.meter_id);
  return {std::move(locations),
          OccupancyMatrix(std::move(ids), T, std::move(states), cfg.interval_minutes, cfg.start_time)};
}

}  // namespace opr
