#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "error.hpp"
#include "ingest.hpp"

#include <json.hpp>

namespace opr {

/// One completed run of a single state. `occupied == false` is vacant.
struct Event {
  bool occupied = false;
  std::size_t duration = 0;

  bool operator==(const Event&) const = default;
};

/// Turnover-event path of one location: the completed runs, oldest first,
/// plus the run still in progress at `reference_time`. Each event's duration
/// is the weight of the edge leaving its node.
struct EventPath {
  std::vector<Event> events;
  bool current_state = false;
  std::size_t current_duration = 0;
  std::size_t reference_time = 0;

  std::size_t length() const {
    std::size_t n = current_duration;
    for (const auto& e : events) n += e.duration;
    return n;
  }

  /// Alternating states, positive durations, last event differs from the
  /// current run.
  bool well_formed() const {
    if (current_duration == 0) return false;
    for (std::size_t k = 0; k < events.size(); ++k) {
      if (events[k].duration == 0) return false;
      if (k + 1 < events.size() && events[k].occupied == events[k + 1].occupied) return false;
    }
    return events.empty() || events.back().occupied != current_state;
  }

  bool operator==(const EventPath&) const = default;
};

/// Run-length contraction of a state sequence. `reference_time` is the
/// interval index of the last element (defaults to sequence.size() - 1).
inline EventPath contract_path(std::span<const std::uint8_t> sequence,
                               std::optional<std::size_t> reference_time = std::nullopt) {
  if (sequence.empty()) throw DataError("contract_path: empty sequence");
  EventPath path;
  path.reference_time = reference_time.value_or(sequence.size() - 1);
  bool state = sequence[0] != 0;
  std::size_t run = 1;
  for (std::size_t i = 1; i < sequence.size(); ++i) {
    const bool s = sequence[i] != 0;
    if (s == state) {
      ++run;
    } else {
      path.events.push_back({state, run});
      state = s;
      run = 1;
    }
  }
  path.current_state = state;
  path.current_duration = run;
  return path;
}

/// Inverse of contract_path.
inline std::vector<std::uint8_t> expand_path(const EventPath& path) {
  std::vector<std::uint8_t> out;
  out.reserve(path.length());
  for (const auto& e : path.events) out.insert(out.end(), e.duration, e.occupied ? 1 : 0);
  out.insert(out.end(), path.current_duration, path.current_state ? 1 : 0);
  return out;
}

struct ESGraph {
  SpatialGraph spatial;
  std::vector<EventPath> paths;
  std::vector<std::uint8_t> real_time_state;  // 1 = occupied
  std::size_t reference_time = 0;

  std::size_t num_event_nodes() const {
    std::size_t n = 0;
    for (const auto& p : paths) n += p.events.size() + 1;
    return n;
  }
  std::size_t num_event_edges() const {
    std::size_t n = 0;
    for (const auto& p : paths) n += p.events.size();
    return n;
  }
};

/// Contracts every row of `matrix` over [0, reference_time] and attaches the
/// resulting event paths to the spatial vertices.
inline ESGraph merge_esgraph(const OccupancyMatrix& matrix, const SpatialGraph& spatial,
                             std::size_t reference_time) {
  if (matrix.num_locations() != spatial.num_vertices()) {
    throw DataError("merge_esgraph: matrix has " + std::to_string(matrix.num_locations()) +
                    " rows but graph has " + std::to_string(spatial.num_vertices()) + " vertices");
  }
  if (reference_time >= matrix.num_intervals()) {
    throw DataError("merge_esgraph: reference_time beyond the last interval");
  }
  ESGraph g;
  g.spatial = spatial;
  g.reference_time = reference_time;
  g.paths.reserve(matrix.num_locations());
  for (std::size_t i = 0; i < matrix.num_locations(); ++i) {
    g.paths.push_back(contract_path(matrix.row(i).first(reference_time + 1), reference_time));
    g.real_time_state.push_back(g.paths.back().current_state ? 1 : 0);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Event windows

/// +1 for vacant, -1 for occupied.
constexpr double state_sign(bool occupied) noexcept { return occupied ? -1.0 : 1.0; }

struct EventWindow {
  std::size_t num_locations = 0;
  std::size_t alpha = 0;
  /// [num_locations x alpha], newest event last, zero padding at the front.
  std::vector<double> signed_durations;
  /// Signed length of the ongoing run per location.
  std::vector<double> current_signed_duration;

  double at(std::size_t location, std::size_t k) const {
    return signed_durations[location * alpha + k];
  }
  bool current_occupied(std::size_t location) const {
    return current_signed_duration[location] < 0;
  }
  bool operator==(const EventWindow&) const = default;
};

inline EventWindow window_events(const ESGraph& g, std::size_t alpha) {
  if (alpha < 1) throw ConfigError("window_events: alpha must be >= 1");
  EventWindow w;
  w.num_locations = g.paths.size();
  w.alpha = alpha;
  w.signed_durations.assign(w.num_locations * alpha, 0.0);
  w.current_signed_duration.resize(w.num_locations);
  for (std::size_t i = 0; i < w.num_locations; ++i) {
    const auto& ev = g.paths[i].events;
    const std::size_t take = std::min(alpha, ev.size());
    for (std::size_t k = 0; k < take; ++k) {
      const Event& e = ev[ev.size() - take + k];
      w.signed_durations[i * alpha + (alpha - take) + k] =
          state_sign(e.occupied) * static_cast<double>(e.duration);
    }
    w.current_signed_duration[i] = state_sign(g.paths[i].current_state) *
                                   static_cast<double>(g.paths[i].current_duration);
  }
  return w;
}

/// Precomputed run boundaries of a whole matrix, answering window queries at
/// any reference time in O(log runs + alpha) per location. Equivalent to
/// window_events(merge_esgraph(matrix, spatial, t), alpha).
class RunIndex {
 public:
  explicit RunIndex(const OccupancyMatrix& matrix) : rows_(matrix.num_locations()) {
    for (std::size_t i = 0; i < matrix.num_locations(); ++i) {
      auto row = matrix.row(i);
      auto& r = rows_[i];
      for (std::size_t t = 0; t < row.size(); ++t) {
        if (t == 0 || row[t] != row[t - 1]) {
          r.starts.push_back(t);
          r.occupied.push_back(row[t]);
        }
      }
      r.starts.push_back(row.size());
    }
  }

  EventWindow window_at(std::size_t t, std::size_t alpha) const {
    if (alpha < 1) throw ConfigError("window_at: alpha must be >= 1");
    EventWindow w;
    w.num_locations = rows_.size();
    w.alpha = alpha;
    w.signed_durations.assign(w.num_locations * alpha, 0.0);
    w.current_signed_duration.resize(w.num_locations);
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      // Run containing t.
      const std::size_t run =
          static_cast<std::size_t>(std::upper_bound(r.starts.begin(), r.starts.end(), t) -
                                   r.starts.begin()) - 1;
      const std::size_t take = std::min(alpha, run);
      for (std::size_t k = 0; k < take; ++k) {
        const std::size_t e = run - take + k;
        w.signed_durations[i * alpha + (alpha - take) + k] =
            state_sign(r.occupied[e]) * static_cast<double>(r.starts[e + 1] - r.starts[e]);
      }
      w.current_signed_duration[i] =
          state_sign(r.occupied[run]) * static_cast<double>(t - r.starts[run] + 1);
    }
    return w;
  }

 private:
  struct Runs {
    std::vector<std::size_t> starts;  // run start indices, plus a sentinel
    std::vector<std::uint8_t> occupied;
  };
  std::vector<Runs> rows_;
};

// ---------------------------------------------------------------------------
// Storage and access-cost accounting (STGraph grid vs. event paths)

struct ComplexityReport {
  std::size_t num_locations = 0;
  std::size_t num_intervals = 0;
  std::size_t alpha = 0;
  std::size_t stgraph_cells = 0;
  std::size_t esgraph_nodes = 0;
  std::size_t esgraph_edges = 0;
  /// Reviewing all states over the full length.
  std::size_t task1_steps_st = 0;
  std::size_t task1_steps_es = 0;
  /// Reviewing the last alpha turnover events.
  std::size_t task2_steps_st = 0;
  std::size_t task2_steps_es = 0;

  bool operator==(const ComplexityReport&) const = default;
};

inline void to_json(nlohmann::json& j, const ComplexityReport& r) {
  j = nlohmann::json{{"num_locations", r.num_locations}, {"num_intervals", r.num_intervals},
                     {"alpha", r.alpha},                 {"stgraph_cells", r.stgraph_cells},
                     {"esgraph_nodes", r.esgraph_nodes}, {"esgraph_edges", r.esgraph_edges},
                     {"task1_steps_st", r.task1_steps_st}, {"task1_steps_es", r.task1_steps_es},
                     {"task2_steps_st", r.task2_steps_st}, {"task2_steps_es", r.task2_steps_es}};
}

inline ComplexityReport bench_complexity(const OccupancyMatrix& matrix, std::size_t alpha) {
  if (alpha < 1) throw ConfigError("bench_complexity: alpha must be >= 1");
  ComplexityReport r;
  r.num_locations = matrix.num_locations();
  r.num_intervals = matrix.num_intervals();
  r.alpha = alpha;
  r.stgraph_cells = r.num_locations * r.num_intervals;
  r.task1_steps_st = r.stgraph_cells;
  r.task2_steps_es = r.num_locations * alpha;
  if (r.num_intervals == 0) return r;
  for (std::size_t i = 0; i < matrix.num_locations(); ++i) {
    const EventPath p = contract_path(matrix.row(i));
    r.esgraph_nodes += p.events.size() + 1;
    r.esgraph_edges += p.events.size();
    // A grid scan walks back through the ongoing run and every interval of
    // the last alpha events.
    std::size_t scanned = p.current_duration;
    const std::size_t take = std::min(alpha, p.events.size());
    for (std::size_t k = p.events.size() - take; k < p.events.size(); ++k) {
      scanned += p.events[k].duration;
    }
    r.task2_steps_st += scanned;
  }
  r.task1_steps_es = r.esgraph_nodes;
  return r;
}

struct StoragePoint {
  std::size_t n = 0;     // intervals
  std::size_t f_st = 0;  // grid cells
  std::size_t f_es = 0;  // event nodes
};

/// Storage of both representations on growing prefixes of the matrix.
inline std::vector<StoragePoint> storage_curve(const OccupancyMatrix& matrix, std::size_t points) {
  std::vector<StoragePoint> out;
  const std::size_t T = matrix.num_intervals();
  if (T == 0 || points == 0) return out;
  for (std::size_t p = 1; p <= points; ++p) {
    const std::size_t n = std::max<std::size_t>(1, T * p / points);
    if (!out.empty() && out.back().n == n) continue;
    StoragePoint sp{n, matrix.num_locations() * n, 0};
    for (std::size_t i = 0; i < matrix.num_locations(); ++i) {
      sp.f_es += contract_path(matrix.row(i).first(n)).events.size() + 1;
    }
    out.push_back(sp);
  }
  return out;
}

}  // namespace opr
