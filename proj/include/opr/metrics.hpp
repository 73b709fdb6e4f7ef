#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "ingest.hpp"
#include "model.hpp"
#include "timeutil.hpp"

#include <json.hpp>

namespace opr {

/// NDCG with linear gain over the first n ranks. The ideal ordering sorts the
/// labels of the same ranked ids. Returns 1 when the ideal DCG is 0.
inline double ndcg_at(std::span<const std::size_t> ranking, std::span<const double> labels, std::size_t n) {
  if (n < 1) throw ConfigError("ndcg_at: n must be >= 1");
  const std::size_t k = std::min(n, ranking.size());
  std::vector<double> ideal;
  ideal.reserve(ranking.size());
  for (std::size_t id : ranking) ideal.push_back(labels[id]);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double dcg = 0.0, idcg = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double discount = 1.0 / std::log2(static_cast<double>(i) + 2.0);
    dcg += labels[ranking[i]] * discount;
    idcg += ideal[i] * discount;
  }
  return idcg > 0.0 ? dcg / idcg : 1.0;
}

/// Average precision truncated at n, an item being relevant iff its label is
/// positive. Normalized by min(n, #relevant); 0 when nothing is relevant.
inline double map_at(std::span<const std::size_t> ranking, std::span<const double> labels, std::size_t n) {
  if (n < 1) throw ConfigError("map_at: n must be >= 1");
  std::size_t relevant = 0;
  for (std::size_t id : ranking) relevant += labels[id] > 0.0;
  if (relevant == 0) return 0.0;
  const std::size_t k = std::min(n, ranking.size());
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (labels[ranking[i]] > 0.0) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return acc / static_cast<double>(std::min(k, relevant));
}

inline constexpr std::size_t kDefaultMaxWait = 24;

/// Intervals from t' until location j is first vacant (0 if vacant at t'),
/// capped at max_wait.
inline std::size_t waiting_time(const OccupancyMatrix& m, std::size_t j, std::size_t t_prime,
                                std::size_t max_wait = kDefaultMaxWait) {
  if (t_prime >= m.num_intervals()) throw DataError("waiting_time: t' beyond the last interval");
  for (std::size_t w = 0; w < max_wait && t_prime + w < m.num_intervals(); ++w) {
    if (!m.occupied(j, t_prime + w)) return w;
  }
  return max_wait;
}

struct RankedQueryResult {
  std::size_t query = 0;
  std::vector<std::size_t> ranking;  // candidate ids, best first
  std::vector<double> labels;        // full label row, indexed by vertex id
  std::size_t time_index = 0;        // t
  std::size_t target_time = 0;       // t'
};

struct WaitingMetrics {
  double awtp = 0.0;
  double iawtp = 0.0;
  double rnwtr = 1.0;
};

/// AWTP@n: mean over queries of the smallest waiting time in the top n.
/// IAWTP@n: same for the ranking sorted by true waiting time over the same
/// candidates. RNWTR@n = IAWTP / AWTP (1 when AWTP is 0).
inline WaitingMetrics awtp_rnwtr(std::span<const RankedQueryResult> results, const OccupancyMatrix& m,
                                 std::size_t n, std::size_t max_wait = kDefaultMaxWait) {
  if (results.empty()) throw DataError("awtp_rnwtr: no query results");
  if (n < 1) throw ConfigError("awtp_rnwtr: n must be >= 1");
  double total = 0.0, ideal = 0.0;
  for (const auto& r : results) {
    std::size_t best = max_wait, oracle = max_wait;
    for (std::size_t i = 0; i < r.ranking.size(); ++i) {
      const std::size_t w = waiting_time(m, r.ranking[i], r.target_time, max_wait);
      oracle = std::min(oracle, w);
      if (i < n) best = std::min(best, w);
    }
    total += static_cast<double>(best);
    ideal += static_cast<double>(oracle);
  }
  WaitingMetrics out;
  const auto count = static_cast<double>(results.size());
  out.awtp = total / count;
  out.iawtp = ideal / count;
  out.rnwtr = out.awtp > 0.0 ? out.iawtp / out.awtp : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  for (double x : v) r.std += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(v.size()));
  return r;
}

inline constexpr std::size_t kWaitDepth = 5;

struct MetricsReport {
  std::string model;
  std::string scenario = "all";
  std::size_t num_queries = 0;
  bool empty = true;
  MeanStd ndcg1, ndcg5, map1, map5;
  std::array<double, kWaitDepth> awtp{}, iawtp{}, rnwtr{};
};

inline MetricsReport summarize(std::span<const RankedQueryResult> results, const OccupancyMatrix& m,
                               const std::string& model, const std::string& scenario = "all",
                               std::size_t max_wait = kDefaultMaxWait) {
  MetricsReport rep;
  rep.model = model;
  rep.scenario = scenario;
  rep.num_queries = results.size();
  rep.empty = results.empty();
  if (results.empty()) {
    rep.rnwtr.fill(1.0);
    return rep;
  }
  std::vector<double> n1, n5, m1, m5;
  for (const auto& r : results) {
    n1.push_back(ndcg_at(r.ranking, r.labels, 1));
    n5.push_back(ndcg_at(r.ranking, r.labels, 5));
    m1.push_back(map_at(r.ranking, r.labels, 1));
    m5.push_back(map_at(r.ranking, r.labels, 5));
  }
  rep.ndcg1 = mean_std(n1);
  rep.ndcg5 = mean_std(n5);
  rep.map1 = mean_std(m1);
  rep.map5 = mean_std(m5);
  for (std::size_t n = 1; n <= kWaitDepth; ++n) {
    const auto w = awtp_rnwtr(results, m, n, max_wait);
    rep.awtp[n - 1] = w.awtp;
    rep.iawtp[n - 1] = w.iawtp;
    rep.rnwtr[n - 1] = w.rnwtr;
  }
  return rep;
}

inline void to_json(nlohmann::json& j, const MeanStd& v) { j = nlohmann::json{{"mean", v.mean}, {"std", v.std}}; }

inline void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = nlohmann::json{{"model", r.model},     {"scenario", r.scenario}, {"num_queries", r.num_queries},
                     {"empty", r.empty},     {"ndcg@1", r.ndcg1},      {"ndcg@5", r.ndcg5},
                     {"map@1", r.map1},      {"map@5", r.map5},        {"awtp", r.awtp},
                     {"iawtp", r.iawtp},     {"rnwtr", r.rnwtr}};
}

inline void write_metrics_csv(std::ostream& os, std::span<const MetricsReport> reports) {
  os << "model,scenario,num_queries,ndcg1,ndcg1_std,ndcg5,ndcg5_std,map1,map1_std,map5,map5_std";
  for (std::size_t n = 1; n <= kWaitDepth; ++n) os << ",awtp" << n;
  for (std::size_t n = 1; n <= kWaitDepth; ++n) os << ",rnwtr" << n;
  os << '\n';
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : reports) {
    os << r.model << ',' << r.scenario << ',' << r.num_queries << ',' << num(r.ndcg1.mean) << ','
       << num(r.ndcg1.std) << ',' << num(r.ndcg5.mean) << ',' << num(r.ndcg5.std) << ','
       << num(r.map1.mean) << ',' << num(r.map1.std) << ',' << num(r.map5.mean) << ','
       << num(r.map5.std);
    for (double v : r.awtp) os << ',' << num(v);
    for (double v : r.rnwtr) os << ',' << num(v);
    os << '\n';
  }
}

/// Long-format rows (model, metric, scenario, value, std) for bar charts.
inline void write_plot_data(std::ostream& os, std::span<const MetricsReport> reports) {
  os << "model,metric,scenario,value,std\n";
  char buf[160];
  for (const auto& r : reports) {
    if (r.empty) continue;
    auto row = [&](const char* metric, double v, double s) {
      std::snprintf(buf, sizeof buf, "%s,%s,%s,%.10g,%.10g\n", r.model.c_str(), metric,
                    r.scenario.c_str(), v, s);
      os << buf;
    };
    row("ndcg@1", r.ndcg1.mean, r.ndcg1.std);
    row("ndcg@5", r.ndcg5.mean, r.ndcg5.std);
    row("map@1", r.map1.mean, r.map1.std);
    row("map@5", r.map5.mean, r.map5.std);
    for (std::size_t n = 0; n < kWaitDepth; ++n) {
      const std::string a = "awtp@" + std::to_string(n + 1), w = "rnwtr@" + std::to_string(n + 1);
      row(a.c_str(), r.awtp[n], 0.0);
      row(w.c_str(), r.rnwtr[n], 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// Scenarios

inline bool is_workday(Minutes t) { return weekday(t) < 5; }

/// 07:00 <= time of day < 19:00.
inline bool is_daytime(Minutes t) {
  const int mod = minute_of_day(t);
  return mod >= 7 * 60 && mod < 19 * 60;
}

/// Reports for all, workday, weekend, daytime and nighttime queries, keyed
/// by the wall-clock time of each query's t.
inline std::vector<MetricsReport> slice_scenarios(std::span<const RankedQueryResult> results,
                                                  const OccupancyMatrix& m, const std::string& model,
                                                  std::size_t max_wait = kDefaultMaxWait) {
  std::map<std::string, std::vector<RankedQueryResult>> buckets;
  for (const auto& r : results) {
    const Minutes when = m.time_of(r.time_index);
    buckets[is_workday(when) ? "workday" : "weekend"].push_back(r);
    buckets[is_daytime(when) ? "daytime" : "nighttime"].push_back(r);
  }
  std::vector<MetricsReport> out{summarize(results, m, model, "all", max_wait)};
  for (const char* s : {"workday", "weekend", "daytime", "nighttime"}) {
    out.push_back(summarize(buckets[s], m, model, s, max_wait));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prediction-then-recommendation baselines

enum class Predictor { persistence, historical_mean };

inline Predictor parse_predictor(const std::string& s) {
  if (s == "persistence") return Predictor::persistence;
  if (s == "historical_mean") return Predictor::historical_mean;
  throw ConfigError("unknown baseline '" + s + "' (expected persistence or historical_mean)");
}

inline std::string to_string(Predictor p) {
  return p == Predictor::persistence ? "persistence" : "historical_mean";
}

/// Per-location, per-time-of-day vacancy frequency over intervals [0, end).
class HistoricalMean {
 public:
  HistoricalMean(const OccupancyMatrix& m, std::size_t end) : slots_(slots_per_day(m)), interval_(m.interval_minutes()) {
    end = std::min(end, m.num_intervals());
    const std::size_t N = m.num_locations();
    vacant_.assign(N * slots_, 0.0);
    seen_.assign(N * slots_, 0.0);
    overall_.assign(N, 0.5);
    for (std::size_t i = 0; i < N; ++i) {
      double v = 0.0;
      for (std::size_t t = 0; t < end; ++t) {
        const std::size_t s = slot(m.time_of(t));
        seen_[i * slots_ + s] += 1.0;
        if (!m.occupied(i, t)) {
          vacant_[i * slots_ + s] += 1.0;
          v += 1.0;
        }
      }
      if (end > 0) overall_[i] = v / static_cast<double>(end);
    }
  }

  /// Estimated probability that location i is vacant at wall-clock time `when`.
  double vacancy(std::size_t i, Minutes when) const {
    const std::size_t s = slot(when);
    const double n = seen_[i * slots_ + s];
    return n > 0 ? vacant_[i * slots_ + s] / n : overall_[i];
  }

 private:
  static std::size_t slots_per_day(const OccupancyMatrix& m) {
    return static_cast<std::size_t>((1440 + m.interval_minutes() - 1) / m.interval_minutes());
  }
  std::size_t slot(Minutes when) const { return static_cast<std::size_t>(minute_of_day(when) / interval_); }

  std::size_t slots_;
  int interval_;
  std::vector<double> vacant_, seen_, overall_;
};

/// Predicted vacancy probability of every location at t' = t + horizon.
inline std::vector<double> baseline_scores(const OccupancyMatrix& m, std::size_t t, std::size_t horizon,
                                           Predictor predictor, const HistoricalMean* history) {
  std::vector<double> s(m.num_locations());
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (predictor == Predictor::persistence) {
      s[j] = m.occupied(j, t) ? 0.0 : 1.0;
    } else {
      if (!history) throw ConfigError("historical_mean baseline requires a fitted history");
      s[j] = history->vacancy(j, m.time_of(t + horizon));
    }
  }
  return s;
}

/// Ranks each query's candidate set by the baseline scores.
inline std::vector<RankedQueryResult> baseline_predict_then_recommend(
    const OccupancyMatrix& m, const SpatialGraph& g, std::size_t t, std::size_t horizon,
    Predictor predictor, const HistoricalMean* history, std::span<const double> labels) {
  const std::vector<double> scores = baseline_scores(m, t, horizon, predictor, history);
  const std::size_t N = g.num_vertices();
  std::vector<RankedQueryResult> out;
  for (std::size_t d = 0; d < N; ++d) {
    RankedQueryResult r;
    r.query = d;
    r.ranking = g.candidates(d);
    std::vector<std::size_t> hops(N, 2);
    hops[d] = 0;
    for (std::size_t j : g.neighbors(d)) hops[j] = 1;
    rank_ids(r.ranking, scores, hops);
    if (!labels.empty()) r.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(d * N),
                                         labels.begin() + static_cast<std::ptrdiff_t>((d + 1) * N));
    r.time_index = t;
    r.target_time = t + horizon;
    out.push_back(std::move(r));
  }
  return out;
}

/// Ranks each query's candidate set by row d of an [N, N] score matrix.
inline std::vector<RankedQueryResult> rank_score_matrix(std::span<const double> scores, const SpatialGraph& g,
                                                        std::size_t t, std::size_t horizon,
                                                        std::span<const double> labels) {
  const std::size_t N = g.num_vertices();
  if (scores.size() != N * N) throw DimensionError("rank_score_matrix: expected an N x N score matrix");
  std::vector<RankedQueryResult> out;
  std::vector<std::size_t> hops(N, 2);
  for (std::size_t d = 0; d < N; ++d) {
    std::fill(hops.begin(), hops.end(), 2);
    hops[d] = 0;
    for (std::size_t j : g.neighbors(d)) hops[j] = 1;
    RankedQueryResult r;
    r.query = d;
    r.ranking = g.candidates(d);
    rank_ids(r.ranking, scores.subspan(d * N, N), hops);
    if (!labels.empty()) r.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(d * N),
                                         labels.begin() + static_cast<std::ptrdiff_t>((d + 1) * N));
    r.time_index = t;
    r.target_time = t + horizon;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace opr
