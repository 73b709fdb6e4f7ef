#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "adam.hpp"
#include "error.hpp"
#include "esgraph.hpp"
#include "ingest.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "random.hpp"
#include "tensor.hpp"

#include <json.hpp>

namespace opr {

struct TrainConfig {
  ModelConfig model;
  std::size_t horizon_intervals = 4;
  double lambda = 0.5;       // softmax-loss weight
  double l2_coeff = 1e-4;
  double dropout_rate = 0.1;
  std::size_t batch_size = 128;
  std::size_t steps = 1000;
  /// When nonzero, overrides `steps` with epochs * ceil(train / batch).
  std::size_t epochs = 0;
  double learning_rate = 0.002;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::uint64_t rng_seed = 1;
  double beta_prox = 0.5;
  double beta_dur = 0.5;
  std::size_t duration_cap = 12;
  std::size_t eval_every = 50;
  /// Validation NDCG@1 is computed on at most this many evenly spaced samples.
  std::size_t val_max_samples = 200;

  void validate() const {
    model.validate();
    if (horizon_intervals < 1) throw ConfigError("horizon_intervals must be >= 1");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (l2_coeff < 0) throw ConfigError("l2_coeff must be >= 0");
    if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 1 && epochs < 1) throw ConfigError("steps or epochs must be >= 1");
    if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
    if (train_fraction <= 0 || val_fraction < 0 || test_fraction < 0 ||
        std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9) {
      throw ConfigError("split fractions must be non-negative and sum to 1");
    }
    if (duration_cap < 1) throw ConfigError("duration_cap must be >= 1");
    if (beta_prox < 0 || beta_dur < 0 || beta_prox + beta_dur <= 0) {
      throw ConfigError("label weights must be non-negative and not both zero");
    }
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"horizon_intervals", c.horizon_intervals},
                     {"lambda", c.lambda},
                     {"l2_coeff", c.l2_coeff},
                     {"dropout_rate", c.dropout_rate},
                     {"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"train_fraction", c.train_fraction},
                     {"val_fraction", c.val_fraction},
                     {"test_fraction", c.test_fraction},
                     {"rng_seed", c.rng_seed},
                     {"beta_prox", c.beta_prox},
                     {"beta_dur", c.beta_dur},
                     {"duration_cap", c.duration_cap},
                     {"eval_every", c.eval_every},
                     {"val_max_samples", c.val_max_samples}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.model = j.at("model").get<ModelConfig>();
  c.horizon_intervals = j.at("horizon_intervals").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.l2_coeff = j.at("l2_coeff").get<double>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.steps = j.at("steps").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.test_fraction = j.at("test_fraction").get<double>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  c.beta_prox = j.at("beta_prox").get<double>();
  c.beta_dur = j.at("beta_dur").get<double>();
  c.duration_cap = j.at("duration_cap").get<std::size_t>();
  c.eval_every = j.at("eval_every").get<std::size_t>();
  c.val_max_samples = j.at("val_max_samples").get<std::size_t>();
}

// ---------------------------------------------------------------------------
// Labels

/// Consecutive vacant intervals starting at t (0 if occupied at t).
inline std::size_t remaining_vacancy(const OccupancyMatrix& m, std::size_t j, std::size_t t,
                                     std::size_t cap = std::numeric_limits<std::size_t>::max()) {
  std::size_t n = 0;
  while (t + n < m.num_intervals() && n < cap && !m.occupied(j, t + n)) ++n;
  return n;
}

/// Row-major [N, N] relevance of candidate j for query d at t' = t + horizon.
/// Raw score: 0 when j is occupied at t' or outside d's neighborhood, else
/// beta_prox / (1 + hops) + beta_dur * min(vacancy, cap) / cap. Each row is
/// then min-max scaled to [0, 1] (an all-equal row becomes all zeros).
inline std::vector<double> make_labels(const OccupancyMatrix& m, const SpatialGraph& g, std::size_t t,
                                       const TrainConfig& cfg) {
  const std::size_t N = g.num_vertices();
  if (m.num_locations() != N) throw DataError("make_labels: matrix and graph sizes differ");
  const std::size_t tp = t + cfg.horizon_intervals;
  if (tp >= m.num_intervals()) {
    throw DataError("make_labels: horizon t + " + std::to_string(cfg.horizon_intervals) +
                    " beyond the last interval");
  }
  const auto cap = static_cast<double>(cfg.duration_cap);
  std::vector<double> vacancy(N);
  for (std::size_t j = 0; j < N; ++j) {
    vacancy[j] = static_cast<double>(remaining_vacancy(m, j, tp, cfg.duration_cap));
  }
  std::vector<double> y(N * N, 0.0);
  for (std::size_t d = 0; d < N; ++d) {
    double* row = y.data() + d * N;
    for (std::size_t j : g.candidates(d)) {
      if (vacancy[j] == 0.0) continue;
      const double hops = j == d ? 0.0 : 1.0;
      row[j] = cfg.beta_prox / (1.0 + hops) + cfg.beta_dur * vacancy[j] / cap;
    }
    const auto [lo, hi] = std::minmax_element(row, row + N);
    const double mn = *lo, mx = *hi;
    for (std::size_t j = 0; j < N; ++j) row[j] = mx > mn ? (row[j] - mn) / (mx - mn) : 0.0;
  }
  return y;
}

// ---------------------------------------------------------------------------
// Dataset

struct LabeledSample {
  EventWindow window;
  std::vector<double> labels;  // [N, N]
  std::size_t time_index = 0;
};

struct Splits {
  std::vector<LabeledSample> train, val, test;
};

/// First and one-past-last usable time index: alpha intervals of warm-up and
/// room for the horizon.
inline std::pair<std::size_t, std::size_t> usable_range(const OccupancyMatrix& m, const TrainConfig& cfg) {
  const std::size_t first = cfg.model.alpha;
  const std::size_t T = m.num_intervals();
  if (T <= first + cfg.horizon_intervals) return {first, first};
  return {first, T - cfg.horizon_intervals};
}

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

inline SplitSizes split_sizes(std::size_t count, const TrainConfig& cfg) {
  SplitSizes s;
  s.train = static_cast<std::size_t>(std::floor(static_cast<double>(count) * cfg.train_fraction + 1e-9));
  s.val = static_cast<std::size_t>(std::floor(static_cast<double>(count) * cfg.val_fraction + 1e-9));
  s.train = std::min(s.train, count);
  s.val = std::min(s.val, count - s.train);
  s.test = count - s.train - s.val;
  return s;
}

/// Chronological train/val/test split over usable time indices; the training
/// part is shuffled with cfg.rng_seed.
inline Splits build_dataset(const OccupancyMatrix& m, const SpatialGraph& g, const TrainConfig& cfg) {
  cfg.validate();
  if (m.num_locations() != g.num_vertices()) throw DataError("build_dataset: matrix and graph sizes differ");
  const auto [first, last] = usable_range(m, cfg);
  const std::size_t count = last - first;
  const SplitSizes sizes = split_sizes(count, cfg);
  if (sizes.train == 0 || (cfg.val_fraction > 0 && sizes.val == 0) ||
      (cfg.test_fraction > 0 && sizes.test == 0)) {
    throw DataError("insufficient data: " + std::to_string(count) +
                    " usable time indices cannot fill the requested splits");
  }
  const RunIndex runs(m);
  auto sample = [&](std::size_t t) {
    return LabeledSample{runs.window_at(t, cfg.model.alpha), make_labels(m, g, t, cfg), t};
  };
  Splits s;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t t = first + k;
    if (k < sizes.train) {
      s.train.push_back(sample(t));
    } else if (k < sizes.train + sizes.val) {
      s.val.push_back(sample(t));
    } else {
      s.test.push_back(sample(t));
    }
  }
  Rng rng(cfg.rng_seed);
  rng.shuffle(s.train);
  return s;
}

// ---------------------------------------------------------------------------
// Objective

/// Sum of squared differences over the whole score matrix.
inline Tensor mse_loss(const Tensor& y, const Tensor& s) {
  if (y.shape() != s.shape()) throw DimensionError("mse_loss: label and score shapes differ");
  Tensor diff = sub(y, s);
  return sum(mul(diff, diff));
}

/// -sum over rows of sum_j y_j log softmax(s)_j, the softmax taken over the
/// unmasked entries of each row. `masked` may be empty (no mask).
inline Tensor softmax_loss(const Tensor& y, const Tensor& s, std::span<const std::uint8_t> masked = {}) {
  if (y.shape() != s.shape() || s.rank() != 2) throw DimensionError("softmax_loss: expected matching [rows, items]");
  Tensor logits = masked.empty() ? s : masked_fill(s, masked, kMaskedLogit);
  return scale(sum(mul(y, log_softmax(logits, 1))), -1.0);
}

inline Tensor l2_penalty(const std::vector<Tensor>& params) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& p : params) acc = add(acc, sum(mul(p, p)));
  return acc;
}

/// l_m + lambda * l_s + l2 * ||theta||^2.
inline Tensor loss(const Tensor& y, const Tensor& s, const std::vector<Tensor>& params, double lambda,
                   double l2, std::span<const std::uint8_t> masked = {}) {
  Tensor total = mse_loss(y, s);
  if (lambda != 0.0) total = add(total, scale(softmax_loss(y, s, masked), lambda));
  if (l2 != 0.0) total = add(total, scale(l2_penalty(params), l2));
  return total;
}

// ---------------------------------------------------------------------------
// Training

/// Forward pass for one sample without recording gradients.
inline std::vector<double> predict_scores(const ModelParams& p, const EventWindow& w, const Tensor& adjacency) {
  NoGradGuard no_grad;
  Tensor s = forward(p, make_inputs(w, adjacency, p.config));
  return {s.values().begin(), s.values().end()};
}

/// Model rankings for every query of every sample.
inline std::vector<RankedQueryResult> rank_samples(const ModelParams& p, std::span<const LabeledSample> samples,
                                                   const SpatialGraph& g, std::size_t horizon) {
  const Tensor adjacency({g.num_vertices(), g.num_vertices()}, normalized_adjacency(g));
  std::vector<RankedQueryResult> out;
  for (const auto& s : samples) {
    auto r = rank_score_matrix(predict_scores(p, s.window, adjacency), g, s.time_index, horizon, s.labels);
    out.insert(out.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  return out;
}

/// Mean NDCG@1 over all queries of the given samples.
inline double mean_ndcg1(const ModelParams& p, std::span<const LabeledSample> samples, const SpatialGraph& g,
                         std::size_t horizon) {
  const auto results = rank_samples(p, samples, g, horizon);
  if (results.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& r : results) acc += ndcg_at(r.ranking, r.labels, 1);
  return acc / static_cast<double>(results.size());
}

struct TrainLogRow {
  std::size_t step = 0;
  double train_loss = 0.0;
  double val_ndcg1 = 0.0;
};

struct TrainResult {
  ModelParams best;   // best validation NDCG@1 (final parameters without a validation set)
  ModelParams last;
  std::vector<TrainLogRow> log;
  double best_val_ndcg1 = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

inline void write_train_log(std::ostream& os, std::span<const TrainLogRow> log) {
  os << "step,train_loss,val_ndcg1\n";
  char buf[96];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g\n", r.step, r.train_loss, r.val_ndcg1);
    os << buf;
  }
}

inline std::size_t resolve_steps(const TrainConfig& cfg, std::size_t train_size) {
  if (cfg.epochs == 0) return cfg.steps;
  return cfg.epochs * ((train_size + cfg.batch_size - 1) / cfg.batch_size);
}

/// Minibatch Adam on the mean per-sample objective plus the L2 term.
/// Validation NDCG@1 is evaluated every cfg.eval_every steps and at the end;
/// the best parameters are retained.
inline TrainResult train_loop(const Splits& data, const SpatialGraph& g, const TrainConfig& cfg,
                              const ModelParams* initial = nullptr) {
  cfg.validate();
  if (data.train.empty()) throw DataError("train_loop: empty training set");
  const std::size_t N = g.num_vertices();
  ModelParams params = initial ? initial->clone() : ModelParams::init(cfg.model, g, cfg.rng_seed);
  if (params.num_vertices != N) throw ConfigError("train_loop: model built for a different graph size");
  std::vector<Tensor> tensors = params.tensors();
  const Tensor adjacency({N, N}, normalized_adjacency(g));

  std::vector<LabeledSample> val_subset;
  if (!data.val.empty()) {
    const std::size_t k = std::min(cfg.val_max_samples, data.val.size());
    for (std::size_t i = 0; i < k; ++i) val_subset.push_back(data.val[i * data.val.size() / k]);
  }

  Rng rng(cfg.rng_seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(data.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = 0;

  AdamState adam;
  adam.learning_rate = cfg.learning_rate;
  const ForwardContext train_ctx{cfg.dropout_rate, &rng};

  TrainResult result;
  result.steps = resolve_steps(cfg, data.train.size());
  result.best = params.clone();
  result.best_val_ndcg1 = -1.0;
  double loss_acc = 0.0;
  std::size_t loss_count = 0;

  for (std::size_t step = 1; step <= result.steps; ++step) {
    const std::size_t B = std::min(cfg.batch_size, data.train.size());
    Tensor batch_loss = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < B; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const LabeledSample& s = data.train[order[cursor++]];
      Tensor scores = forward(params, make_inputs(s.window, adjacency, cfg.model), train_ctx);
      Tensor y({N, N}, s.labels);
      Tensor per = mse_loss(y, scores);
      if (cfg.lambda != 0.0) per = add(per, scale(softmax_loss(y, scores, params.masked), cfg.lambda));
      batch_loss = add(batch_loss, per);
    }
    Tensor total = scale(batch_loss, 1.0 / static_cast<double>(B));
    if (cfg.l2_coeff != 0.0) total = add(total, scale(l2_penalty(tensors), cfg.l2_coeff));
    const double value = total.item();
    if (!std::isfinite(value)) {
      throw DivergenceError("training diverged at step " + std::to_string(step) + ": loss is " +
                            std::to_string(value));
    }
    backward(total);
    adam_step(tensors, adam);
    loss_acc += value;
    ++loss_count;

    if (step % cfg.eval_every == 0 || step == result.steps) {
      TrainLogRow row{step, loss_acc / static_cast<double>(loss_count), 0.0};
      loss_acc = 0.0;
      loss_count = 0;
      if (!val_subset.empty()) {
        row.val_ndcg1 = mean_ndcg1(params, val_subset, g, cfg.horizon_intervals);
        if (row.val_ndcg1 > result.best_val_ndcg1) {
          result.best_val_ndcg1 = row.val_ndcg1;
          result.best_step = step;
          result.best = params.clone();
        }
      }
      result.log.push_back(row);
    }
  }
  result.last = params.clone();
  if (val_subset.empty()) {
    result.best = result.last;
    result.best_step = result.steps;
    result.best_val_ndcg1 = 0.0;
  }
  return result;
}

}  // namespace opr
