#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "error.hpp"
#include "esgraph.hpp"
#include "ingest.hpp"
#include "random.hpp"
#include "tensor.hpp"

#include <json.hpp>

namespace opr {

/// Row-wise readout activation applied to the masked score matrix.
enum class ListActivation { relu, softmax };

inline std::string to_string(ListActivation a) { return a == ListActivation::relu ? "relu" : "softmax"; }

inline ListActivation parse_list_activation(const std::string& s) {
  if (s == "relu") return ListActivation::relu;
  if (s == "softmax") return ListActivation::softmax;
  throw ConfigError("unknown list activation '" + s + "' (expected relu or softmax)");
}

/// Real-time feature width: state sign and squashed ongoing-run length.
inline constexpr std::size_t kRealTimeWidth = 2;

/// Logit used for structurally masked candidates; exp() of it underflows to 0.
inline constexpr double kMaskedLogit = -1e30;

struct ModelConfig {
  std::size_t alpha = 2;       // events per window
  std::size_t beta = 3;        // graph-convolution rounds
  std::size_t channels = 16;   // conv output channels (m)
  std::size_t width = 16;      // embedding width (d)
  std::size_t kernel_len = 2;
  ListActivation activation = ListActivation::relu;
  /// The ongoing run length is divided by this before tanh.
  double duration_scale = 12.0;

  void validate() const {
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (beta < 1) throw ConfigError("beta must be >= 1");
    if (channels < 1 || width < 1) throw ConfigError("channels and width must be >= 1");
    if (kernel_len < 1) throw ConfigError("kernel_len must be >= 1");
    if (alpha < kernel_len) {
      throw ConfigError("alpha (" + std::to_string(alpha) + ") is shorter than kernel_len (" +
                        std::to_string(kernel_len) + ")");
    }
    if (!(duration_scale > 0)) throw ConfigError("duration_scale must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"alpha", c.alpha},           {"beta", c.beta},
                     {"channels", c.channels},     {"width", c.width},
                     {"kernel_len", c.kernel_len}, {"activation", to_string(c.activation)},
                     {"duration_scale", c.duration_scale},
                     {"sign_convention", "vacant=+1,occupied=-1"}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.alpha = j.at("alpha").get<std::size_t>();
  c.beta = j.at("beta").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.width = j.at("width").get<std::size_t>();
  c.kernel_len = j.at("kernel_len").get<std::size_t>();
  c.activation = parse_list_activation(j.at("activation").get<std::string>());
  c.duration_scale = j.at("duration_scale").get<double>();
  if (j.value("sign_convention", std::string("vacant=+1,occupied=-1")) != "vacant=+1,occupied=-1") {
    throw ConfigError("unsupported sign convention in manifest");
  }
}

/// All learnable weights. Tensors are shared handles: copies of a
/// ModelParams alias the same storage, use clone() for a snapshot.
struct ModelParams {
  ModelConfig config;
  std::size_t num_vertices = 0;

  Tensor conv_weight;  // [m, K]
  Tensor conv_bias;    // [m]
  Tensor input_weight;                // [a, d]
  std::vector<Tensor> mix_weight;     // beta x [d, d]
  std::vector<Tensor> update_weight;  // beta x [d + m, d]
  std::vector<Tensor> update_bias;    // beta x [d]
  Tensor query_weight;   // [alpha + 1, d]
  Tensor item_weight;    // [d, d]
  Tensor readout_bias;   // [d]
  Tensor mask_weight;    // [N, N], zero outside each query's neighborhood

  /// 1 where (query, candidate) lies outside candidate set N_d + {d}.
  std::vector<std::uint8_t> masked;

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out{conv_weight, conv_bias, input_weight};
    for (std::size_t k = 0; k < config.beta; ++k) {
      out.push_back(mix_weight[k]);
      out.push_back(update_weight[k]);
      out.push_back(update_bias[k]);
    }
    out.insert(out.end(), {query_weight, item_weight, readout_bias, mask_weight});
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out{"conv.weight", "conv.bias", "gcn.input_weight"};
    for (std::size_t k = 0; k < config.beta; ++k) {
      const std::string p = "gcn." + std::to_string(k + 1) + ".";
      out.push_back(p + "mix");
      out.push_back(p + "weight");
      out.push_back(p + "bias");
    }
    out.insert(out.end(), {"readout.query_weight", "readout.item_weight", "readout.bias", "readout.mask"});
    return out;
  }

  /// Number of learnable scalars (mask entries counted only where allowed).
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.numel();
    n -= static_cast<std::size_t>(std::count(masked.begin(), masked.end(), 1));
    return n;
  }

  std::vector<NamedTensor> snapshot() const {
    std::vector<NamedTensor> out;
    const auto ts = tensors();
    const auto ns = names();
    for (std::size_t i = 0; i < ts.size(); ++i) {
      out.push_back({ns[i], ts[i].shape(), {ts[i].values().begin(), ts[i].values().end()}});
    }
    return out;
  }

  /// Overwrites values from a checkpoint; names and shapes must match.
  void restore(const std::vector<NamedTensor>& entries) {
    auto ts = tensors();
    const auto ns = names();
    if (entries.size() != ts.size()) {
      throw DataError("checkpoint has " + std::to_string(entries.size()) + " tensors, model expects " +
                      std::to_string(ts.size()));
    }
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (entries[i].name != ns[i] || entries[i].shape != ts[i].shape()) {
        throw DataError("checkpoint entry '" + entries[i].name + "' " + shape_str(entries[i].shape) +
                        " does not match '" + ns[i] + "' " + shape_str(ts[i].shape()));
      }
      std::copy(entries[i].values.begin(), entries[i].values.end(), ts[i].mutable_values().begin());
    }
  }

  ModelParams clone() const {
    ModelParams c = *this;
    auto copy = [](const Tensor& t) { return Tensor(t.shape(), {t.values().begin(), t.values().end()}, true); };
    c.conv_weight = copy(conv_weight);
    c.conv_bias = copy(conv_bias);
    c.input_weight = copy(input_weight);
    for (std::size_t k = 0; k < config.beta; ++k) {
      c.mix_weight[k] = copy(mix_weight[k]);
      c.update_weight[k] = copy(update_weight[k]);
      c.update_bias[k] = copy(update_bias[k]);
    }
    c.query_weight = copy(query_weight);
    c.item_weight = copy(item_weight);
    c.readout_bias = copy(readout_bias);
    c.mask_weight = copy(mask_weight);
    return c;
  }

  /// Glorot-uniform weights, zero biases, unit mask weights on allowed entries.
  static ModelParams init(const ModelConfig& cfg, const SpatialGraph& graph, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    const std::size_t N = graph.num_vertices();
    p.num_vertices = N;
    Rng rng(seed);
    auto glorot = [&rng](std::size_t rows, std::size_t cols) {
      const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::vector<double> v(rows * cols);
      for (auto& x : v) x = rng.uniform(-limit, limit);
      return Tensor({rows, cols}, std::move(v), true);
    };
    const std::size_t m = cfg.channels, d = cfg.width;
    p.conv_weight = glorot(m, cfg.kernel_len);
    p.conv_bias = Tensor::zeros({m}, true);
    p.input_weight = glorot(kRealTimeWidth, d);
    for (std::size_t k = 0; k < cfg.beta; ++k) {
      p.mix_weight.push_back(glorot(d, d));
      p.update_weight.push_back(glorot(d + m, d));
      p.update_bias.push_back(Tensor::zeros({d}, true));
    }
    p.query_weight = glorot(cfg.alpha + 1, d);
    p.item_weight = glorot(d, d);
    p.readout_bias = Tensor::zeros({d}, true);
    p.masked.assign(N * N, 1);
    std::vector<double> ms(N * N, 0.0);
    for (std::size_t q = 0; q < N; ++q) {
      for (std::size_t c : graph.candidates(q)) {
        p.masked[q * N + c] = 0;
        ms[q * N + c] = 1.0;
      }
    }
    p.mask_weight = Tensor({N, N}, std::move(ms), true);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Inputs

/// Dense D^-1/2 (A + I) D^-1/2 with degrees counted including the self loop.
inline std::vector<double> normalized_adjacency(const SpatialGraph& g) {
  const std::size_t N = g.num_vertices();
  std::vector<double> inv_sqrt(N);
  for (std::size_t i = 0; i < N; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.neighbors(i).size() + 1));
  }
  std::vector<double> a(N * N, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    a[i * N + i] = inv_sqrt[i] * inv_sqrt[i];
    for (std::size_t j : g.neighbors(i)) a[i * N + j] = inv_sqrt[i] * inv_sqrt[j];
  }
  return a;
}

/// Event gate: each entry is duration * sign(state), vacant = +1 and
/// occupied = -1, squashed with tanh. The window already stores the signed
/// product, so the gate halves the (state, duration) input to one channel.
/// Padding entries stay 0.
inline Tensor glu_gate(const EventWindow& w) {
  std::vector<double> v(w.signed_durations.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(w.signed_durations[i]);
  return Tensor({w.num_locations, w.alpha}, std::move(v));
}

/// [N, 2]: state sign and tanh(signed ongoing run / duration_scale).
inline Tensor realtime_features(const EventWindow& w, double duration_scale) {
  std::vector<double> v(w.num_locations * kRealTimeWidth);
  for (std::size_t i = 0; i < w.num_locations; ++i) {
    const double c = w.current_signed_duration[i];
    v[i * 2] = c < 0 ? -1.0 : 1.0;
    v[i * 2 + 1] = std::tanh(c / duration_scale);
  }
  return Tensor({w.num_locations, kRealTimeWidth}, std::move(v));
}

/// [N, 1] real-time state sign.
inline Tensor query_state(const EventWindow& w) {
  std::vector<double> v(w.num_locations);
  for (std::size_t i = 0; i < w.num_locations; ++i) v[i] = w.current_signed_duration[i] < 0 ? -1.0 : 1.0;
  return Tensor({w.num_locations, 1}, std::move(v));
}

struct ModelInputs {
  Tensor gated;       // [N, alpha]
  Tensor realtime;    // [N, 2]
  Tensor state;       // [N, 1]
  Tensor adjacency;   // [N, N] normalized
};

inline ModelInputs make_inputs(const EventWindow& w, const Tensor& adjacency, const ModelConfig& cfg) {
  if (w.alpha != cfg.alpha) {
    throw ConfigError("window alpha " + std::to_string(w.alpha) + " differs from model alpha " +
                      std::to_string(cfg.alpha));
  }
  return {glu_gate(w), realtime_features(w, cfg.duration_scale), query_state(w), adjacency};
}

/// Training-time behaviour: dropout on hidden activations when rate > 0.
struct ForwardContext {
  double dropout = 0.0;
  Rng* rng = nullptr;

  Tensor apply_dropout(const Tensor& x) const {
    return dropout > 0.0 && rng ? opr::dropout(x, dropout, *rng) : x;
  }
};

// ---------------------------------------------------------------------------
// Layers

/// Per-location conv over the event axis, bias, ReLU, mean over positions.
inline Tensor event_aggregate(const Tensor& gated, const ModelParams& p, const ForwardContext& ctx = {}) {
  if (gated.rank() != 2 || gated.dim(1) < p.config.kernel_len) {
    throw ConfigError("event_aggregate: window of length " +
                      std::to_string(gated.rank() == 2 ? gated.dim(1) : 0) +
                      " is shorter than kernel_len " + std::to_string(p.config.kernel_len));
  }
  Tensor h = mean(relu(conv1d(gated, p.conv_weight, p.conv_bias)), 2);
  return ctx.apply_dropout(h);
}

/// z0 = realtime W0; z_k = ReLU([A_hat z_{k-1} M_k, H] W_k + b_k); returns z_beta.
inline Tensor gcn_update(const Tensor& H, const Tensor& realtime, const Tensor& adjacency,
                         const ModelParams& p, const ForwardContext& ctx = {}) {
  Tensor z = matmul(realtime, p.input_weight);
  for (std::size_t k = 0; k < p.config.beta; ++k) {
    Tensor g = matmul(matmul(adjacency, z), p.mix_weight[k]);
    z = relu(add(matmul(concat({g, H}, 1), p.update_weight[k]), p.update_bias[k]));
    z = ctx.apply_dropout(z);
  }
  return z;
}

/// Query-item scores: f[d, j] = sum over width of ReLU(Q_d W1 + z_j W2 + b1),
/// with Q_d = [gated events of d, state of d]; then the list activation of
/// f (.) M_s row by row.
inline Tensor score_queries(const Tensor& gated, const Tensor& state, const Tensor& Z, const ModelParams& p) {
  Tensor q = concat({gated, state}, 1);
  Tensor pair = pairwise_add(matmul(q, p.query_weight), matmul(Z, p.item_weight));
  Tensor f = sum(relu(add(pair, p.readout_bias)), 2);
  Tensor weighted = mul(f, masked_fill(p.mask_weight, p.masked, 0.0));
  if (p.config.activation == ListActivation::relu) return relu(weighted);
  return softmax(masked_fill(weighted, p.masked, kMaskedLogit), 1);
}

/// Full event-then-graph forward pass: [N, N] score matrix, row = query.
inline Tensor forward(const ModelParams& p, const ModelInputs& in, const ForwardContext& ctx = {}) {
  Tensor h = event_aggregate(in.gated, p, ctx);
  Tensor z = gcn_update(h, in.realtime, in.adjacency, p, ctx);
  return score_queries(in.gated, in.state, z, p);
}

// ---------------------------------------------------------------------------
// Ranking

inline constexpr std::size_t kUnreachable = std::numeric_limits<std::size_t>::max();

/// BFS hop counts from d; kUnreachable for other components.
inline std::vector<std::size_t> hop_distances(const SpatialGraph& g, std::size_t d) {
  std::vector<std::size_t> hops(g.num_vertices(), kUnreachable);
  std::queue<std::size_t> q;
  hops[d] = 0;
  q.push(d);
  while (!q.empty()) {
    const std::size_t v = q.front();
    q.pop();
    for (std::size_t u : g.neighbors(v)) {
      if (hops[u] == kUnreachable) {
        hops[u] = hops[v] + 1;
        q.push(u);
      }
    }
  }
  return hops;
}

/// Orders `ids` by score descending, then hop distance, then id.
inline void rank_ids(std::vector<std::size_t>& ids, std::span<const double> scores,
                     std::span<const std::size_t> hops) {
  std::sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (hops[a] != hops[b]) return hops[a] < hops[b];
    return a < b;
  });
}

/// Top-n vertices of one score row; n larger than the row is truncated.
inline std::vector<std::size_t> recommend_top_n(std::span<const double> row, std::size_t n,
                                                std::span<const std::size_t> hops) {
  if (n < 1) throw ConfigError("recommend_top_n: n must be >= 1");
  if (hops.size() != row.size()) throw DimensionError("recommend_top_n: hops and scores differ in length");
  std::vector<std::size_t> ids(row.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  rank_ids(ids, row, hops);
  ids.resize(std::min(n, ids.size()));
  return ids;
}

}  // namespace opr
