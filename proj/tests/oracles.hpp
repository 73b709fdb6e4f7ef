// Independent reference implementations shared by the unit and acceptance
// tests. Plain loops over std::vector; nothing here goes through the tensor
// engine or the library's own helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <utility>
#include <vector>

#include <opr/opr.hpp>

namespace oracle {

/// (value, run length) pairs.
inline std::vector<std::pair<int, std::size_t>> rle(const std::vector<std::uint8_t>& s) {
  std::vector<std::pair<int, std::size_t>> out;
  for (std::uint8_t v : s) {
    if (!out.empty() && out.back().first == v) {
      ++out.back().second;
    } else {
      out.emplace_back(v, 1);
    }
  }
  return out;
}

inline std::size_t count_runs(const std::vector<std::uint8_t>& s) {
  std::size_t runs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) runs += (i == 0 || s[i] != s[i - 1]) ? 1 : 0;
  return runs;
}

/// Dense (A + I) with D^-1/2 scaling, built from an explicit adjacency matrix.
inline std::vector<double> dense_normalized(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (auto [i, j] : edges) a[i * n + j] = a[j * n + i] = 1.0;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= std::sqrt(deg[i]) * std::sqrt(deg[j]);
  }
  return a;
}

/// Row-major [r x k] * [k x c].
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t r,
                                  std::size_t k, std::size_t c) {
  std::vector<double> out(r * c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * c + j];
      out[i * c + j] = s;
    }
  }
  return out;
}

/// Brute-force DCG with linear gains over the first n ranked items.
inline double dcg(const std::vector<std::size_t>& ranking, const std::vector<double>& labels, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(n, ranking.size()); ++i) {
    s += labels[ranking[i]] / std::log2(static_cast<double>(i) + 2.0);
  }
  return s;
}

/// NDCG@n with the ideal DCG taken as the maximum over every permutation of
/// the candidates (keep candidate sets small).
inline double ndcg(const std::vector<std::size_t>& ranking, const std::vector<double>& labels, std::size_t n) {
  std::vector<std::size_t> perm = ranking;
  std::sort(perm.begin(), perm.end());
  double idcg = 0.0;
  do {
    idcg = std::max(idcg, dcg(perm, labels, n));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return idcg == 0.0 ? 1.0 : dcg(ranking, labels, n) / idcg;
}

/// Average precision over the top n; relevant means label > 0; normalized
/// by min(n, number of relevant candidates).
inline double map(const std::vector<std::size_t>& ranking, const std::vector<double>& labels, std::size_t n) {
  std::size_t relevant = 0;
  for (std::size_t id : ranking) relevant += labels[id] > 0 ? 1 : 0;
  if (relevant == 0) return 0.0;
  double acc = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(n, ranking.size()); ++i) {
    if (labels[ranking[i]] > 0) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  return acc / static_cast<double>(std::min(n, relevant));
}

/// Loop-based forward pass of the full scorer using the raw parameter values.
inline std::vector<double> forward(const opr::ModelParams& p, const opr::EventWindow& w,
                                   const opr::SpatialGraph& g) {
  const auto& cfg = p.config;
  const std::size_t N = w.num_locations, A = w.alpha, m = cfg.channels, d = cfg.width, K = cfg.kernel_len;
  auto val = [](const opr::Tensor& t, std::size_t i) { return t.values()[i]; };

  std::vector<double> gated(N * A);
  for (std::size_t i = 0; i < N * A; ++i) gated[i] = std::tanh(w.signed_durations[i]);

  // Event aggregation.
  std::vector<double> H(N * m, 0.0);
  const std::size_t P = A - K + 1;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t c = 0; c < m; ++c) {
      double acc = 0.0;
      for (std::size_t pos = 0; pos < P; ++pos) {
        double s = val(p.conv_bias, c);
        for (std::size_t k = 0; k < K; ++k) s += val(p.conv_weight, c * K + k) * gated[i * A + pos + k];
        acc += std::max(0.0, s);
      }
      H[i * m + c] = acc / static_cast<double>(P);
    }
  }

  // Graph convolution.
  std::vector<double> rt(N * 2);
  for (std::size_t i = 0; i < N; ++i) {
    const double c = w.current_signed_duration[i];
    rt[i * 2] = c < 0 ? -1.0 : 1.0;
    rt[i * 2 + 1] = std::tanh(c / cfg.duration_scale);
  }
  const auto adj = dense_normalized(N, g.edges());
  std::vector<double> W0(p.input_weight.values().begin(), p.input_weight.values().end());
  std::vector<double> z = matmul(rt, W0, N, 2, d);
  for (std::size_t k = 0; k < cfg.beta; ++k) {
    std::vector<double> Mk(p.mix_weight[k].values().begin(), p.mix_weight[k].values().end());
    const auto gk = matmul(matmul(adj, z, N, N, d), Mk, N, d, d);
    std::vector<double> cat(N * (d + m));
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < d; ++j) cat[i * (d + m) + j] = gk[i * d + j];
      for (std::size_t j = 0; j < m; ++j) cat[i * (d + m) + d + j] = H[i * m + j];
    }
    std::vector<double> Wk(p.update_weight[k].values().begin(), p.update_weight[k].values().end());
    z = matmul(cat, Wk, N, d + m, d);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t j = 0; j < d; ++j) z[i * d + j] = std::max(0.0, z[i * d + j] + val(p.update_bias[k], j));
    }
  }

  // Readout.
  std::vector<double> scores(N * N, 0.0);
  std::vector<char> allowed(N * N, 0);
  for (std::size_t q = 0; q < N; ++q) {
    allowed[q * N + q] = 1;
    for (std::size_t j : g.neighbors(q)) allowed[q * N + j] = 1;
  }
  for (std::size_t q = 0; q < N; ++q) {
    std::vector<double> Q(A + 1);
    for (std::size_t k = 0; k < A; ++k) Q[k] = gated[q * A + k];
    Q[A] = rt[q * 2];
    for (std::size_t j = 0; j < N; ++j) {
      if (!allowed[q * N + j]) continue;
      double f = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double s = val(p.readout_bias, c);
        for (std::size_t k = 0; k <= A; ++k) s += Q[k] * val(p.query_weight, k * d + c);
        for (std::size_t k = 0; k < d; ++k) s += z[j * d + k] * val(p.item_weight, k * d + c);
        f += std::max(0.0, s);
      }
      scores[q * N + j] = f * val(p.mask_weight, q * N + j);
    }
  }
  if (cfg.activation == opr::ListActivation::relu) {
    for (auto& s : scores) s = std::max(0.0, s);
    return scores;
  }
  for (std::size_t q = 0; q < N; ++q) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < N; ++j) {
      if (allowed[q * N + j]) mx = std::max(mx, scores[q * N + j]);
    }
    double z_sum = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      if (allowed[q * N + j]) z_sum += std::exp(scores[q * N + j] - mx);
    }
    for (std::size_t j = 0; j < N; ++j) {
      scores[q * N + j] = allowed[q * N + j] ? std::exp(scores[q * N + j] - mx) / z_sum : 0.0;
    }
  }
  return scores;
}

/// Random undirected graph on n vertices with edge probability p, laid out
/// on a line so it can be wrapped in a SpatialGraph.
inline opr::SpatialGraph random_graph(std::size_t n, double p, opr::Rng& rng) {
  std::vector<opr::MeterLocation> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({"v" + std::to_string(i), 0.0, static_cast<double>(i) * 0.01});
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rng.uniform() < p) e.emplace_back(i, j);
    }
  }
  return opr::SpatialGraph(std::move(v), std::move(e));
}

inline opr::OccupancyMatrix random_matrix(std::size_t n, std::size_t T, double flip, opr::Rng& rng) {
  std::vector<std::string> ids;
  std::vector<std::uint8_t> s(n * T);
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("m" + std::to_string(i));
    std::uint8_t cur = rng.uniform() < 0.5;
    for (std::size_t t = 0; t < T; ++t) {
      if (rng.uniform() < flip) cur = !cur;
      s[i * T + t] = cur;
    }
  }
  return opr::OccupancyMatrix(std::move(ids), T, std::move(s));
}

/// Random window with durations in [1, max_dur] and alternating states,
/// padded at the front for some locations.
inline opr::EventWindow random_window(std::size_t n, std::size_t alpha, opr::Rng& rng, std::size_t max_dur = 8) {
  opr::EventWindow w;
  w.num_locations = n;
  w.alpha = alpha;
  w.signed_durations.assign(n * alpha, 0.0);
  w.current_signed_duration.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t events = rng.below(alpha + 1);
    bool occ = rng.uniform() < 0.5;
    w.current_signed_duration[i] = opr::state_sign(occ) * static_cast<double>(1 + rng.below(max_dur));
    for (std::size_t k = 0; k < events; ++k) {
      occ = !occ;
      w.signed_durations[i * alpha + alpha - 1 - k] = opr::state_sign(occ) * static_cast<double>(1 + rng.below(max_dur));
    }
  }
  return w;
}

}  // namespace oracle
