#include <gtest/gtest.h>

#include <limits>
#include <sstream>

#include <opr/train.hpp>

#include "oracles.hpp"

namespace {

opr::OccupancyMatrix matrix_of(const std::vector<std::vector<std::uint8_t>>& rows) {
  std::vector<std::string> ids;
  std::vector<std::uint8_t> flat;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ids.push_back("m" + std::to_string(i));
    flat.insert(flat.end(), rows[i].begin(), rows[i].end());
  }
  return opr::OccupancyMatrix(std::move(ids), rows.front().size(), std::move(flat));
}

/// 0 - 1 - 2 path plus an isolated vertex 3.
opr::SpatialGraph path3_plus_one() {
  std::vector<opr::MeterLocation> v{{"m0", 0, 0}, {"m1", 0, 1}, {"m2", 0, 2}, {"m3", 0, 3}};
  return opr::SpatialGraph(v, {{0, 1}, {1, 2}});
}

opr::TrainConfig quick_config() {
  opr::TrainConfig c;
  c.model.channels = c.model.width = 4;
  c.model.beta = 2;
  c.batch_size = 8;
  c.steps = 20;
  c.eval_every = 10;
  return c;
}

struct SmallData {
  opr::OccupancyMatrix matrix;
  opr::SpatialGraph graph;
};

SmallData small_synth(std::size_t locations, std::size_t intervals, std::uint64_t seed = 3) {
  opr::SynthConfig sc;
  sc.num_locations = locations;
  sc.num_intervals = intervals;
  sc.rng_seed = seed;
  auto d = opr::synth_generate(sc);
  return {std::move(d.matrix), opr::build_adjacency(d.locations)};
}

}  // namespace

TEST(Labels, AllOccupiedRowIsZero) {
  const auto m = matrix_of({{1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1}, {1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0}});
  opr::TrainConfig c;
  const auto y = opr::make_labels(m, path3_plus_one(), 0, c);
  for (std::size_t d = 0; d < 3; ++d) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y[d * 4 + j], 0.0);
  }
}

TEST(Labels, NearerIsHigherAtEqualVacancy) {
  // At t' = 4 both 1 and 2 are vacant for the rest of the data; query 1 sees
  // itself at hop 0 and 2 at hop 1.
  const auto m = matrix_of({{1, 1, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0, 0}});
  opr::TrainConfig c;
  const auto y = opr::make_labels(m, path3_plus_one(), 0, c);
  EXPECT_GT(y[1 * 4 + 1], y[1 * 4 + 2]);
  EXPECT_EQ(y[1 * 4 + 0], 0.0);
  EXPECT_EQ(y[1 * 4 + 3], 0.0);
}

TEST(Labels, LongerIsHigherAtEqualDistance) {
  // Query 1; neighbours 0 and 2 vacant from t' = 4 for 6 and 2 intervals.
  std::vector<std::uint8_t> a(4, 1), b(4, 1);
  a.insert(a.end(), {0, 0, 0, 0, 0, 0, 1, 1});
  b.insert(b.end(), {0, 0, 1, 1, 1, 1, 1, 1});
  const auto m = matrix_of({a, std::vector<std::uint8_t>(12, 1), b, std::vector<std::uint8_t>(12, 1)});
  opr::TrainConfig c;
  EXPECT_EQ(opr::remaining_vacancy(m, 0, 4), 6u);
  EXPECT_EQ(opr::remaining_vacancy(m, 2, 4), 2u);
  const auto y = opr::make_labels(m, path3_plus_one(), 0, c);
  EXPECT_GT(y[1 * 4 + 0], y[1 * 4 + 2]);
}

TEST(Labels, RowsAreMinMaxScaled) {
  const auto d = small_synth(9, 60);
  opr::TrainConfig c;
  const auto y = opr::make_labels(d.matrix, d.graph, 10, c);
  const std::size_t N = 9;
  for (std::size_t q = 0; q < N; ++q) {
    const auto lo = *std::min_element(y.begin() + q * N, y.begin() + (q + 1) * N);
    const auto hi = *std::max_element(y.begin() + q * N, y.begin() + (q + 1) * N);
    EXPECT_EQ(lo, 0.0);
    EXPECT_TRUE(hi == 1.0 || hi == 0.0);
  }
}

TEST(Labels, HorizonBeyondDataIsError) {
  const auto m = matrix_of({{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 0}});
  opr::TrainConfig c;
  EXPECT_THROW(opr::make_labels(m, path3_plus_one(), 0, c), opr::DataError);
}

TEST(Dataset, SplitCounts) {
  opr::TrainConfig c;
  c.model.alpha = 2;
  c.horizon_intervals = 4;
  const auto d = small_synth(4, 100 + 2 + 4);
  EXPECT_EQ(opr::usable_range(d.matrix, c), (std::pair<std::size_t, std::size_t>{2, 102}));
  const auto s = opr::build_dataset(d.matrix, d.graph, c);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  // Chronological: every validation and test index follows all training indices.
  std::size_t last_train = 0;
  for (const auto& x : s.train) last_train = std::max(last_train, x.time_index);
  EXPECT_LT(last_train, s.val.front().time_index);
  EXPECT_LT(s.val.back().time_index, s.test.front().time_index);
}

TEST(Dataset, SameSeedSameShuffle) {
  opr::TrainConfig c;
  const auto d = small_synth(4, 200);
  const auto a = opr::build_dataset(d.matrix, d.graph, c), b = opr::build_dataset(d.matrix, d.graph, c);
  for (std::size_t i = 0; i < a.train.size(); ++i) ASSERT_EQ(a.train[i].time_index, b.train[i].time_index);
  c.rng_seed = 2;
  const auto other = opr::build_dataset(d.matrix, d.graph, c);
  bool differs = false;
  for (std::size_t i = 0; i < a.train.size(); ++i) differs |= a.train[i].time_index != other.train[i].time_index;
  EXPECT_TRUE(differs);
}

TEST(Dataset, InsufficientDataIsError) {
  opr::TrainConfig c;
  const auto d = small_synth(4, 12);
  EXPECT_THROW(opr::build_dataset(d.matrix, d.graph, c), opr::DataError);
}

TEST(Loss, PerfectScoresNoRegularization) {
  const opr::Tensor y({2, 2}, {0.3, 0.7, 1.0, 0.0});
  EXPECT_EQ(opr::loss(y, y, {}, 0.0, 0.0).item(), 0.0);
}

TEST(Loss, SoftmaxClosedForm) {
  const opr::Tensor y({1, 2}, {1.0, 0.0}), s({1, 2}, {10.0, -10.0});
  const double closed = std::log1p(std::exp(-20.0));
  EXPECT_NEAR(opr::softmax_loss(y, s).item(), closed, 1e-12);
  EXPECT_NEAR(closed, 2.06e-9, 1e-11);
}

TEST(Loss, MaskedEntriesDoNotEnterTheSoftmax) {
  const opr::Tensor y({1, 3}, {1.0, 0.0, 0.0}), s({1, 3}, {0.0, 0.0, 50.0});
  const std::vector<std::uint8_t> mask{0, 0, 1};
  EXPECT_NEAR(opr::softmax_loss(y, s, mask).item(), std::log(2.0), 1e-12);
}

TEST(Loss, L2Penalty) {
  std::vector<opr::Tensor> p{opr::Tensor({2}, {1.0, 2.0}), opr::Tensor({1}, {-3.0})};
  EXPECT_EQ(opr::l2_penalty(p).item(), 14.0);
  const opr::Tensor y({1, 1}, {0.5});
  EXPECT_NEAR(opr::loss(y, y, p, 0.0, 0.1).item(), 1.4, 1e-15);
}

TEST(TrainConfig, Validation) {
  auto c = quick_config();
  EXPECT_NO_THROW(c.validate());
  c.train_fraction = 0.9;
  EXPECT_THROW(c.validate(), opr::ConfigError);
  c = quick_config();
  c.lambda = -1;
  EXPECT_THROW(c.validate(), opr::ConfigError);
  c = quick_config();
  c.steps = 0;
  EXPECT_THROW(c.validate(), opr::ConfigError);
  c.epochs = 2;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(opr::resolve_steps(c, 17), 6u);
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = quick_config();
  c.lambda = 0.25;
  c.rng_seed = 99;
  const nlohmann::json j = c;
  const auto back = j.get<opr::TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(TrainLoop, ZeroLearningRateLeavesParametersUnchanged) {
  const auto d = small_synth(6, 80);
  auto c = quick_config();
  c.learning_rate = 0.0;
  const auto splits = opr::build_dataset(d.matrix, d.graph, c);
  const auto init = opr::ModelParams::init(c.model, d.graph, c.rng_seed);
  const auto r = opr::train_loop(splits, d.graph, c);
  EXPECT_EQ(r.last.snapshot(), init.snapshot());
}

TEST(TrainLoop, DeterministicAndLogged) {
  const auto d = small_synth(6, 80);
  const auto c = quick_config();
  const auto splits = opr::build_dataset(d.matrix, d.graph, c);
  const auto a = opr::train_loop(splits, d.graph, c), b = opr::train_loop(splits, d.graph, c);
  EXPECT_EQ(a.best.snapshot(), b.best.snapshot());
  EXPECT_EQ(a.last.snapshot(), b.last.snapshot());
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log[1].step, 20u);
  EXPECT_GE(a.best_val_ndcg1, 0.0);
  std::ostringstream os;
  opr::write_train_log(os, a.log);
  EXPECT_EQ(os.str().substr(0, 25), "step,train_loss,val_ndcg1");
}

TEST(TrainLoop, LossDecreases) {
  const auto d = small_synth(6, 200);
  auto c = quick_config();
  c.steps = 200;
  c.eval_every = 20;
  c.dropout_rate = 0.0;
  const auto splits = opr::build_dataset(d.matrix, d.graph, c);
  const auto r = opr::train_loop(splits, d.graph, c);
  EXPECT_LT(r.log.back().train_loss, r.log.front().train_loss);
}

TEST(TrainLoop, DivergenceIsReported) {
  const auto d = small_synth(6, 80);
  auto c = quick_config();
  auto splits = opr::build_dataset(d.matrix, d.graph, c);
  splits.train[3].labels[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(opr::train_loop(splits, d.graph, c), opr::DivergenceError);
}
