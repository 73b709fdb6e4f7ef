#include <gtest/gtest.h>

#include <sstream>

#include <opr/adam.hpp>
#include <opr/checkpoint.hpp>
#include <opr/grad_check.hpp>
#include <opr/tensor.hpp>

namespace {

opr::Tensor param(opr::Shape shape, opr::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(opr::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return opr::Tensor(std::move(shape), std::move(v), true);
}

std::vector<double> vec(const opr::Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST(Tensor, ShapeMismatchIsDimensionError) {
  EXPECT_THROW(opr::Tensor({2, 2}, {1, 2, 3}), opr::DimensionError);
  const auto a = opr::Tensor::zeros({2, 3}), b = opr::Tensor::zeros({2, 3});
  try {
    opr::matmul(a, b);
    FAIL();
  } catch (const opr::DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
  }
  EXPECT_THROW(opr::add(a, opr::Tensor::zeros({2})), opr::DimensionError);
  EXPECT_THROW(opr::concat({a, opr::Tensor::zeros({3, 2})}, 1), opr::DimensionError);
}

TEST(Backward, SumGivesOnes) {
  opr::Tensor x({4}, {1, -2, 3, 0.5}, true);
  opr::backward(opr::sum(x));
  EXPECT_EQ(vec(opr::Tensor({4}, {x.grad().begin(), x.grad().end()})), (std::vector<double>{1, 1, 1, 1}));
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  opr::Tensor x({3}, {1.5, -2, 0.25}, true);
  opr::backward(opr::sum(opr::mul(x, x)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * x[i]);
}

TEST(Backward, NonScalarLossIsError) {
  opr::Tensor x({2}, {1, 2}, true);
  EXPECT_THROW(opr::backward(x), opr::DimensionError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  opr::Tensor x({1}, {3.0}, true);
  const auto y = opr::mul(x, x);
  opr::backward(opr::sum(opr::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  opr::Tensor x({2}, {1, 2}, true);
  opr::Tensor y;
  {
    opr::NoGradGuard g;
    y = opr::sum(opr::mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
}

TEST(Ops, Conv1dValid) {
  const auto y = opr::conv1d(opr::Tensor({4}, {1, 2, 3, 4}), opr::Tensor({2}, {1, 1}));
  EXPECT_EQ(vec(y), (std::vector<double>{3, 5, 7}));
  EXPECT_THROW(opr::conv1d(opr::Tensor({2}, {1, 2}), opr::Tensor({3}, {1, 1, 1})), opr::DimensionError);
}

TEST(Ops, Conv1dMatchesLoopReference) {
  opr::Rng rng(4);
  const auto x = param({5, 7}, rng), w = param({3, 3}, rng), b = param({3}, rng);
  const auto y = opr::conv1d(x, w, b);
  ASSERT_EQ(y.shape(), (opr::Shape{5, 3, 5}));
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 5; ++p) {
        double s = b[c];
        for (std::size_t k = 0; k < 3; ++k) s += w[c * 3 + k] * x[i * 7 + p + k];
        EXPECT_NEAR(y[(i * 3 + c) * 5 + p], s, 1e-14);
      }
    }
  }
}

TEST(Ops, SoftmaxRowsSumToOneAndLogSoftmaxAgrees) {
  opr::Rng rng(8);
  const auto x = param({4, 6}, rng, -30, 30);
  const auto s = opr::softmax(x, 1), ls = opr::log_softmax(x, 1);
  for (std::size_t r = 0; r < 4; ++r) {
    double acc = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      acc += s.at(r, c);
      EXPECT_NEAR(std::log(s.at(r, c) + 1e-300), ls.at(r, c), 1e-9 * std::max(1.0, std::abs(ls.at(r, c))));
    }
    EXPECT_NEAR(acc, 1.0, 1e-12);
  }
}

TEST(Ops, MaskedFillBlocksGradient) {
  opr::Tensor x({3}, {1, 2, 3}, true);
  const std::vector<std::uint8_t> mask{0, 1, 0};
  const auto y = opr::masked_fill(x, mask, -5.0);
  EXPECT_EQ(vec(y), (std::vector<double>{1, -5, 3}));
  opr::backward(opr::sum(opr::mul(y, y)));
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[0], 2.0);
}

TEST(Ops, PairwiseAdd) {
  const opr::Tensor a({2, 2}, {1, 2, 3, 4}), b({3, 2}, {10, 20, 30, 40, 50, 60});
  const auto y = opr::pairwise_add(a, b);
  ASSERT_EQ(y.shape(), (opr::Shape{2, 3, 2}));
  EXPECT_EQ(y[(1 * 3 + 2) * 2 + 1], 4 + 60);
}

TEST(Ops, DropoutIdentityAtZeroAndScaledOtherwise) {
  opr::Rng rng(1);
  const opr::Tensor x = opr::Tensor::full({1000}, 1.0);
  EXPECT_EQ(vec(opr::dropout(x, 0.0, rng)), vec(x));
  const auto y = opr::dropout(x, 0.5, rng);
  for (double v : y.values()) EXPECT_TRUE(v == 0.0 || v == 2.0);
  EXPECT_THROW(opr::dropout(x, 1.0, rng), opr::ConfigError);
}

TEST(GradCheck, QuadraticIsExact) {
  opr::Rng rng(2);
  std::vector<opr::Tensor> p{param({3}, rng)};
  const opr::Tensor c({3}, {0.5, -1.0, 2.0});
  const double err = opr::grad_check(
      [&] {
        const auto d = opr::sub(p[0], c);
        return opr::sum(opr::mul(d, d));
      },
      p);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, ReluAwayFromZero) {
  std::vector<opr::Tensor> p{opr::Tensor({4}, {0.7, -0.3, 1.9, -2.2}, true)};
  EXPECT_LT(opr::grad_check([&] { return opr::sum(opr::relu(p[0])); }, p), 1e-6);
}

TEST(GradCheck, EveryOpAgreesWithFiniteDifferences) {
  opr::Rng rng(21);
  std::vector<opr::Tensor> p{param({3, 4}, rng), param({4, 5}, rng), param({2, 2}, rng), param({5}, rng)};
  const std::vector<std::uint8_t> mask{0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  auto f = [&] {
    auto h = opr::matmul(p[0], p[1]);                               // [3,5]
    h = opr::add(h, p[3]);
    auto conv = opr::conv1d(opr::tanh(h), p[2], opr::Tensor({2}, {0.1, -0.2}));  // [3,2,4]
    auto pooled = opr::mean(opr::sigmoid(conv), 2);                 // [3,2]
    auto pair = opr::sum(opr::relu(opr::pairwise_add(pooled, opr::transpose(opr::reshape(p[2], {2, 2})))), 2);
    auto logits = opr::masked_fill(opr::concat({h, opr::scale(pair, 0.5)}, 1), std::vector<std::uint8_t>(21, 0), 0);
    auto ls = opr::log_softmax(opr::masked_fill(h, mask, -1e30), 1);
    return opr::add(opr::mean(opr::exp(opr::scale(logits, 0.1))),
                    opr::add(opr::scale(opr::sum(opr::mul(opr::masked_fill(ls, mask, 0.0), opr::softmax(h, 1))), -1.0),
                             opr::mean(opr::log(opr::add(opr::mul(pooled, pooled), opr::Tensor::scalar(1.0))))));
  };
  EXPECT_LT(opr::grad_check(f, p), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  opr::Tensor x({3}, {1, 2, 3}, true);
  x.mutable_grad();
  std::vector<opr::Tensor> ps{x};
  opr::AdamState st;
  for (int k = 0; k < 10; ++k) opr::adam_step(ps, st);
  EXPECT_EQ(vec(x), (std::vector<double>{1, 2, 3}));
}

TEST(Adam, ConvergesOnConvexQuadratic) {
  opr::Tensor x({1}, {5.0}, true);
  std::vector<opr::Tensor> ps{x};
  opr::AdamState st;
  st.learning_rate = 0.05;
  const opr::Tensor target({1}, {-1.25});
  for (int k = 0; k < 500; ++k) {
    const auto d = opr::sub(x, target);
    opr::backward(opr::sum(opr::mul(d, d)));
    opr::adam_step(ps, st);
  }
  EXPECT_LT(std::abs(x[0] + 1.25), 1e-3);
  EXPECT_EQ(st.step_count, 500);
}

TEST(Checkpoint, RoundTripIsExact) {
  const std::vector<opr::NamedTensor> in{{"a", {2, 2}, {1.0, -0.0, 1e-300, 3.141592653589793}},
                                         {"scalar", {}, {42.0}},
                                         {"empty.rows", {0, 3}, {}}};
  std::stringstream ss;
  opr::write_checkpoint(ss, in);
  EXPECT_EQ(ss.str().substr(0, 7), "OPRLTR1");
  EXPECT_EQ(opr::read_checkpoint(ss), in);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::stringstream bad("NOTACKPT");
  EXPECT_THROW(opr::read_checkpoint(bad), opr::DataError);
  std::stringstream ss;
  opr::write_checkpoint(ss, {{"a", {3}, {1, 2, 3}}});
  std::string s = ss.str();
  std::stringstream truncated(s.substr(0, s.size() - 4));
  EXPECT_THROW(opr::read_checkpoint(truncated), opr::DataError);
}
