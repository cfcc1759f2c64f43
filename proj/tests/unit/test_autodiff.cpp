#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "helpers.hpp"
#include "p2p/autodiff.hpp"

using namespace p2p;
using ad::Tensor;
using p2p::testing::random_tensor;

namespace {

double check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) { return ad::grad_check(f, x); }

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
  auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
}

TEST(Ops, SoftmaxOfEqualLogitsIsUniform) {
  auto s = ad::softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, ScatterAddSumsCollisions) {
  auto a = Tensor::from({2, 1}, {5.0, 7.0});
  auto out = ad::scatter_add_rows(a, {1, 1}, 3);
  EXPECT_EQ(out.at(0), 0.0);
  EXPECT_EQ(out.at(1), 12.0);
  EXPECT_EQ(out.at(2), 0.0);
}

TEST(Ops, IdentityMatmul) {
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = random_tensor({3, 5}, 1);
  auto y = ad::matmul(eye, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y.at(i), x.at(i));
}

TEST(Ops, MatmulAgainstTripleLoop) {
  auto a = random_tensor({7, 5}, 2), b = random_tensor({5, 4}, 3);
  auto c = ad::matmul(a, b);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 5; ++k) s += a.at(i * 5 + k) * b.at(k * 4 + j);
      EXPECT_NEAR(c.at(i * 4 + j), s, 1e-13);
    }
}

TEST(Ops, ShapeMismatchIsDescriptive) {
  auto a = random_tensor({2, 3}, 1), b = random_tensor({4, 3}, 2);
  EXPECT_THROW(ad::matmul(a, b), ShapeError);
  EXPECT_THROW(ad::add(a, random_tensor({2}, 3)), ShapeError);
  try {
    ad::matmul(a, b);
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Ops, LogOfNonPositiveIsDomainError) {
  EXPECT_THROW(ad::log(Tensor::from({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(ad::log(Tensor::from({1}, {-2.0})), DomainError);
}

TEST(Ops, BroadcastLeadingAndScalar) {
  auto a = random_tensor({4, 3}, 5);
  auto row = Tensor::from({3}, {1, 2, 3});
  auto s = ad::add(a, row);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(s.at(i * 3 + j), a.at(i * 3 + j) + row.at(j));
  auto m = ad::mul(a, Tensor::scalar(2.0));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(m.at(i), 2.0 * a.at(i));
}

TEST(Backward, SumOfSquares) {
  auto x = Tensor::from({2}, {1.0, 2.0}, true);
  ad::backward(ad::sum(ad::square(x)));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, MaxRoutesToLowestTiedIndex) {
  auto x = Tensor::from({3}, {1.0, 3.0, 2.0}, true);
  ad::backward(ad::max(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));

  auto y = Tensor::from({4}, {3.0, 1.0, 3.0, 3.0}, true);
  ad::backward(ad::max(y));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{1, 0, 0, 0}));
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = random_tensor({3}, 1, -1, 1, true);
  EXPECT_THROW(ad::backward(ad::scale(x, 2.0)), ContractError);
}

TEST(Backward, FrozenLeafGetsNoGradButPassesItThrough) {
  auto x = random_tensor({2, 3}, 1, -1, 1, true);
  auto w = random_tensor({3, 2}, 2, -1, 1, false);
  auto v = random_tensor({2, 1}, 3, -1, 1, true);
  ad::backward(ad::sum(ad::matmul(ad::matmul(x, w), v)));
  EXPECT_FALSE(w.has_grad());
  EXPECT_TRUE(x.has_grad());
  EXPECT_TRUE(v.has_grad());
}

TEST(Backward, FreezingMidGraphLeavesUpstreamGradsBitIdentical) {
  auto run = [](bool mid_trainable) {
    auto x = random_tensor({3, 4}, 11, -1, 1, true);
    auto w = random_tensor({4, 4}, 12, -1, 1, mid_trainable);
    auto y = ad::sum(ad::gelu(ad::matmul(ad::relu(x), w)));
    ad::backward(y);
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(run(true), run(false));
}

TEST(Backward, LinearInTheLossScale) {
  auto grads = [](double a) {
    auto x = random_tensor({5}, 21, -1, 1, true);
    ad::backward(ad::scale(ad::sum(ad::exp(ad::sin(x))), a));
    return std::vector<double>(x.grad().begin(), x.grad().end());
  };
  const auto g1 = grads(1.0), g3 = grads(3.0);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g3[i], 3.0 * g1[i], 1e-14 * std::abs(g3[i]) + 1e-300);
}

TEST(Backward, GradsAccumulateAcrossCalls) {
  auto x = Tensor::from({2}, {1.0, -1.0}, true);
  ad::backward(ad::sum(x));
  ad::backward(ad::sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Backward, ReusedNodeSumsBothPaths) {
  auto x = Tensor::from({1}, {3.0}, true);
  auto y = ad::mul(x, x);  // dy/dx = 2x
  ad::backward(ad::add(y, x));
  EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = random_tensor({3}, 1, -1, 1, true);
  ad::NoGradGuard guard;
  auto y = ad::sum(ad::square(x));
  EXPECT_FALSE(y.needs_grad());
  ad::backward(y);
  EXPECT_FALSE(x.has_grad());
}

TEST(Tape, ParentsPrecedeChildren) {
  auto x = random_tensor({2, 2}, 1, -1, 1, true);
  auto a = ad::exp(x);
  auto b = ad::matmul(a, x);
  auto loss = ad::sum(ad::add(b, a));
  auto tape = ad::Tape::record(loss);
  auto nodes = tape.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const auto& p : nodes[i]->parents) {
      auto it = std::find(nodes.begin(), nodes.end(), p.get());
      if (it != nodes.end()) {
        EXPECT_LT(static_cast<std::size_t>(it - nodes.begin()), i);
      }
    }
}

TEST(GradCheck, SinIsTight) {
  auto x = random_tensor({16}, 4, -2, 2);
  EXPECT_LT(check([](const Tensor& t) { return ad::sum(ad::sin(t)); }, x), 1e-7);
}

TEST(GradCheck, LinearFunctionIsExactUpToRounding) {
  auto x = random_tensor({10}, 5);
  EXPECT_LT(check([](const Tensor& t) { return ad::sum(t); }, x), 1e-9);
}

TEST(GradCheck, NaNIsEvaluationError) {
  auto x = Tensor::from({1}, {1.0});
  EXPECT_THROW(check([](const Tensor& t) { return ad::scale(t, std::nan("")); }, x), EvaluationError);
}

// Each primitive against central differences on small random inputs; a
// weighted sum keeps the loss generic.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  const auto wa = random_tensor({3, 4}, 100);
  const auto w4 = random_tensor({4}, 101);
  const auto other = random_tensor({3, 4}, 102, 0.5, 1.5);
  const auto right = random_tensor({4, 2}, 103);
  auto weighted = [&](const Tensor& y) {
    auto w = random_tensor(y.shape(), 999);
    return ad::sum(ad::mul(y, w));
  };
  std::function<Tensor(const Tensor&)> f;
  Tensor x = random_tensor({3, 4}, 7);
  switch (GetParam()) {
    case 0: f = [&](const Tensor& t) { return weighted(ad::add(t, w4)); }; break;
    case 1: f = [&](const Tensor& t) { return weighted(ad::mul(t, other)); }; break;
    case 2: f = [&](const Tensor& t) { return weighted(ad::div(other, ad::add_scalar(ad::square(t), 1.0))); }; break;
    case 3: f = [&](const Tensor& t) { return weighted(ad::matmul(t, right)); }; break;
    case 4: f = [&](const Tensor& t) { return weighted(ad::transpose(t)); }; break;
    case 5: f = [&](const Tensor& t) { return weighted(ad::permute(ad::reshape(t, {3, 2, 2}), {2, 0, 1})); }; break;
    case 6: f = [&](const Tensor& t) { return weighted(ad::sum(t, 0)); }; break;
    case 7: f = [&](const Tensor& t) { return weighted(ad::max(t, 1)); }; break;
    case 8: f = [&](const Tensor& t) { return weighted(ad::exp(t)); }; break;
    case 9:
      x = random_tensor({3, 4}, 8, 0.2, 2.0);
      f = [&](const Tensor& t) { return weighted(ad::log(t)); };
      break;
    case 10: f = [&](const Tensor& t) { return weighted(ad::relu(t)); }; break;
    case 11: f = [&](const Tensor& t) { return weighted(ad::gelu(t)); }; break;
    case 12: f = [&](const Tensor& t) { return weighted(ad::softmax(t, 1)); }; break;
    case 13: f = [&](const Tensor& t) { return weighted(ad::log_softmax(t, 0)); }; break;
    case 14: f = [&](const Tensor& t) { return weighted(ad::gather_rows(t, {2, 0, 2, 1})); }; break;
    case 15: f = [&](const Tensor& t) { return weighted(ad::scatter_add_rows(t, {1, 1, 0}, 2)); }; break;
    case 16: f = [&](const Tensor& t) { return weighted(ad::gather_max_rows(t, {0, 1, 2, 2, 1, 1}, 3)); }; break;
    case 17: f = [&](const Tensor& t) { return weighted(ad::sigmoid(t)); }; break;
    case 18: f = [&](const Tensor& t) { return weighted(ad::sqrt(ad::add_scalar(ad::square(t), 0.5))); }; break;
    case 19: f = [&](const Tensor& t) { return weighted(ad::slice(t, 1, 1, 2)); }; break;
    case 20: f = [&](const Tensor& t) { return weighted(ad::concat({t, ad::square(t)}, 0)); }; break;
    case 21: f = [&](const Tensor& t) { return weighted(ad::broadcast_to(ad::sum(t, 0), {5, 4})); }; break;
    case 22: f = [&](const Tensor& t) { return ad::max(t); }; break;
    case 23: f = [&](const Tensor& t) { return ad::mean(ad::square(t)); }; break;
    default: FAIL();
  }
  EXPECT_LT(check(f, x), 1e-6) << "primitive case " << GetParam();
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGrad, ::testing::Range(0, 24));

TEST(GradCheck, CompositeGraph) {
  auto w = random_tensor({4, 4}, 50);
  auto f = [&](const Tensor& t) {
    auto h = ad::gelu(ad::matmul(t, w));
    auto s = ad::softmax(ad::add(h, t), -1);
    return ad::sum(ad::mul(ad::log_softmax(h, 0), s));
  };
  EXPECT_LT(check(f, random_tensor({3, 4}, 51)), 1e-6);
}

TEST(GradCheck, ParamVariantRestoresValues) {
  auto p = random_tensor({6}, 60);
  const std::vector<double> before(p.data().begin(), p.data().end());
  auto res = ad::grad_check_param([&] { return ad::sum(ad::sin(ad::mul(p, p))); }, p);
  EXPECT_LT(res.max_rel_error, 1e-7);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), before);
  EXPECT_FALSE(p.requires_grad());
}
