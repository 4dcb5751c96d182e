#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "facecond/numerics/graph.hpp"
#include "facecond/numerics/kernels.hpp"
#include "facecond/numerics/rng.hpp"

namespace facecond {
namespace {

using TensorD = BasicTensor<double>;

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), DimensionError);
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
}

TEST(Tensor, BitEqualSeesSignOfZero) {
  Tensor a({1, 2}, {0.0f, 1.0f});
  Tensor b({1, 2}, {-0.0f, 1.0f});
  EXPECT_FALSE(a.bit_equal(b));
  EXPECT_TRUE(a.bit_equal(a));
  EXPECT_FALSE(a.bit_equal(a.reshaped({2, 1})));
}

TEST(Kernels, MatmulMatchesHandResult) {
  const Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  const Tensor b = Tensor::from_rows({{5, 6}, {7, 8}});
  EXPECT_TRUE(matmul(a, b).bit_equal(Tensor::from_rows({{19, 22}, {43, 50}})));
  EXPECT_THROW(matmul(a, Tensor({3, 1})), DimensionError);
}

TEST(Kernels, SoftmaxRowsSumToOne) {
  const Tensor s = softmax_rows(Tensor::from_rows({{1000, 1001, 999}, {-5, 0, 5}}));
  for (std::size_t r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (float v : s.row(r)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Kernels, CosineRejectsZeroVector) {
  EXPECT_THROW(cosine_similarity(Tensor({3}), Tensor({3}, 1.0f)), DegenerateInputError);
  EXPECT_NEAR(cosine_similarity(Tensor({3}, 2.0f), Tensor({3}, 1.0f)), 1.0, 1e-12);
}

TEST(Rng, PhiloxKnownAnswers) {
  EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}),
            (std::array<std::uint32_t, 4>{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}),
            (std::array<std::uint32_t, 4>{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}),
            (std::array<std::uint32_t, 4>{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(Rng, DrawsArePureFunctionsOfState) {
  RngState a{42, 0}, b{42, 0};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(next_uniform(a), next_uniform(b));
  RngState c{42, 17};
  RngState d{42, 0};
  for (int i = 0; i < 17; ++i) next_block(d);
  EXPECT_EQ(next_uniform(c), next_uniform(d));
}

TEST(Rng, SubstreamsDifferByLabelAndIndex) {
  const RngState root{7, 0};
  std::set<std::uint64_t> seeds;
  for (const char* label : {"data", "init", "train", "sample"}) {
    for (std::uint64_t i = 0; i < 4; ++i) seeds.insert(root.substream(label, i).seed);
  }
  EXPECT_EQ(seeds.size(), 16u);
  EXPECT_EQ(root.substream("data", 3), root.substream("data", 3));
}

TEST(Rng, UniformAndBelowStayInRange) {
  RngState r{1, 0};
  for (int i = 0; i < 10000; ++i) {
    const double u = next_uniform(r);
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(next_below(r, 7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  RngState r{3, 0};
  const Tensor n = seeded_normal(r, {20000});
  double mean = 0.0, var = 0.0;
  for (float v : n.flat()) mean += v / 20000.0;
  for (float v : n.flat()) var += (v - mean) * (v - mean) / 20000.0;
  EXPECT_NEAR(mean, 0.0, 0.03);
  EXPECT_NEAR(var, 1.0, 0.05);
}

// Gradient of a scalar graph function of one [r x c] input, against central
// differences.
double check_op(const std::function<Var(Graph<double>&, Var)>& op, const TensorD& x) {
  Graph<double> g;
  Var in = g.leaf(x, true);
  Var out = op(g, in);
  g.backward(out);
  const TensorD analytic = g.grad(in);
  const TensorD numeric = finite_diff_grad<double>(
      [&](const TensorD& probe) {
        Graph<double> h;
        return h.value(op(h, h.constant(probe)))[0];
      },
      x, 1e-5);
  return relative_error(analytic, numeric);
}

TensorD random_matrix(std::uint64_t seed, std::size_t r, std::size_t c) {
  RngState rng{seed, 0};
  return seeded_normal(rng, {r, c}).cast<double>();
}

TEST(Graph, OpGradientsMatchFiniteDifferences) {
  const TensorD w = random_matrix(11, 4, 3);
  const TensorD row = random_matrix(12, 1, 3);
  const TensorD target = random_matrix(13, 5, 3);
  const std::vector<std::pair<const char*, std::function<Var(Graph<double>&, Var)>>> ops = {
      {"matmul", [&](Graph<double>& g, Var x) { return g.mean_squared_error(g.matmul(x, g.constant(w)), g.constant(target)); }},
      {"layer_norm", [&](Graph<double>& g, Var x) { return g.mean_squared_error(g.layer_norm(g.slice_cols(g.matmul(x, g.constant(w)), 0, 3), 1e-6), g.constant(target)); }},
      {"softmax", [&](Graph<double>& g, Var x) { return g.mean_squared_error(g.softmax_rows(g.matmul(x, g.constant(w))), g.constant(target)); }},
      {"gelu_silu", [&](Graph<double>& g, Var x) { return g.mean_squared_error(g.silu(g.gelu(g.matmul(x, g.constant(w)))), g.constant(target)); }},
      {"modulate", [&](Graph<double>& g, Var x) {
         Var h = g.matmul(x, g.constant(w));
         return g.mean_squared_error(g.modulate(h, g.mean_rows(h), g.constant(row)), g.constant(target));
       }},
      {"gated_residual", [&](Graph<double>& g, Var x) {
         Var h = g.matmul(x, g.constant(w));
         return g.mean_squared_error(g.gated_residual(h, g.gelu(h), g.slice_rows(h, 0, 1)), g.constant(target));
       }},
      {"attention", [&](Graph<double>& g, Var x) {
         Var h = g.matmul(x, g.constant(w));
         return g.mean_squared_error(g.matmul(g.softmax_rows(g.matmul_nt(h, h)), h), g.constant(target));
       }},
      {"cosine", [&](Graph<double>& g, Var x) {
         Var h = g.reshape(g.matmul(x, g.constant(w)), 1, 15);
         return g.cosine(h, g.constant(target.reshaped({1, 15})));
       }},
      {"gather_concat", [&](Graph<double>& g, Var x) {
         Var h = g.matmul(x, g.constant(w));
         Var parts[] = {g.slice_rows(h, 3, 2), g.slice_rows(h, 0, 3)};
         Var cat = g.concat_rows(parts);
         Var gathered = g.gather(cat, {0, 4, 4, 14, 2, 7, 9, 1, 3, 5, 6, 8, 10, 11, 12}, 5, 3);
         return g.masked_mse(gathered, g.constant(target), std::vector<double>{1, 0, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1});
       }},
  };
  const TensorD x = random_matrix(10, 5, 4);
  for (const auto& [name, op] : ops) EXPECT_LT(check_op(op, x), 1e-6) << name;
}

TEST(Graph, FrozenLeavesReceiveNoGradient) {
  Graph<double> g;
  Var a = g.leaf(random_matrix(1, 2, 2), true);
  Var b = g.leaf(random_matrix(2, 2, 2), false);
  g.backward(g.mean_squared_error(g.matmul(a, b), g.constant(TensorD({2, 2}))));
  EXPECT_FALSE(g.requires_grad(b));
  const TensorD gb = g.grad(b);
  for (double v : gb.flat()) EXPECT_EQ(v, 0.0);
}

TEST(Graph, BackwardNeedsScalar) {
  Graph<double> g;
  Var a = g.leaf(random_matrix(1, 2, 2), true);
  EXPECT_THROW(g.backward(a), DimensionError);
}

}  // namespace
}  // namespace facecond
