#include <gtest/gtest.h>

#include <cmath>

#include "fpc/tensor.hpp"
#include "oracles.hpp"

using namespace fpc;
using namespace fpc::testing;

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(1);
  for (auto [n, k, m] : {std::tuple{1, 1, 1}, {3, 5, 2}, {7, 4, 9}, {16, 16, 16}}) {
    const Matrix a = random_matrix(n, k, rng), b = random_matrix(k, m, rng);
    const Matrix c = matmul(a, b);
    const auto ref = naive_matmul(to_rows(a), to_rows(b));
    ASSERT_EQ(c.rows(), static_cast<std::size_t>(n));
    ASSERT_EQ(c.cols(), static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) EXPECT_NEAR(c(i, j), ref[i][j], 1e-5);
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  EXPECT_THROW(Matrix(2, 2, std::vector<float>(3)), ShapeError);
}

TEST(Matmul, DoubleInstantiation) {
  const MatrixD a(2, 2, {1, 2, 3, 4}), b(2, 1, {5, 6});
  EXPECT_EQ(matmul(a, b), MatrixD(2, 1, {17, 39}));
}

TEST(Linear, AddsBiasPerRow) {
  const Matrix x(2, 2, {1, 0, 0, 1}), w(2, 3, {1, 2, 3, 4, 5, 6});
  const Vector b{10, 20, 30};
  EXPECT_EQ(linear(x, w, b), Matrix(2, 3, {11, 22, 33, 14, 25, 36}));
  EXPECT_THROW(linear(x, w, Vector{1, 2}), ShapeError);
}

TEST(Softmax, RowsSumToOneAndStable) {
  Rng rng(2);
  Matrix m = random_matrix(5, 7, rng, 30.0);
  m(0, 0) = 1000.0f;  // would overflow without max subtraction
  const Matrix s = softmax_rows(m);
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double sum = 0;
    for (float v : s.row(i)) {
      EXPECT_GE(v, 0.0f);
      EXPECT_TRUE(std::isfinite(v));
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-5);
  }
  EXPECT_NEAR(s(0, 0), 1.0f, 1e-6);
}

TEST(Softmax, ShiftInvariant) {
  const Matrix a(1, 3, {1, 2, 3}), b(1, 3, {101, 102, 103});
  const Matrix sa = softmax_rows(a), sb = softmax_rows(b);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(sa(0, j), sb(0, j), 1e-6);
  EXPECT_NEAR(sa(0, 2), std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)), 1e-6);
}

TEST(LayerNorm, MatchesReference) {
  Rng rng(3);
  const Matrix x = random_matrix(4, 6, rng, 3.0);
  const Vector g = random_vector(6, rng), b = random_vector(6, rng);
  const Matrix y = layer_norm(x, g, b);
  const auto ref = naive_layer_norm(to_rows(x), g, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(y(i, j), ref[i][j], 1e-5);
  EXPECT_THROW(layer_norm(x, Vector(5, 1.0f), b), ShapeError);
}

TEST(Gelu, KnownValues) {
  EXPECT_FLOAT_EQ(gelu(0.0f), 0.0f);
  EXPECT_NEAR(gelu(1.0f), 0.8413447f, 1e-6);
  EXPECT_NEAR(gelu(-1.0f), -0.1586553f, 1e-6);
  EXPECT_NEAR(gelu(6.0f), 6.0f, 1e-5);
}

TEST(Attention, MatchesNaivePerHead) {
  Rng rng(4);
  for (std::size_t heads : {1u, 2u, 4u}) {
    const std::size_t t = 9, d = 8;
    const Matrix x = random_matrix(t, d, rng);
    const AttentionWeights w = random_attention(d, rng);
    const AttentionOutput out = multi_head_attention(x, w, heads);
    const NaiveAttention ref = naive_attention(to_rows(x), w, heads);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        EXPECT_NEAR(out.context(i, j), ref.context[i][j], 1e-5);
        EXPECT_NEAR(out.tokens_out(i, j), ref.out[i][j], 1e-5);
      }
    ASSERT_EQ(out.cls_attention_per_head.size(), heads);
    for (std::size_t h = 0; h < heads; ++h) {
      double sum = 0;
      for (std::size_t j = 0; j < t; ++j) {
        EXPECT_NEAR(out.cls_attention_per_head[h][j], ref.cls_probs[h][j], 1e-6);
        sum += out.cls_attention_per_head[h][j];
      }
      EXPECT_NEAR(sum, 1.0, 1e-5);
    }
  }
}

TEST(Attention, HeadsMustDivideDim) {
  Rng rng(5);
  const AttentionWeights w = random_attention(6, rng);
  EXPECT_THROW(multi_head_attention(random_matrix(3, 6, rng), w, 4), ConfigError);
  EXPECT_THROW(multi_head_attention(random_matrix(3, 5, rng), w, 1), ShapeError);
}

TEST(Flops, OneLayerByHand) {
  // T=10, D=4, Dmlp=8: 3*10*16 + 2*100*4 + 10*16 + 2*10*4*8 = 480+800+160+640 = 2080 MACs.
  const std::vector<std::size_t> tokens{10};
  const FlopsReport r = count_flops({1, 4, 8}, tokens);
  ASSERT_EQ(r.per_layer.size(), 1u);
  EXPECT_DOUBLE_EQ(r.per_layer[0], 4160.0);
  EXPECT_DOUBLE_EQ(r.total, 4160.0);
}

TEST(Flops, MonotoneInTokens) {
  const TransformerDims dims{3, 64, 256};
  double prev = 0;
  for (std::size_t t = 1; t < 300; t += 17) {
    const std::vector<std::size_t> tokens(3, t);
    const double total = count_flops(dims, tokens).total;
    EXPECT_GT(total, prev);
    prev = total;
  }
}

TEST(Flops, LengthMismatchThrows) {
  const std::vector<std::size_t> tokens{1, 2};
  EXPECT_THROW(count_flops({3, 8, 8}, tokens), ShapeError);
}
