#pragma once

// Dense numerical primitives shared by the encoder, matcher and decoder.
//
// Matrices are row-major. All reductions run sequentially over the natural
// index so results are bit-reproducible for a given build.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fpc/error.hpp"

namespace fpc {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                       std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using MatrixD = BasicMatrix<double>;
using Vector = std::vector<float>;

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b);

/// a * b + bias (bias broadcast over rows). Empty bias means no bias.
Matrix linear(const Matrix& x, const Matrix& weight, std::span<const float> bias);

template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m);

inline constexpr float kLayerNormEps = 1e-6f;

Matrix layer_norm(const Matrix& tokens, std::span<const float> gain, std::span<const float> bias,
                  float eps = kLayerNormEps);

float gelu(float x) noexcept;

/// Projection set of one attention block. Weights are stored (in x out), so a
/// token row x maps to x * W + b.
struct AttentionWeights {
  Matrix wq, wk, wv, wo;
  Vector bq, bk, bv, bo;
};

struct AttentionOutput {
  Matrix tokens_out;  // after output projection
  Matrix context;     // concatenated per-head A*V, before output projection
  /// Row 0 of each head's post-softmax attention, over all T tokens.
  std::vector<Vector> cls_attention_per_head;
};

AttentionOutput multi_head_attention(const Matrix& tokens, const AttentionWeights& w,
                                     std::size_t heads);

/// Transformer dimensions needed for analytic FLOPs accounting.
struct TransformerDims {
  std::size_t layers = 12;
  std::size_t embed_dim = 768;
  std::size_t mlp_dim = 3072;
};

struct FlopsReport {
  std::vector<double> per_layer;
  double total = 0.0;
};

/// Per-layer count: QKV 3TD^2, scores+apply 2T^2D, out-proj TD^2, MLP 2TD*Dmlp
/// multiply-accumulates, each counted as 2 FLOPs.
FlopsReport count_flops(const TransformerDims& dims, std::span<const std::size_t> token_counts);

}  // namespace fpc
