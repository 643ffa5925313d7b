#include "fpc/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace fpc {

namespace {

std::string dims(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + dims(a.rows(), a.cols()) + " * " + dims(b.rows(), b.cols()));
  }
  BasicMatrix<T> out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    T* dst = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      const T* src = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

template BasicMatrix<float> matmul(const BasicMatrix<float>&, const BasicMatrix<float>&);
template BasicMatrix<double> matmul(const BasicMatrix<double>&, const BasicMatrix<double>&);

Matrix linear(const Matrix& x, const Matrix& weight, std::span<const float> bias) {
  Matrix out = matmul(x, weight);
  if (bias.empty()) return out;
  if (bias.size() != out.cols()) {
    throw ShapeError("linear: bias length " + std::to_string(bias.size()) + " != " +
                     std::to_string(out.cols()));
  }
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias[j];
  }
  return out;
}

template <typename T>
BasicMatrix<T> softmax_rows(const BasicMatrix<T>& m) {
  BasicMatrix<T> out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto src = m.row(i);
    auto dst = out.row(i);
    if (src.empty()) continue;
    const T hi = *std::max_element(src.begin(), src.end());
    T sum = 0;
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = std::exp(src[j] - hi);
      sum += dst[j];
    }
    for (auto& v : dst) v /= sum;
  }
  return out;
}

template BasicMatrix<float> softmax_rows(const BasicMatrix<float>&);
template BasicMatrix<double> softmax_rows(const BasicMatrix<double>&);

Matrix layer_norm(const Matrix& tokens, std::span<const float> gain, std::span<const float> bias,
                  float eps) {
  const std::size_t d = tokens.cols();
  if (gain.size() != d || bias.size() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal token dim " + std::to_string(d));
  }
  Matrix out(tokens.rows(), d);
  for (std::size_t i = 0; i < tokens.rows(); ++i) {
    auto x = tokens.row(i);
    double mean = 0.0;
    for (float v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (float v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto y = out.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      y[j] = static_cast<float>((x[j] - mean) * inv) * gain[j] + bias[j];
    }
  }
  return out;
}

float gelu(float x) noexcept {
  return 0.5f * x * (1.0f + std::erf(x * static_cast<float>(M_SQRT1_2)));
}

AttentionOutput multi_head_attention(const Matrix& tokens, const AttentionWeights& w,
                                     std::size_t heads) {
  const std::size_t t = tokens.rows();
  const std::size_t d_model = tokens.cols();
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("multi_head_attention: dim " + std::to_string(d_model) +
                      " not divisible by heads " + std::to_string(heads));
  }
  const std::size_t d = d_model / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));

  const Matrix q = linear(tokens, w.wq, w.bq);
  const Matrix k = linear(tokens, w.wk, w.bk);
  const Matrix v = linear(tokens, w.wv, w.bv);

  AttentionOutput out;
  out.context = Matrix(t, d_model);
  out.cls_attention_per_head.resize(heads);

  Matrix scores(1, t);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * d;
    for (std::size_t i = 0; i < t; ++i) {
      const float* qi = q.row(i).data() + off;
      for (std::size_t j = 0; j < t; ++j) {
        const float* kj = k.row(j).data() + off;
        float s = 0.0f;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        scores(0, j) = s * scale;
      }
      const Matrix p = softmax_rows(scores);
      float* ctx = out.context.row(i).data() + off;
      for (std::size_t j = 0; j < t; ++j) {
        const float pij = p(0, j);
        const float* vj = v.row(j).data() + off;
        for (std::size_t c = 0; c < d; ++c) ctx[c] += pij * vj[c];
      }
      if (i == 0) out.cls_attention_per_head[h].assign(p.data().begin(), p.data().end());
    }
  }
  out.tokens_out = linear(out.context, w.wo, w.bo);
  return out;
}

FlopsReport count_flops(const TransformerDims& dims, std::span<const std::size_t> token_counts) {
  if (token_counts.size() != dims.layers) {
    throw ShapeError("count_flops: " + std::to_string(token_counts.size()) +
                     " token counts for " + std::to_string(dims.layers) + " layers");
  }
  const double dm = static_cast<double>(dims.embed_dim);
  const double dmlp = static_cast<double>(dims.mlp_dim);
  FlopsReport report;
  report.per_layer.reserve(token_counts.size());
  for (std::size_t tokens : token_counts) {
    const double t = static_cast<double>(tokens);
    const double macs = 3.0 * t * dm * dm + 2.0 * t * t * dm + t * dm * dm + 2.0 * t * dm * dmlp;
    report.per_layer.push_back(2.0 * macs);
    report.total += 2.0 * macs;
  }
  return report;
}

}  // namespace fpc
