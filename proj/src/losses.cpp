#include "fpc/losses.hpp"

#include <cmath>
#include <limits>

namespace fpc {

namespace {

template <typename T>
void check_labels(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels) {
  if (labels.size() != batch.rows()) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch.rows()));
  }
  if (batch.rows() == 0) throw InputError("loss: empty batch");
}

template <typename T>
T distance(std::span<const T> a, std::span<const T> b) {
  T s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

template <typename T>
LossPart<T> id_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                    const Classifier<T>& classifier) {
  check_labels(batch, labels);
  const std::size_t b = batch.rows();
  const std::size_t d = batch.cols();
  const std::size_t c = classifier.weight.rows();
  if (classifier.weight.cols() != d || classifier.bias.size() != c) {
    throw ShapeError("id_loss: classifier does not match embedding dim " + std::to_string(d));
  }
  for (std::uint32_t y : labels) {
    if (y >= c) {
      throw InputError("id_loss: label " + std::to_string(y) + " >= " + std::to_string(c) +
                       " classes");
    }
  }

  LossPart<T> out;
  out.grad = BasicMatrix<T>(b, d);
  const T inv_b = T(1) / static_cast<T>(b);
  std::vector<T> logits(c), prob(c);
  for (std::size_t i = 0; i < b; ++i) {
    auto x = batch.row(i);
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      T z = classifier.bias[k];
      auto w = classifier.weight.row(k);
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
      logits[k] = z;
      hi = std::max(hi, z);
    }
    T norm = 0;
    for (std::size_t k = 0; k < c; ++k) norm += std::exp(logits[k] - hi);
    const T log_norm = hi + std::log(norm);
    out.value += (log_norm - logits[labels[i]]) * inv_b;

    for (std::size_t k = 0; k < c; ++k) prob[k] = std::exp(logits[k] - log_norm);
    prob[labels[i]] -= T(1);
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < c; ++k) {
      auto w = classifier.weight.row(k);
      const T coeff = prob[k] * inv_b;
      for (std::size_t j = 0; j < d; ++j) g[j] += coeff * w[j];
    }
  }
  return out;
}

template <typename T>
LossPart<T> triplet_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                         T margin) {
  check_labels(batch, labels);
  const std::size_t b = batch.rows();
  const std::size_t d = batch.cols();

  BasicMatrix<T> dist(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j)
      dist(i, j) = dist(j, i) = distance(batch.row(i), batch.row(j));

  LossPart<T> out;
  out.grad = BasicMatrix<T>(b, d);
  const T inv_b = T(1) / static_cast<T>(b);

  // d|x_a - x_o| / d x_a, scaled and applied to both endpoints.
  auto push = [&](std::size_t a, std::size_t o, T scale) {
    const T dao = dist(a, o);
    if (dao == T(0)) return;
    auto xa = batch.row(a);
    auto xo = batch.row(o);
    auto ga = out.grad.row(a);
    auto go = out.grad.row(o);
    for (std::size_t j = 0; j < d; ++j) {
      const T g = scale * (xa[j] - xo[j]) / dao;
      ga[j] += g;
      go[j] -= g;
    }
  };

  for (std::size_t a = 0; a < b; ++a) {
    std::size_t pos = b, neg = b;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos == b || dist(a, j) > dist(a, pos)) pos = j;
      } else {
        if (neg == b || dist(a, j) < dist(a, neg)) neg = j;
      }
    }
    if (pos == b || neg == b) {
      throw InputError("triplet_loss: anchor " + std::to_string(a) + " (label " +
                       std::to_string(labels[a]) + ") lacks a " +
                       (pos == b ? "positive" : "negative"));
    }
    const T hinge = dist(a, pos) - dist(a, neg) + margin;
    if (hinge <= T(0)) continue;
    out.value += hinge * inv_b;
    push(a, pos, inv_b);
    push(a, neg, -inv_b);
  }
  return out;
}

template <typename T>
LossReport<T> stage_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                         const Classifier<T>& classifier, T margin) {
  LossPart<T> id = id_loss(batch, labels, classifier);
  LossPart<T> tri = triplet_loss(batch, labels, margin);
  LossReport<T> r;
  r.l_id = id.value;
  r.l_triplet = tri.value;
  r.l_stage = id.value + tri.value;
  r.grad_wrt_embeddings = std::move(id.grad);
  auto g = r.grad_wrt_embeddings.data();
  auto t = tri.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += t[i];
  return r;
}

template <typename T>
TotalLoss<T> total_loss(const BasicMatrix<T>& sparse_cls, const BasicMatrix<T>& consolidated_cls,
                        std::span<const std::uint32_t> labels, const Classifier<T>& classifier,
                        T margin) {
  if (sparse_cls.rows() != consolidated_cls.rows() || sparse_cls.cols() != consolidated_cls.cols()) {
    throw ShapeError("total_loss: sparse and consolidated batches differ in shape");
  }
  TotalLoss<T> out;
  out.sparse = stage_loss(sparse_cls, labels, classifier, margin);
  out.consolidated = stage_loss(consolidated_cls, labels, classifier, margin);
  out.total = out.sparse.l_stage + out.consolidated.l_stage;
  return out;
}

#define FPC_INSTANTIATE_LOSSES(T)                                                              \
  template LossPart<T> id_loss(const BasicMatrix<T>&, std::span<const std::uint32_t>,          \
                               const Classifier<T>&);                                          \
  template LossPart<T> triplet_loss(const BasicMatrix<T>&, std::span<const std::uint32_t>, T); \
  template LossReport<T> stage_loss(const BasicMatrix<T>&, std::span<const std::uint32_t>,     \
                                    const Classifier<T>&, T);                                  \
  template TotalLoss<T> total_loss(const BasicMatrix<T>&, const BasicMatrix<T>&,               \
                                   std::span<const std::uint32_t>, const Classifier<T>&, T);

FPC_INSTANTIATE_LOSSES(float)
FPC_INSTANTIATE_LOSSES(double)

#undef FPC_INSTANTIATE_LOSSES

}  // namespace fpc
