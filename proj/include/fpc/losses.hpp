#pragma once

// ID (softmax cross-entropy) and batch-hard triplet losses on [cls]
// embeddings, with gradients with respect to the embeddings. There is no
// training loop; these exist to pin down the supervision contract.

#include <cstdint>
#include <span>
#include <vector>

#include "fpc/tensor.hpp"

namespace fpc {

template <typename T>
struct Classifier {
  BasicMatrix<T> weight;  // C x D
  std::vector<T> bias;    // C
};

template <typename T>
struct LossPart {
  T value = 0;
  BasicMatrix<T> grad;  // d value / d embeddings, B x D
};

template <typename T>
struct LossReport {
  T l_id = 0;
  T l_triplet = 0;
  T l_stage = 0;  // l_id + l_triplet
  BasicMatrix<T> grad_wrt_embeddings;
};

inline constexpr double kTripletMargin = 0.3;

/// Mean cross-entropy of classifier logits. Throws InputError for labels >= C.
template <typename T>
LossPart<T> id_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                    const Classifier<T>& classifier);

/// Batch-hard triplet on Euclidean distances: per anchor, hinge of
/// (hardest positive - hardest negative + margin), averaged over anchors.
/// Hardest-example ties resolve to the lower index; at zero distance the
/// distance gradient is taken as zero. Throws InputError if some anchor has
/// no positive or no negative.
template <typename T>
LossPart<T> triplet_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                         T margin = static_cast<T>(kTripletMargin));

/// L_ID + L_T on one batch.
template <typename T>
LossReport<T> stage_loss(const BasicMatrix<T>& batch, std::span<const std::uint32_t> labels,
                         const Classifier<T>& classifier, T margin = static_cast<T>(kTripletMargin));

template <typename T>
struct TotalLoss {
  LossReport<T> sparse;        // on sparse-encoder [cls]
  LossReport<T> consolidated;  // on consolidated [cls]
  T total = 0;
};

template <typename T>
TotalLoss<T> total_loss(const BasicMatrix<T>& sparse_cls, const BasicMatrix<T>& consolidated_cls,
                        std::span<const std::uint32_t> labels, const Classifier<T>& classifier,
                        T margin = static_cast<T>(kTripletMargin));

}  // namespace fpc
