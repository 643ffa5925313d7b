#pragma once

// Query-to-gallery matching: image-level cosine distance on [cls] tokens,
// patch-level earth mover's distance solved with entropic Sinkhorn scaling,
// and the two-stage (cosine shortlist, then combined distance) ranking.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "fpc/encoder.hpp"
#include "fpc/gallery.hpp"

namespace fpc {

/// 1 - <a,b> / (|a||b|). Throws DegenerateError on a zero vector.
double cosine_distance(std::span<const float> a, std::span<const float> b);

struct CorrelationWeights {
  std::vector<double> query;
  std::vector<double> gallery;
};

/// w_q[i] = max(0, <q_i, mean(g)>), w_g[j] = max(0, <g_j, mean(q)>).
CorrelationWeights correlation_weights(const Matrix& query_patches, const Matrix& gallery_patches);

struct TransportProblem {
  MatrixD cost;  // m x n ground distances, each in [0, 2]
  std::vector<double> query_weights;
  std::vector<double> gallery_weights;
};

struct TransportPlan {
  MatrixD flow;
  double cost_value = 0.0;
  std::size_t iterations_used = 0;
  bool converged = false;
  double marginal_violation = 0.0;
};

struct SinkhornParams {
  double eps = 0.05;
  std::size_t max_iters = 100;
  double tol = 1e-4;
};

/// Balanced entropic transport. Both weight vectors are normalized to unit
/// mass; cost_value = sum(f*d) / sum(f). Throws DegenerateError when either
/// side has zero total mass.
TransportPlan sinkhorn_solve(const TransportProblem& p, const SinkhornParams& params = {});

/// Pairwise cosine distances between patch rows.
MatrixD patch_cost_matrix(const Matrix& query_patches, const Matrix& gallery_patches);

inline constexpr double kDegenerateEmd = 1.0;

/// Sinkhorn EMD between patch sets; kDegenerateEmd when either side's
/// correlation weights are all zero.
double emd_distance(const Matrix& query_patches, const Matrix& gallery_patches,
                    const SinkhornParams& params = {});

/// (1 - alpha) * d_cos + alpha * d_emd, alpha in [0, 1].
double combined_distance(double d_cos, double d_emd, double alpha);

struct RankOptions {
  double alpha = 0.4;
  std::size_t shortlist = 100;
  std::size_t k = 10;
  SinkhornParams sinkhorn;
};

struct RankedCandidate {
  std::size_t gallery_position = 0;
  double d_cos = 0.0;
  double d_emd = 0.0;
  double d_combined = 0.0;
};

struct RankList {
  std::vector<RankedCandidate> candidates;  // ascending d_combined, ties by position
  std::size_t shortlist_size = 0;
  std::size_t k = 0;
};

/// Stage 1 keeps the `shortlist` nearest records by cls cosine distance;
/// stage 2 orders that shortlist by combined distance and returns the top k.
RankList rank(const EncodedFeature& query, const GalleryMemory& memory, const RankOptions& opts);

/// Full-gallery ordering used for retrieval metrics: the combined-distance
/// shortlist first, then every remaining record by cls cosine distance.
struct FullRanking {
  RankList shortlist;  // k == shortlist_size
  std::vector<std::size_t> order;  // all gallery positions
};
FullRanking rank_full(const EncodedFeature& query, const GalleryMemory& memory,
                      const RankOptions& opts);

}  // namespace fpc
