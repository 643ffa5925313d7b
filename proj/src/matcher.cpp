#include "fpc/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fpc {

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_distance: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DegenerateError("cosine_distance: zero vector");
  const double sim = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(1.0 - sim, 0.0, 2.0);
}

namespace {

std::vector<double> row_mean(const Matrix& m) {
  std::vector<double> mean(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) mean[j] += r[j];
  }
  if (m.rows() > 0)
    for (auto& v : mean) v /= static_cast<double>(m.rows());
  return mean;
}

std::vector<double> clamped_dots(const Matrix& m, const std::vector<double>& dir) {
  std::vector<double> w(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * dir[j];
    w[i] = std::max(0.0, s);
  }
  return w;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

CorrelationWeights correlation_weights(const Matrix& query_patches,
                                       const Matrix& gallery_patches) {
  if (query_patches.cols() != gallery_patches.cols()) {
    throw ShapeError("correlation_weights: dims " + std::to_string(query_patches.cols()) + " and " +
                     std::to_string(gallery_patches.cols()));
  }
  return {clamped_dots(query_patches, row_mean(gallery_patches)),
          clamped_dots(gallery_patches, row_mean(query_patches))};
}

TransportPlan sinkhorn_solve(const TransportProblem& p, const SinkhornParams& params) {
  const std::size_t m = p.cost.rows();
  const std::size_t n = p.cost.cols();
  if (p.query_weights.size() != m || p.gallery_weights.size() != n) {
    throw ShapeError("sinkhorn_solve: weights do not match " + std::to_string(m) + "x" +
                     std::to_string(n) + " cost");
  }
  if (!(params.eps > 0.0)) throw ConfigError("sinkhorn_solve: eps must be positive");
  for (double w : p.query_weights)
    if (w < 0.0) throw InputError("sinkhorn_solve: negative query weight");
  for (double w : p.gallery_weights)
    if (w < 0.0) throw InputError("sinkhorn_solve: negative gallery weight");

  const double mass_q = sum(p.query_weights);
  const double mass_g = sum(p.gallery_weights);
  if (!(mass_q > 0.0) || !(mass_g > 0.0)) {
    throw DegenerateError("sinkhorn_solve: zero total transport mass");
  }
  std::vector<double> a(m), b(n);
  for (std::size_t i = 0; i < m; ++i) a[i] = p.query_weights[i] / mass_q;
  for (std::size_t j = 0; j < n; ++j) b[j] = p.gallery_weights[j] / mass_g;

  MatrixD kernel(m, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) kernel(i, j) = std::exp(-p.cost(i, j) / params.eps);

  std::vector<double> u(m, 1.0), v(n, 1.0), kv(m), ktu(n);
  TransportPlan plan;
  for (std::size_t it = 1; it <= params.max_iters + 1; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      auto kr = kernel.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += kr[j] * v[j];
      kv[i] = s;
    }
    // Columns are exact after a v update, so only rows can violate.
    if (it > 1) {
      double worst = 0.0;
      for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, std::abs(u[i] * kv[i] - a[i]));
      if (worst < params.tol) {
        plan.converged = true;
        break;
      }
      if (it > params.max_iters) break;
    }
    plan.iterations_used = it;
    for (std::size_t i = 0; i < m; ++i) u[i] = kv[i] > 0.0 ? a[i] / kv[i] : 0.0;
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      auto kr = kernel.row(i);
      for (std::size_t j = 0; j < n; ++j) ktu[j] += kr[j] * u[i];
    }
    for (std::size_t j = 0; j < n; ++j) v[j] = ktu[j] > 0.0 ? b[j] / ktu[j] : 0.0;
  }

  plan.flow = MatrixD(m, n);
  double total = 0.0, weighted = 0.0;
  std::vector<double> rows(m, 0.0), cols(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double f = u[i] * kernel(i, j) * v[j];
      plan.flow(i, j) = f;
      total += f;
      weighted += f * p.cost(i, j);
      rows[i] += f;
      cols[j] += f;
    }
  }
  double violation = 0.0;
  for (std::size_t i = 0; i < m; ++i) violation = std::max(violation, std::abs(rows[i] - a[i]));
  for (std::size_t j = 0; j < n; ++j) violation = std::max(violation, std::abs(cols[j] - b[j]));
  plan.marginal_violation = violation;
  plan.cost_value = total > 0.0 ? weighted / total : 0.0;
  return plan;
}

MatrixD patch_cost_matrix(const Matrix& query_patches, const Matrix& gallery_patches) {
  if (query_patches.cols() != gallery_patches.cols()) {
    throw ShapeError("patch_cost_matrix: dims " + std::to_string(query_patches.cols()) + " and " +
                     std::to_string(gallery_patches.cols()));
  }
  auto norms = [](const Matrix& m) {
    std::vector<double> out(m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (float v : m.row(i)) s += static_cast<double>(v) * v;
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const auto nq = norms(query_patches);
  const auto ng = norms(gallery_patches);
  MatrixD cost(query_patches.rows(), gallery_patches.rows());
  for (std::size_t i = 0; i < query_patches.rows(); ++i) {
    auto q = query_patches.row(i);
    for (std::size_t j = 0; j < gallery_patches.rows(); ++j) {
      auto g = gallery_patches.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < q.size(); ++c) dot += static_cast<double>(q[c]) * g[c];
      const double denom = nq[i] * ng[j];
      // Zero patches are equidistant from everything.
      cost(i, j) = denom > 0.0 ? std::clamp(1.0 - dot / denom, 0.0, 2.0) : 1.0;
    }
  }
  return cost;
}

double emd_distance(const Matrix& query_patches, const Matrix& gallery_patches,
                    const SinkhornParams& params) {
  if (query_patches.rows() == 0 || gallery_patches.rows() == 0) return kDegenerateEmd;
  CorrelationWeights w = correlation_weights(query_patches, gallery_patches);
  if (!(sum(w.query) > 0.0) || !(sum(w.gallery) > 0.0)) return kDegenerateEmd;
  TransportProblem problem{patch_cost_matrix(query_patches, gallery_patches), std::move(w.query),
                           std::move(w.gallery)};
  return sinkhorn_solve(problem, params).cost_value;
}

double combined_distance(double d_cos, double d_emd, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("combined_distance: alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return (1.0 - alpha) * d_cos + alpha * d_emd;
}

namespace {

struct Stage1 {
  std::vector<double> d_cos;
  std::vector<std::size_t> order;  // all positions by (d_cos, position)
};

Stage1 cosine_order(const EncodedFeature& query, const GalleryMemory& memory) {
  Stage1 s;
  s.d_cos.resize(memory.size());
  for (std::size_t i = 0; i < memory.size(); ++i) s.d_cos[i] = cosine_distance(query.cls, memory[i].cls);
  s.order.resize(memory.size());
  std::iota(s.order.begin(), s.order.end(), 0);
  std::stable_sort(s.order.begin(), s.order.end(),
                   [&](std::size_t a, std::size_t b) { return s.d_cos[a] < s.d_cos[b]; });
  return s;
}

RankList rank_shortlist(const EncodedFeature& query, const GalleryMemory& memory,
                        const RankOptions& opts, const Stage1& s1) {
  combined_distance(0.0, 0.0, opts.alpha);  // validates alpha
  RankList list;
  list.shortlist_size = std::min(opts.shortlist, memory.size());
  list.k = std::min(opts.k, list.shortlist_size);
  list.candidates.reserve(list.shortlist_size);
  for (std::size_t r = 0; r < list.shortlist_size; ++r) {
    const std::size_t pos = s1.order[r];
    RankedCandidate c;
    c.gallery_position = pos;
    c.d_cos = s1.d_cos[pos];
    c.d_emd = emd_distance(query.patches, memory[pos].patches, opts.sinkhorn);
    c.d_combined = combined_distance(c.d_cos, c.d_emd, opts.alpha);
    list.candidates.push_back(c);
  }
  std::sort(list.candidates.begin(), list.candidates.end(),
            [](const RankedCandidate& a, const RankedCandidate& b) {
              if (a.d_combined != b.d_combined) return a.d_combined < b.d_combined;
              return a.gallery_position < b.gallery_position;
            });
  return list;
}

void check_query(const EncodedFeature& query, const GalleryMemory& memory) {
  if (memory.empty()) throw InputError("rank: gallery memory is empty");
  if (query.cls.size() != memory.dim() || query.patches.cols() != memory.dim()) {
    throw ShapeError("rank: query dim " + std::to_string(query.cls.size()) + " != gallery dim " +
                     std::to_string(memory.dim()));
  }
}

}  // namespace

RankList rank(const EncodedFeature& query, const GalleryMemory& memory, const RankOptions& opts) {
  check_query(query, memory);
  RankList list = rank_shortlist(query, memory, opts, cosine_order(query, memory));
  list.candidates.resize(list.k);
  return list;
}

FullRanking rank_full(const EncodedFeature& query, const GalleryMemory& memory,
                      const RankOptions& opts) {
  check_query(query, memory);
  const Stage1 s1 = cosine_order(query, memory);
  FullRanking out;
  out.shortlist = rank_shortlist(query, memory, opts, s1);
  out.shortlist.k = out.shortlist.shortlist_size;
  out.order.reserve(memory.size());
  for (const auto& c : out.shortlist.candidates) out.order.push_back(c.gallery_position);
  for (std::size_t r = out.shortlist.shortlist_size; r < s1.order.size(); ++r)
    out.order.push_back(s1.order[r]);
  return out;
}

}  // namespace fpc
