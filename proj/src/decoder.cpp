#include "fpc/decoder.hpp"

#include <cmath>

#include "fpc/random.hpp"

namespace fpc {

MultiViewFeature assemble_multiview(const EncodedFeature& query,
                                    const std::vector<const GalleryRecord*>& neighbors) {
  const std::size_t d = query.cls.size();
  if (query.patches.rows() > 0 && query.patches.cols() != d) {
    throw ShapeError("assemble_multiview: query patch dim " + std::to_string(query.patches.cols()) +
                     " != cls dim " + std::to_string(d));
  }
  std::size_t total = 1 + query.patches.rows();
  for (const auto* nb : neighbors) {
    if (nb->cls.size() != d || nb->patches.cols() != d) {
      throw ShapeError("assemble_multiview: neighbor dim does not match query dim " +
                       std::to_string(d));
    }
    total += nb->patches.rows();
  }

  MultiViewFeature fm;
  fm.mean_cls.assign(d, 0.0f);
  // Accumulate in double, in rank order.
  std::vector<double> acc(query.cls.begin(), query.cls.end());
  for (const auto* nb : neighbors)
    for (std::size_t j = 0; j < d; ++j) acc[j] += nb->cls[j];
  const double inv = 1.0 / static_cast<double>(neighbors.size() + 1);
  for (std::size_t j = 0; j < d; ++j) fm.mean_cls[j] = static_cast<float>(acc[j] * inv);

  fm.tokens = Matrix(total, d);
  std::copy(fm.mean_cls.begin(), fm.mean_cls.end(), fm.tokens.row(0).begin());
  std::size_t at = 1;
  fm.block_offsets = {0, 1};
  auto append = [&](const Matrix& block) {
    std::copy(block.data().begin(), block.data().end(), fm.tokens.row(at).begin());
    at += block.rows();
    fm.block_offsets.push_back(at);
  };
  append(query.patches);
  for (const auto* nb : neighbors) append(nb->patches);
  return fm;
}

bool DecoderWeights::operator==(const DecoderWeights& o) const {
  const auto& a = layer;
  const auto& b = o.layer;
  return heads == o.heads && a.ln1_gain == b.ln1_gain && a.ln1_bias == b.ln1_bias &&
         a.attn.wq == b.attn.wq && a.attn.wk == b.attn.wk && a.attn.wv == b.attn.wv &&
         a.attn.wo == b.attn.wo && a.attn.bq == b.attn.bq && a.attn.bk == b.attn.bk &&
         a.attn.bv == b.attn.bv && a.attn.bo == b.attn.bo && a.ln2_gain == b.ln2_gain &&
         a.ln2_bias == b.ln2_bias && a.mlp_w1 == b.mlp_w1 && a.mlp_b1 == b.mlp_b1 &&
         a.mlp_w2 == b.mlp_w2 && a.mlp_b2 == b.mlp_b2 && final_ln_gain == o.final_ln_gain &&
         final_ln_bias == o.final_ln_bias;
}

DecoderWeights init_decoder_weights(std::size_t dim, std::size_t mlp_dim, std::size_t heads,
                                    std::uint64_t seed) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("decoder: dim " + std::to_string(dim) + " not divisible by heads " +
                      std::to_string(heads));
  }
  Rng rng(seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(dim));
  auto gaussian = [&](std::size_t r, std::size_t c) {
    Matrix m(r, c);
    fill_normal(m.data(), rng, stddev);
    return m;
  };
  DecoderWeights w;
  w.heads = heads;
  auto& l = w.layer;
  l.ln1_gain = l.ln2_gain = w.final_ln_gain = Vector(dim, 1.0f);
  l.ln1_bias = l.ln2_bias = w.final_ln_bias = Vector(dim, 0.0f);
  l.attn.wq = gaussian(dim, dim);
  l.attn.wk = gaussian(dim, dim);
  l.attn.wv = gaussian(dim, dim);
  l.attn.wo = gaussian(dim, dim);
  l.attn.bq = l.attn.bk = l.attn.bv = l.attn.bo = Vector(dim, 0.0f);
  l.mlp_w1 = gaussian(dim, mlp_dim);
  l.mlp_b1 = Vector(mlp_dim, 0.0f);
  l.mlp_w2 = gaussian(mlp_dim, dim);
  l.mlp_b2 = Vector(dim, 0.0f);
  return w;
}

namespace {

// Attention of the position-0 query over every token; only the row that
// decode() consumes is computed.
struct ClsAttention {
  std::vector<Vector> probs;  // per head, length T
  Matrix values;              // T x D
  Vector context;             // D, head-concatenated
};

ClsAttention cls_attention(const MultiViewFeature& fm, const DecoderWeights& w) {
  const std::size_t t = fm.tokens.rows();
  const std::size_t dm = fm.tokens.cols();
  if (w.heads == 0 || dm % w.heads != 0) {
    throw ConfigError("decoder: dim " + std::to_string(dm) + " not divisible by heads " +
                      std::to_string(w.heads));
  }
  const auto& l = w.layer;
  const Matrix h = layer_norm(fm.tokens, l.ln1_gain, l.ln1_bias);
  Matrix h0(1, dm);
  std::copy(h.row(0).begin(), h.row(0).end(), h0.row(0).begin());
  const Matrix q = linear(h0, l.attn.wq, l.attn.bq);
  const Matrix k = linear(h, l.attn.wk, l.attn.bk);

  ClsAttention out;
  out.values = linear(h, l.attn.wv, l.attn.bv);
  out.context.assign(dm, 0.0f);
  const std::size_t d = dm / w.heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  Matrix scores(1, t);
  for (std::size_t hd = 0; hd < w.heads; ++hd) {
    const std::size_t off = hd * d;
    for (std::size_t j = 0; j < t; ++j) {
      float s = 0.0f;
      for (std::size_t c = 0; c < d; ++c) s += q(0, off + c) * k(j, off + c);
      scores(0, j) = s * scale;
    }
    const Matrix p = softmax_rows(scores);
    for (std::size_t j = 0; j < t; ++j) {
      for (std::size_t c = 0; c < d; ++c) out.context[off + c] += p(0, j) * out.values(j, off + c);
    }
    out.probs.emplace_back(p.data().begin(), p.data().end());
  }
  return out;
}

}  // namespace

Vector decode(const MultiViewFeature& fm, const DecoderWeights& w) {
  const auto& l = w.layer;
  const ClsAttention att = cls_attention(fm, w);
  Matrix ctx(1, att.context.size(), att.context);
  Matrix x = linear(ctx, l.attn.wo, l.attn.bo);
  for (std::size_t j = 0; j < x.cols(); ++j) x(0, j) += fm.tokens(0, j);

  Matrix hidden = linear(layer_norm(x, l.ln2_gain, l.ln2_bias), l.mlp_w1, l.mlp_b1);
  for (auto& v : hidden.data()) v = gelu(v);
  const Matrix mlp = linear(hidden, l.mlp_w2, l.mlp_b2);
  for (std::size_t j = 0; j < x.cols(); ++j) x(0, j) += mlp(0, j);

  const Matrix out = layer_norm(x, w.final_ln_gain, w.final_ln_bias);
  return {out.row(0).begin(), out.row(0).end()};
}

DecompositionReport decompose_cls_attention(const MultiViewFeature& fm, const DecoderWeights& w) {
  const ClsAttention att = cls_attention(fm, w);
  const std::size_t dm = fm.tokens.cols();
  const std::size_t d = dm / w.heads;
  const auto& off = fm.block_offsets;

  auto block_term = [&](std::size_t begin, std::size_t end) {
    Vector term(dm, 0.0f);
    for (std::size_t hd = 0; hd < w.heads; ++hd) {
      for (std::size_t j = begin; j < end; ++j) {
        const float p = att.probs[hd][j];
        for (std::size_t c = 0; c < d; ++c) term[hd * d + c] += p * att.values(j, hd * d + c);
      }
    }
    return term;
  };
  auto block_mass = [&](std::size_t begin, std::size_t end) {
    double m = 0.0;
    for (const auto& p : att.probs)
      for (std::size_t j = begin; j < end; ++j) m += p[j];
    return m / static_cast<double>(att.probs.size());
  };

  DecompositionReport r;
  r.term_cls = block_term(off[0], off[1]);
  r.term_query = block_term(off[1], off[2]);
  r.term_gallery = block_term(off[2], off.back());
  r.mass_cls = block_mass(off[0], off[1]);
  r.mass_query = block_mass(off[1], off[2]);
  for (std::size_t b = 2; b + 1 < off.size(); ++b) r.mass_neighbors.push_back(block_mass(off[b], off[b + 1]));
  return r;
}

}  // namespace fpc
