#include "fpc/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpc/random.hpp"

namespace fpc {

std::string to_string(DropStrategy s) {
  switch (s) {
    case DropStrategy::kNonSalient: return "non-salient";
    case DropStrategy::kRandom: return "random";
    case DropStrategy::kSalient: return "salient";
  }
  return "?";
}

DropStrategy parse_drop_strategy(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "non-salient") return DropStrategy::kNonSalient;
  if (n == "random") return DropStrategy::kRandom;
  if (n == "salient") return DropStrategy::kSalient;
  throw ConfigError("unknown drop strategy '" + name + "'");
}

void EncoderConfig::validate() const {
  if (channels == 0 || embed_dim == 0 || mlp_dim == 0 || layers == 0 || stride == 0 ||
      patch_size == 0) {
    throw ConfigError("encoder config: sizes must be positive");
  }
  if (image_h < patch_size || image_w < patch_size) {
    throw ConfigError("encoder config: image smaller than a patch, got " +
                      std::to_string(image_h) + "x" + std::to_string(image_w) + ", P=" +
                      std::to_string(patch_size) + ", S=" + std::to_string(stride));
  }
  if (heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("encoder config: embed_dim " + std::to_string(embed_dim) +
                      " not divisible by heads " + std::to_string(heads));
  }
  for (std::size_t l : sparsify_layers) {
    if (l < 1 || l > layers) {
      throw ConfigError("encoder config: sparsify layer " + std::to_string(l) + " outside [1, " +
                        std::to_string(layers) + "]");
    }
  }
  if (!(keep_rate > 0.0 && keep_rate <= 1.0)) {
    throw ConfigError("encoder config: keep rate must lie in (0, 1], got " +
                      std::to_string(keep_rate));
  }
  if (num_cameras == 0) throw ConfigError("encoder config: num_cameras must be positive");
}

bool EncoderWeights::operator==(const EncoderWeights& o) const {
  auto layer_eq = [](const TransformerLayerWeights& a, const TransformerLayerWeights& b) {
    return a.ln1_gain == b.ln1_gain && a.ln1_bias == b.ln1_bias && a.attn.wq == b.attn.wq &&
           a.attn.wk == b.attn.wk && a.attn.wv == b.attn.wv && a.attn.wo == b.attn.wo &&
           a.attn.bq == b.attn.bq && a.attn.bk == b.attn.bk && a.attn.bv == b.attn.bv &&
           a.attn.bo == b.attn.bo && a.ln2_gain == b.ln2_gain && a.ln2_bias == b.ln2_bias &&
           a.mlp_w1 == b.mlp_w1 && a.mlp_b1 == b.mlp_b1 && a.mlp_w2 == b.mlp_w2 &&
           a.mlp_b2 == b.mlp_b2;
  };
  return patch_proj == o.patch_proj && patch_bias == o.patch_bias && cls_token == o.cls_token &&
         pos_embed == o.pos_embed && camera_embed == o.camera_embed &&
         final_ln_gain == o.final_ln_gain && final_ln_bias == o.final_ln_bias &&
         std::equal(layers.begin(), layers.end(), o.layers.begin(), o.layers.end(), layer_eq);
}

namespace {

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng, double stddev) {
  Matrix m(r, c);
  fill_normal(m.data(), rng, stddev);
  return m;
}

Vector gaussian(std::size_t n, Rng& rng, double stddev) {
  Vector v(n);
  fill_normal(std::span<float>(v), rng, stddev);
  return v;
}

void expect_shape(const Matrix& m, std::size_t r, std::size_t c, const char* name) {
  if (m.rows() != r || m.cols() != c) {
    throw ShapeError(std::string("encoder weights: ") + name + " is " + std::to_string(m.rows()) +
                     "x" + std::to_string(m.cols()) + ", expected " + std::to_string(r) + "x" +
                     std::to_string(c));
  }
}

void expect_len(const Vector& v, std::size_t n, const char* name) {
  if (v.size() != n) {
    throw ShapeError(std::string("encoder weights: ") + name + " has length " +
                     std::to_string(v.size()) + ", expected " + std::to_string(n));
  }
}

Matrix add_residual(Matrix x, const Matrix& delta) {
  auto dst = x.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return x;
}

Vector final_cls(const Matrix& normed) { return {normed.row(0).begin(), normed.row(0).end()}; }

Matrix patch_rows(const Matrix& normed) {
  Matrix p(normed.rows() - 1, normed.cols());
  std::copy(normed.data().begin() + static_cast<std::ptrdiff_t>(normed.cols()),
            normed.data().end(), p.data().begin());
  return p;
}

}  // namespace

EncoderWeights init_encoder_weights(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.embed_dim;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double table_std = 0.02;

  EncoderWeights w;
  w.patch_proj = gaussian(cfg.patch_dim(), d, rng, proj_std);
  w.patch_bias = Vector(d, 0.0f);
  w.cls_token = gaussian(d, rng, table_std);
  w.pos_embed = gaussian(cfg.patch_count() + 1, d, rng, table_std);
  w.camera_embed = gaussian(cfg.num_cameras, d, rng, table_std);
  w.layers.resize(cfg.layers);
  for (auto& l : w.layers) {
    l.ln1_gain = Vector(d, 1.0f);
    l.ln1_bias = Vector(d, 0.0f);
    l.attn.wq = gaussian(d, d, rng, proj_std);
    l.attn.wk = gaussian(d, d, rng, proj_std);
    l.attn.wv = gaussian(d, d, rng, proj_std);
    l.attn.wo = gaussian(d, d, rng, proj_std);
    l.attn.bq = l.attn.bk = l.attn.bv = l.attn.bo = Vector(d, 0.0f);
    l.ln2_gain = Vector(d, 1.0f);
    l.ln2_bias = Vector(d, 0.0f);
    l.mlp_w1 = gaussian(d, cfg.mlp_dim, rng, proj_std);
    l.mlp_b1 = Vector(cfg.mlp_dim, 0.0f);
    l.mlp_w2 = gaussian(cfg.mlp_dim, d, rng, proj_std);
    l.mlp_b2 = Vector(d, 0.0f);
  }
  w.final_ln_gain = Vector(d, 1.0f);
  w.final_ln_bias = Vector(d, 0.0f);
  return w;
}

void check_encoder_weights(const EncoderConfig& cfg, const EncoderWeights& w) {
  const std::size_t d = cfg.embed_dim;
  expect_shape(w.patch_proj, cfg.patch_dim(), d, "patch_proj");
  expect_len(w.patch_bias, d, "patch_bias");
  expect_len(w.cls_token, d, "cls_token");
  expect_shape(w.pos_embed, cfg.patch_count() + 1, d, "pos_embed");
  expect_shape(w.camera_embed, cfg.num_cameras, d, "camera_embed");
  if (w.layers.size() != cfg.layers) {
    throw ShapeError("encoder weights: " + std::to_string(w.layers.size()) + " layers, expected " +
                     std::to_string(cfg.layers));
  }
  for (const auto& l : w.layers) {
    expect_len(l.ln1_gain, d, "ln1_gain");
    expect_len(l.ln1_bias, d, "ln1_bias");
    expect_shape(l.attn.wq, d, d, "wq");
    expect_shape(l.attn.wk, d, d, "wk");
    expect_shape(l.attn.wv, d, d, "wv");
    expect_shape(l.attn.wo, d, d, "wo");
    expect_len(l.attn.bq, d, "bq");
    expect_len(l.attn.bk, d, "bk");
    expect_len(l.attn.bv, d, "bv");
    expect_len(l.attn.bo, d, "bo");
    expect_len(l.ln2_gain, d, "ln2_gain");
    expect_len(l.ln2_bias, d, "ln2_bias");
    expect_shape(l.mlp_w1, d, cfg.mlp_dim, "mlp_w1");
    expect_len(l.mlp_b1, cfg.mlp_dim, "mlp_b1");
    expect_shape(l.mlp_w2, cfg.mlp_dim, d, "mlp_w2");
    expect_len(l.mlp_b2, d, "mlp_b2");
  }
  expect_len(w.final_ln_gain, d, "final_ln_gain");
  expect_len(w.final_ln_bias, d, "final_ln_bias");
}

TokenSequence embed_image(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                          const EncoderWeights& w) {
  if (image.height != cfg.image_h || image.width != cfg.image_w ||
      image.channels != cfg.channels ||
      image.pixels.size() != image.height * image.width * image.channels) {
    throw ShapeError("embed_image: image is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels) +
                     ", expected " + std::to_string(cfg.image_h) + "x" +
                     std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels));
  }
  if (camera_id >= cfg.num_cameras) {
    throw InputError("embed_image: camera id " + std::to_string(camera_id) + " >= " +
                     std::to_string(cfg.num_cameras) + " cameras");
  }
  const std::size_t n = cfg.patch_count();
  const std::size_t p = cfg.patch_size;

  // Patch vectors flattened channel-major: (c, dy, dx).
  Matrix patches(n, cfg.patch_dim());
  for (std::size_t gr = 0; gr < cfg.grid_rows(); ++gr) {
    for (std::size_t gc = 0; gc < cfg.grid_cols(); ++gc) {
      float* dst = patches.row(gr * cfg.grid_cols() + gc).data();
      const std::size_t y0 = gr * cfg.stride;
      const std::size_t x0 = gc * cfg.stride;
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t dy = 0; dy < p; ++dy)
          for (std::size_t dx = 0; dx < p; ++dx) *dst++ = image.at(y0 + dy, x0 + dx, c);
    }
  }
  const Matrix projected = linear(patches, w.patch_proj, w.patch_bias);

  TokenSequence seq;
  seq.camera_id = camera_id;
  seq.kept_patch_indices.resize(n);
  std::iota(seq.kept_patch_indices.begin(), seq.kept_patch_indices.end(), 0);
  seq.tokens = Matrix(n + 1, cfg.embed_dim);
  auto cam = w.camera_embed.row(camera_id);
  for (std::size_t t = 0; t <= n; ++t) {
    auto dst = seq.tokens.row(t);
    auto src = t == 0 ? std::span<const float>(w.cls_token) : projected.row(t - 1);
    auto pos = w.pos_embed.row(t);
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = src[j] + pos[j] + cfg.camera_scale * cam[j];
    }
  }
  return seq;
}

Vector mean_cls_attention(const AttentionOutput& att) {
  const auto& rows = att.cls_attention_per_head;
  if (rows.empty()) throw ConfigError("mean_cls_attention: no heads");
  const std::size_t t = rows.front().size();
  Vector scores(t > 0 ? t - 1 : 0, 0.0f);
  const float inv = 1.0f / static_cast<float>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 1; j < t; ++j) scores[j - 1] += inv * r[j];
  }
  return scores;
}

std::size_t keep_count(double keep_rate, std::size_t n) {
  // Guard against 0.8 * 210 = 168.00000000000003 rounding up.
  const double raw = keep_rate * static_cast<double>(n);
  const double nearest = std::round(raw);
  const double k = std::abs(raw - nearest) < 1e-9 ? nearest : std::ceil(raw);
  return std::min(n, static_cast<std::size_t>(k));
}

std::vector<std::size_t> select_kept(std::span<const float> scores, double keep_rate,
                                     DropStrategy strategy, std::uint64_t layer_seed) {
  const std::size_t n = scores.size();
  const std::size_t k = keep_count(keep_rate, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  switch (strategy) {
    case DropStrategy::kNonSalient:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      break;
    case DropStrategy::kSalient:
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
      break;
    case DropStrategy::kRandom: {
      Rng rng(layer_seed);
      std::shuffle(order.begin(), order.end(), rng);
      break;
    }
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

BlockOutput transformer_block(const Matrix& x, const TransformerLayerWeights& w,
                              std::size_t heads) {
  BlockOutput out;
  out.attention = multi_head_attention(layer_norm(x, w.ln1_gain, w.ln1_bias), w.attn, heads);
  Matrix h = add_residual(x, out.attention.tokens_out);
  Matrix hidden = linear(layer_norm(h, w.ln2_gain, w.ln2_bias), w.mlp_w1, w.mlp_b1);
  for (auto& v : hidden.data()) v = gelu(v);
  out.tokens = add_residual(std::move(h), linear(hidden, w.mlp_w2, w.mlp_b2));
  return out;
}

EncodedFeature encode(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                      const EncoderWeights& w) {
  cfg.validate();
  TokenSequence seq = embed_image(image, camera_id, cfg, w);
  const std::size_t n = cfg.patch_count();

  EncodedFeature feat;
  Matrix x = std::move(seq.tokens);
  std::vector<std::size_t>& kept = seq.kept_patch_indices;

  for (std::size_t layer = 1; layer <= cfg.layers; ++layer) {
    feat.tokens_per_layer.push_back(x.rows());
    BlockOutput block = transformer_block(x, w.layers[layer - 1], cfg.heads);
    x = std::move(block.tokens);
    if (!cfg.sparsify_layers.contains(layer)) continue;

    const Vector scores = mean_cls_attention(block.attention);
    const auto survivors =
        select_kept(scores, cfg.keep_rate, cfg.strategy, mix_seed(cfg.drop_seed, layer));

    Matrix next(survivors.size() + 1, x.cols());
    std::copy(x.row(0).begin(), x.row(0).end(), next.row(0).begin());
    std::vector<std::size_t> next_kept(survivors.size());
    for (std::size_t i = 0; i < survivors.size(); ++i) {
      auto src = x.row(survivors[i] + 1);
      std::copy(src.begin(), src.end(), next.row(i + 1).begin());
      next_kept[i] = kept[survivors[i]];
    }
    x = std::move(next);
    kept = std::move(next_kept);

    std::vector<bool> mask(n, false);
    for (std::size_t idx : kept) mask[idx] = true;
    feat.kept_masks.push_back(std::move(mask));
  }

  const Matrix normed = layer_norm(x, w.final_ln_gain, w.final_ln_bias);
  feat.cls = final_cls(normed);
  feat.patches = patch_rows(normed);
  feat.kept_patch_indices = std::move(kept);
  feat.flops = count_flops(cfg.dims(), feat.tokens_per_layer);
  return feat;
}

EncodedFeature encode_dense(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                            const EncoderWeights& w) {
  cfg.validate();
  TokenSequence seq = embed_image(image, camera_id, cfg, w);
  Matrix x = std::move(seq.tokens);
  EncodedFeature feat;
  for (const auto& layer : w.layers) {
    feat.tokens_per_layer.push_back(x.rows());
    x = transformer_block(x, layer, cfg.heads).tokens;
  }
  const Matrix normed = layer_norm(x, w.final_ln_gain, w.final_ln_bias);
  feat.cls = final_cls(normed);
  feat.patches = patch_rows(normed);
  feat.kept_patch_indices = std::move(seq.kept_patch_indices);
  feat.flops = count_flops(cfg.dims(), feat.tokens_per_layer);
  return feat;
}

std::vector<std::size_t> token_schedule(const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> counts;
  std::size_t patches = cfg.patch_count();
  for (std::size_t layer = 1; layer <= cfg.layers; ++layer) {
    counts.push_back(patches + 1);
    if (cfg.sparsify_layers.contains(layer)) patches = keep_count(cfg.keep_rate, patches);
  }
  return counts;
}

}  // namespace fpc
