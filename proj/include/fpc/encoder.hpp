#pragma once

// Vision-transformer encoder with attention-driven token sparsification.
//
// Patches are extracted with an overlapping P x S grid, projected, and a
// learnable [cls] token is prepended. Positional and (scaled) camera
// embeddings are added once. After each configured layer, patch tokens are
// ranked by the head-averaged [cls] attention row of that layer and only
// ceil(keep_rate * N_c) of them go on to the next layer.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fpc/tensor.hpp"

namespace fpc {

enum class DropStrategy {
  kNonSalient,  // keep the most attended patches
  kRandom,      // keep a seeded uniform sample
  kSalient,     // keep the least attended patches
};

std::string to_string(DropStrategy s);
/// Accepts "non-salient", "random", "salient" (underscores allowed).
DropStrategy parse_drop_strategy(const std::string& name);

struct EncoderConfig {
  std::size_t image_h = 256;
  std::size_t image_w = 128;
  std::size_t channels = 3;
  std::size_t patch_size = 16;
  std::size_t stride = 12;
  std::size_t embed_dim = 768;
  std::size_t mlp_dim = 3072;
  std::size_t layers = 12;
  std::size_t heads = 12;
  std::set<std::size_t> sparsify_layers = {3, 6, 9};  // 1-based
  double keep_rate = 0.8;
  DropStrategy strategy = DropStrategy::kNonSalient;
  std::uint64_t drop_seed = 0;  // only used by kRandom
  std::size_t num_cameras = 8;
  float camera_scale = 1.0f;

  void validate() const;  // throws ConfigError

  std::size_t grid_rows() const { return (image_h - patch_size) / stride + 1; }
  std::size_t grid_cols() const { return (image_w - patch_size) / stride + 1; }
  std::size_t patch_count() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  TransformerDims dims() const { return {layers, embed_dim, mlp_dim}; }
};

/// Float image, row-major HWC.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

struct TransformerLayerWeights {
  Vector ln1_gain, ln1_bias;
  AttentionWeights attn;
  Vector ln2_gain, ln2_bias;
  Matrix mlp_w1;  // D x D_mlp
  Vector mlp_b1;
  Matrix mlp_w2;  // D_mlp x D
  Vector mlp_b2;
};

struct EncoderWeights {
  Matrix patch_proj;   // patch_dim x D
  Vector patch_bias;   // D
  Vector cls_token;    // D
  Matrix pos_embed;    // (N+1) x D
  Matrix camera_embed; // num_cameras x D
  std::vector<TransformerLayerWeights> layers;
  Vector final_ln_gain, final_ln_bias;

  bool operator==(const EncoderWeights&) const;
};

struct TokenSequence {
  Matrix tokens;  // row 0 is [cls]
  std::vector<std::size_t> kept_patch_indices;
  std::size_t camera_id = 0;
};

struct EncodedFeature {
  Vector cls;
  Matrix patches;
  std::vector<std::size_t> kept_patch_indices;  // final survivors, ascending
  std::vector<std::vector<bool>> kept_masks;    // one per sparsify layer, over the full grid
  std::vector<std::size_t> tokens_per_layer;    // input token count of each layer ([cls] included)
  FlopsReport flops;
};

/// Seeded initialization: projections N(0, 1/D), tables N(0, 0.02^2),
/// layer-norm gains 1, biases 0.
EncoderWeights init_encoder_weights(const EncoderConfig& cfg, std::uint64_t seed);

/// Throws ShapeError when tensor shapes disagree with cfg.
void check_encoder_weights(const EncoderConfig& cfg, const EncoderWeights& w);

TokenSequence embed_image(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                          const EncoderWeights& w);

/// Head-averaged [cls] attention with the cls-to-cls entry removed.
Vector mean_cls_attention(const AttentionOutput& att);

std::size_t keep_count(double keep_rate, std::size_t n);

/// Indices (into `scores`) to keep, ascending. Ties go to the lower index.
std::vector<std::size_t> select_kept(std::span<const float> scores, double keep_rate,
                                     DropStrategy strategy, std::uint64_t layer_seed);

/// Pre-norm block: x + MHA(LN1 x), then + MLP(LN2 x).
struct BlockOutput {
  Matrix tokens;
  AttentionOutput attention;
};
BlockOutput transformer_block(const Matrix& x, const TransformerLayerWeights& w, std::size_t heads);

EncodedFeature encode(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                      const EncoderWeights& w);

/// Reference run of every layer with no sparsification logic at all.
EncodedFeature encode_dense(const Image& image, std::size_t camera_id, const EncoderConfig& cfg,
                            const EncoderWeights& w);

/// Token counts per layer implied by cfg ([cls] included), without running the network.
std::vector<std::size_t> token_schedule(const EncoderConfig& cfg);

}  // namespace fpc
