#pragma once

#include "fpc/encoder.hpp"
#include "fpc/model_io.hpp"
#include "oracles.hpp"

namespace fpc::testing {

/// 52x40 image, 4x3 grid, 4 layers pruning after 1..3.
inline EncoderConfig tiny_config() {
  EncoderConfig c;
  c.image_h = 52;
  c.image_w = 40;
  c.embed_dim = 16;
  c.mlp_dim = 32;
  c.layers = 4;
  c.heads = 2;
  c.sparsify_layers = {1, 2, 3};
  c.num_cameras = 4;
  return c;
}

/// Full 256x128 / 210-patch grid with a narrow network.
inline ModelConfig narrow_model_config() {
  ModelConfig m;
  m.encoder.embed_dim = 64;
  m.encoder.mlp_dim = 128;
  m.encoder.heads = 4;
  m.decoder_heads = 4;
  m.decoder_mlp_dim = 128;
  m.num_classes = 20;
  return m;
}

inline Image random_image(const EncoderConfig& c, Rng& rng) {
  Image img{c.image_h, c.image_w, c.channels, std::vector<float>(c.image_h * c.image_w * c.channels)};
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

}  // namespace fpc::testing
