#pragma once

// Feature consolidation: a single pre-norm transformer layer that attends
// from the averaged [cls] token over the query's surviving patches and the
// full patch sets of its K gallery neighbors.

#include <cstdint>
#include <vector>

#include "fpc/encoder.hpp"
#include "fpc/gallery.hpp"

namespace fpc {

/// Token sequence [mean cls | query patches | neighbor 1 | ... | neighbor K].
/// block_offsets holds K + 3 boundaries: 0, 1, 1 + M, 1 + M + N, ..., total.
struct MultiViewFeature {
  Vector mean_cls;
  Matrix tokens;
  std::vector<std::size_t> block_offsets;

  std::size_t query_patch_count() const { return block_offsets[2] - block_offsets[1]; }
  std::size_t neighbor_count() const { return block_offsets.size() - 3; }
};

MultiViewFeature assemble_multiview(const EncodedFeature& query,
                                    const std::vector<const GalleryRecord*>& neighbors);

struct DecoderWeights {
  std::size_t heads = 12;
  TransformerLayerWeights layer;
  Vector final_ln_gain, final_ln_bias;

  bool operator==(const DecoderWeights&) const;
};

DecoderWeights init_decoder_weights(std::size_t dim, std::size_t mlp_dim, std::size_t heads,
                                    std::uint64_t seed);

/// Consolidated [cls] vector: position-0 output of the decoder layer after
/// the final layer norm. No positional terms are added inside the decoder.
Vector decode(const MultiViewFeature& fm, const DecoderWeights& w);

struct DecompositionReport {
  Vector term_cls, term_query, term_gallery;  // pre-output-projection A'V pieces
  double mass_cls = 0.0;
  double mass_query = 0.0;
  std::vector<double> mass_neighbors;  // one per neighbor block
};

/// Splits the head-concatenated [cls] attention output over the three blocks.
/// Masses are head-averaged attention probability per block.
DecompositionReport decompose_cls_attention(const MultiViewFeature& fm, const DecoderWeights& w);

}  // namespace fpc
