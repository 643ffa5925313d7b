#pragma once

// Retrieval evaluation (CMC / mAP), the synthetic occlusion corpus, and
// parameter sweeps over keep rate, alpha, K and drop strategy.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fpc/gallery.hpp"
#include "fpc/image_io.hpp"
#include "fpc/matcher.hpp"
#include "fpc/model_io.hpp"

namespace fpc {

struct Identity {
  std::uint32_t person_id = 0;
  std::uint32_t camera_id = 0;
};

/// Relevance flags of a ranked gallery after dropping junk entries (same
/// person AND same camera as the query).
std::vector<bool> filter_matches(std::span<const Identity> ranked, Identity query);

/// Mean of precision@k over relevant positions; nullopt if nothing is relevant.
std::optional<double> average_precision(std::span<const bool> matches);
std::optional<double> average_precision(std::span<const Identity> ranked, Identity query);

/// cmc[r-1] = fraction of valid queries whose first match is at rank <= r.
/// Queries without any relevant entry are skipped.
std::vector<double> cmc_curve(const std::vector<std::vector<bool>>& per_query_matches,
                              std::size_t max_rank);

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticSpec {
  std::size_t identities = 20;
  std::size_t images_per_identity = 4;   // clean gallery images, distinct cameras
  std::size_t queries_per_identity = 1;  // occluded, on camera 0
  std::size_t image_h = 256;
  std::size_t image_w = 128;
  std::size_t patch_size = 16;
  std::size_t stride = 12;
  std::size_t num_cameras = 8;
  double occlusion_rate = 0.4;  // fraction of grid cells covered per query
  double noise = 0.05;          // query pixel noise std, as a fraction of 255
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t grid_rows() const { return (image_h - patch_size) / stride + 1; }
  std::size_t grid_cols() const { return (image_w - patch_size) / stride + 1; }
};

struct SyntheticImage {
  Rgb8Image image;
  std::uint32_t person_id = 0;
  std::uint32_t camera_id = 0;  // 0-based
  std::string filename;         // "<pid>_c<cam+1>_<n>.ppm"
  std::vector<bool> occluded_cells;  // over the patch grid; all false for gallery images
};

struct SyntheticCorpus {
  std::vector<SyntheticImage> gallery;
  std::vector<SyntheticImage> queries;
};

/// Pixel rectangle owned by grid cell (r, c): the stride tile at the patch
/// origin, with the last row/column extended to the image border. The cells
/// partition the image.
struct CellRect {
  std::size_t y0, y1, x0, x1;
};
CellRect cell_rect(std::size_t r, std::size_t c, std::size_t grid_rows, std::size_t grid_cols,
                   std::size_t stride, std::size_t image_h, std::size_t image_w);

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Writes gallery/ and query/ subdirectories of PPM files.
void write_synthetic(const SyntheticCorpus& corpus, const std::string& dir);

std::vector<LabeledImage> to_labeled(const std::vector<SyntheticImage>& images);

/// Reads every PPM in `dir`, resized to the config size, ids from filenames.
std::vector<LabeledImage> load_labeled_dir(const std::string& dir, const EncoderConfig& cfg);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  RankOptions rank;  // alpha, shortlist, k
  double keep_rate = 0.8;
  DropStrategy strategy = DropStrategy::kNonSalient;
  std::uint64_t drop_seed = 0;
  bool consolidate = false;
  std::size_t max_rank = 20;
};

struct QueryResult {
  std::size_t query_index = 0;
  Identity query;
  std::vector<std::size_t> ranking;        // full gallery order
  std::optional<double> ap;                // nullopt: no relevant gallery entry
  std::optional<std::size_t> first_match;  // 1-based filtered rank
  std::size_t kept_patches = 0;
  std::size_t neighbors_used = 0;
};

struct EvalReport {
  std::vector<double> cmc;
  double map = 0.0;
  std::vector<double> per_query_ap;  // valid queries only
  std::size_t valid_queries = 0;
  FlopsReport flops;        // encoder FLOPs of one query
  double flops_ratio = 1.0; // relative to the same encoder at keep rate 1.0
  EvalOptions options;
  std::vector<QueryResult> queries;

  double rank_at(std::size_t r) const { return r >= 1 && r <= cmc.size() ? cmc[r - 1] : (cmc.empty() ? 0.0 : cmc.back()); }
};

EvalReport evaluate(const std::vector<LabeledImage>& queries, const GalleryMemory& memory,
                    const ModelBundle& model, const EvalOptions& opts);

enum class SweepParam { kKeepRate, kAlpha, kK, kStrategy };
SweepParam parse_sweep_param(const std::string& name);
std::string to_string(SweepParam p);

/// Returns a copy of `base` with `param` set from its textual value.
EvalOptions apply_sweep_value(const EvalOptions& base, SweepParam param, const std::string& value);

struct SweepRow {
  std::string value;
  EvalReport report;
};

std::vector<SweepRow> sweep(SweepParam param, const std::vector<std::string>& values,
                            const std::vector<LabeledImage>& queries, const GalleryMemory& memory,
                            const ModelBundle& model, const EvalOptions& base);

struct FlopsRow {
  double keep_rate = 1.0;
  std::vector<std::size_t> tokens_per_layer;
  double total = 0.0;
  double ratio = 1.0;
};

/// Analytic encoder FLOPs per keep rate, relative to keep rate 1.0.
std::vector<FlopsRow> flops_sweep(const EncoderConfig& cfg, const std::vector<double>& keep_rates);

std::string format_eval_report(const EvalReport& r);
std::string format_sweep_table(SweepParam param, const std::vector<SweepRow>& rows);
std::string format_flops_table(const std::vector<FlopsRow>& rows);

/// One JSON object per line.
std::string eval_report_records(const EvalReport& r);
std::string sweep_records(SweepParam param, const std::vector<SweepRow>& rows);
std::string flops_records(const std::vector<FlopsRow>& rows);

}  // namespace fpc
