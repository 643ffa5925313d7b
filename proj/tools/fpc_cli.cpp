// fpc: command-line front end for the pruning / matching / consolidation pipeline.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpc/decoder.hpp"
#include "fpc/error.hpp"
#include "fpc/eval.hpp"
#include "fpc/gallery.hpp"
#include "fpc/image_io.hpp"
#include "fpc/matcher.hpp"
#include "fpc/model_io.hpp"

namespace {

using namespace fpc;

struct PipelineFlags {
  double alpha = 0.4;
  std::size_t k = 10;
  std::size_t shortlist = 100;
  double keep_rate = 0.8;
  std::string strategy = "non-salient";
  std::uint64_t drop_seed = 0;
  bool consolidate = false;

  EvalOptions options() const {
    EvalOptions o;
    o.rank.alpha = alpha;
    o.rank.k = k;
    o.rank.shortlist = shortlist;
    o.keep_rate = keep_rate;
    o.strategy = parse_drop_strategy(strategy);
    o.drop_seed = drop_seed;
    o.consolidate = consolidate;
    return o;
  }
};

void add_pipeline_flags(CLI::App* cmd, PipelineFlags& f) {
  cmd->add_option("--alpha", f.alpha, "EMD weight in the combined distance")->capture_default_str();
  cmd->add_option("--k", f.k, "neighbors used for consolidation / results shown")->capture_default_str();
  cmd->add_option("--shortlist", f.shortlist, "cosine shortlist size")->capture_default_str();
  cmd->add_option("--keep-rate", f.keep_rate, "patch keep rate per sparsify layer")->capture_default_str();
  cmd->add_option("--strategy", f.strategy, "non-salient | random | salient")->capture_default_str();
  cmd->add_option("--drop-seed", f.drop_seed, "seed for random drop")->capture_default_str();
  cmd->add_flag("--consolidate", f.consolidate, "re-score the top-k with the consolidated [cls]");
}

// Camera ids are 1-based on the command line, as in file names.
std::uint32_t camera_index(std::uint32_t camera, const EncoderConfig& cfg) {
  if (camera == 0 || camera > cfg.num_cameras) {
    throw InputError("--camera must lie in 1.." + std::to_string(cfg.num_cameras));
  }
  return camera - 1;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out << text;
  if (!out) throw InputError("write failed: '" + path + "'");
}

std::vector<std::string> split_csv(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw InputError("--values is empty");
  return out;
}

// ---------------------------------------------------------------------------

void cmd_init_weights(const std::string& config_path, std::uint64_t seed, const std::string& out) {
  const ModelConfig cfg = config_path.empty() ? ModelConfig{} : load_model_config(config_path);
  save_model(init_model(cfg, seed), out);
  std::printf("wrote %s (D=%zu, layers=%zu, heads=%zu, classes=%zu)\n", out.c_str(),
              cfg.encoder.embed_dim, cfg.encoder.layers, cfg.encoder.heads, cfg.num_classes);
}

void cmd_gen_synthetic(const SyntheticSpec& spec, const std::string& out) {
  const SyntheticCorpus corpus = generate_synthetic(spec);
  write_synthetic(corpus, out);
  std::printf("wrote %zu gallery and %zu query images to %s\n", corpus.gallery.size(),
              corpus.queries.size(), out.c_str());
}

void cmd_build_gallery(const std::string& weights, const std::string& images, const std::string& out) {
  const ModelBundle model = load_model(weights);
  const auto labeled = load_labeled_dir(images, model.config.encoder);
  if (labeled.empty()) throw InputError("no .ppm images in '" + images + "'");
  const GalleryMemory memory = GalleryMemory::build(labeled, model.config.encoder, model.encoder);
  memory.save(out);
  std::printf("wrote %s (%zu records, %zu patches x %zu dims)\n", out.c_str(), memory.size(),
              memory.patch_count(), memory.dim());
}

void cmd_query(const std::string& weights, const std::string& gallery, const std::string& image_path,
               std::uint32_t camera, const PipelineFlags& flags, bool explain) {
  const ModelBundle model = load_model(weights);
  const GalleryMemory memory = GalleryMemory::load(gallery);
  const EvalOptions opts = flags.options();

  EncoderConfig cfg = model.config.encoder;
  cfg.keep_rate = opts.keep_rate;
  cfg.strategy = opts.strategy;
  cfg.drop_seed = opts.drop_seed;
  cfg.validate();
  const Image image = to_float_image(load_image(image_path, cfg.image_h, cfg.image_w));
  const EncodedFeature feat = encode(image, camera_index(camera, cfg), cfg, model.encoder);

  const RankList list = rank(feat, memory, opts.rank);
  std::vector<const GalleryRecord*> neighbors;
  for (const auto& c : list.candidates) neighbors.push_back(&memory[c.gallery_position]);

  std::vector<double> d_cons;
  std::vector<std::size_t> order(list.candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::optional<MultiViewFeature> fm;
  if (flags.consolidate || explain) fm = assemble_multiview(feat, neighbors);
  if (flags.consolidate) {
    const Vector x = decode(*fm, model.decoder);
    for (const auto* r : neighbors) d_cons.push_back(cosine_distance(x, r->cls));
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return d_cons[a] < d_cons[b]; });
  }

  std::printf("kept %zu of %zu patches; shortlist %zu\n", feat.patches.rows(), cfg.patch_count(),
              list.shortlist_size);
  std::printf("%4s %6s %5s %9s %9s %10s%s\n", "rank", "pid", "camid", "d_cos", "d_emd", "d_combined",
              flags.consolidate ? "     d_cons" : "");
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& c = list.candidates[order[r]];
    const auto& rec = memory[c.gallery_position];
    std::printf("%4zu %6u %5u %9.5f %9.5f %10.5f", r + 1, rec.person_id, rec.camera_id + 1, c.d_cos,
                c.d_emd, c.d_combined);
    if (flags.consolidate) std::printf(" %10.5f", d_cons[order[r]]);
    std::printf("\n");
  }

  if (explain) {
    const DecompositionReport rep = decompose_cls_attention(*fm, model.decoder);
    std::printf("attention mass: cls %.5f  query %.5f  neighbors %.5f\n", rep.mass_cls, rep.mass_query,
                1.0 - rep.mass_cls - rep.mass_query);
    for (std::size_t i = 0; i < rep.mass_neighbors.size(); ++i) {
      const auto& rec = *neighbors[i];
      std::printf("  neighbor %2zu pid %6u camid %3u mass %.5f\n", i + 1, rec.person_id,
                  rec.camera_id + 1, rep.mass_neighbors[i]);
    }
  }
}

void cmd_evaluate(const std::string& weights, const std::string& gallery, const std::string& queries,
                  const PipelineFlags& flags, const std::string& records) {
  const ModelBundle model = load_model(weights);
  const GalleryMemory memory = GalleryMemory::load(gallery);
  const auto labeled = load_labeled_dir(queries, model.config.encoder);
  const EvalReport report = evaluate(labeled, memory, model, flags.options());
  std::fputs(format_eval_report(report).c_str(), stdout);
  if (!records.empty()) write_text(records, eval_report_records(report));
}

void cmd_sweep(const std::string& param_name, const std::string& values_csv,
               const std::string& config_path, const std::string& weights, const std::string& gallery,
               const std::string& queries, const PipelineFlags& flags, const std::string& records) {
  const SweepParam param = parse_sweep_param(param_name);
  const auto values = split_csv(values_csv);
  const bool have_data = !gallery.empty() || !queries.empty();

  if (!have_data) {
    if (param != SweepParam::kKeepRate) {
      throw InputError("sweep over " + to_string(param) + " needs --weights, --gallery and --queries");
    }
    ModelConfig cfg;
    if (!weights.empty()) cfg = load_model(weights).config;
    else if (!config_path.empty()) cfg = load_model_config(config_path);
    std::vector<double> rates;
    for (const auto& v : values) {
      try {
        rates.push_back(std::stod(v));
      } catch (const std::logic_error&) {
        throw ConfigError("bad keep-rate value '" + v + "'");
      }
    }
    const auto rows = flops_sweep(cfg.encoder, rates);
    std::fputs(format_flops_table(rows).c_str(), stdout);
    if (!records.empty()) write_text(records, flops_records(rows));
    return;
  }

  if (weights.empty() || gallery.empty() || queries.empty()) {
    throw InputError("sweep needs all of --weights, --gallery and --queries");
  }
  const ModelBundle model = load_model(weights);
  const GalleryMemory memory = GalleryMemory::load(gallery);
  const auto labeled = load_labeled_dir(queries, model.config.encoder);
  const auto rows = sweep(param, values, labeled, memory, model, flags.options());
  std::fputs(format_sweep_table(param, rows).c_str(), stdout);
  if (!records.empty()) write_text(records, sweep_records(param, rows));
}

void cmd_visualize_drop(const std::string& weights, const std::string& image_path, std::uint32_t camera,
                        double keep_rate, const std::string& strategy, const std::string& prefix) {
  const ModelBundle model = load_model(weights);
  EncoderConfig cfg = model.config.encoder;
  cfg.keep_rate = keep_rate;
  cfg.strategy = parse_drop_strategy(strategy);
  cfg.validate();
  const Rgb8Image rgb = load_image(image_path, cfg.image_h, cfg.image_w);
  const EncodedFeature feat = encode(to_float_image(rgb), camera_index(camera, cfg), cfg, model.encoder);

  std::size_t i = 0;
  for (std::size_t layer : cfg.sparsify_layers) {
    const auto& mask = feat.kept_masks.at(i++);
    Rgb8Image overlay = rgb;
    for (std::size_t r = 0; r < cfg.grid_rows(); ++r) {
      for (std::size_t c = 0; c < cfg.grid_cols(); ++c) {
        if (mask[r * cfg.grid_cols() + c]) continue;
        const CellRect rect =
            cell_rect(r, c, cfg.grid_rows(), cfg.grid_cols(), cfg.stride, cfg.image_h, cfg.image_w);
        for (std::size_t y = rect.y0; y < rect.y1; ++y)
          for (std::size_t x = rect.x0; x < rect.x1; ++x)
            std::fill_n(&overlay.pixels[(y * overlay.width + x) * 3], 3, std::uint8_t{255});
      }
    }
    const std::string path = prefix + "_layer" + std::to_string(layer) + ".ppm";
    write_ppm(path, overlay);
    const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    std::printf("%s: %zu of %zu patches kept\n", path.c_str(), kept, mask.size());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occluded person re-identification with token pruning and feature consolidation", "fpc"};
  app.require_subcommand(1);

  std::string config_path, out, weights, gallery, images, queries, image, records, param, values;
  std::uint64_t seed = 0;
  std::uint32_t camera = 1;
  bool explain = false;
  PipelineFlags flags;
  SyntheticSpec spec;

  auto* init = app.add_subcommand("init-weights", "write seeded encoder, decoder and classifier weights");
  init->add_option("--config", config_path, "JSON model config (defaults: ViT-Base)")->check(CLI::ExistingFile);
  init->add_option("--seed", seed)->capture_default_str();
  init->add_option("--out", out)->required();

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic occlusion corpus");
  gen->add_option("--out", out)->required();
  gen->add_option("--ids", spec.identities)->capture_default_str();
  gen->add_option("--per-id", spec.images_per_identity, "gallery images per identity")->capture_default_str();
  gen->add_option("--queries-per-id", spec.queries_per_identity)->capture_default_str();
  gen->add_option("--occlusion-rate", spec.occlusion_rate)->capture_default_str();
  gen->add_option("--noise", spec.noise)->capture_default_str();
  gen->add_option("--cameras", spec.num_cameras)->capture_default_str();
  gen->add_option("--seed", spec.seed)->capture_default_str();

  auto* build = app.add_subcommand("build-gallery", "encode a directory of gallery images");
  build->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  build->add_option("--images", images)->required()->check(CLI::ExistingDirectory);
  build->add_option("--out", out)->required();

  auto* query = app.add_subcommand("query", "rank the gallery for one image");
  query->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  query->add_option("--gallery", gallery)->required()->check(CLI::ExistingFile);
  query->add_option("--image", image)->required()->check(CLI::ExistingFile);
  query->add_option("--camera", camera, "1-based camera id")->required();
  add_pipeline_flags(query, flags);
  query->add_flag("--explain", explain, "print decoder attention mass per neighbor");

  auto* eval = app.add_subcommand("evaluate", "CMC / mAP over a query directory");
  eval->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  eval->add_option("--gallery", gallery)->required()->check(CLI::ExistingFile);
  eval->add_option("--queries", queries)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--records", records, "write line-delimited JSON records here");
  add_pipeline_flags(eval, flags);

  auto* sw = app.add_subcommand("sweep", "evaluate over a list of parameter values");
  sw->add_option("--param", param, "keep-rate | alpha | k | strategy")->required();
  sw->add_option("--values", values, "comma-separated values")->required();
  sw->add_option("--config", config_path, "model config for FLOPs-only sweeps")->check(CLI::ExistingFile);
  sw->add_option("--weights", weights)->check(CLI::ExistingFile);
  sw->add_option("--gallery", gallery)->check(CLI::ExistingFile);
  sw->add_option("--queries", queries)->check(CLI::ExistingDirectory);
  sw->add_option("--records", records, "write line-delimited JSON records here");
  add_pipeline_flags(sw, flags);

  auto* vis = app.add_subcommand("visualize-drop", "write per-layer masks with dropped patches whitened");
  vis->add_option("--weights", weights)->required()->check(CLI::ExistingFile);
  vis->add_option("--image", image)->required()->check(CLI::ExistingFile);
  vis->add_option("--camera", camera, "1-based camera id")->required();
  vis->add_option("--keep-rate", flags.keep_rate)->capture_default_str();
  vis->add_option("--strategy", flags.strategy)->capture_default_str();
  vis->add_option("--out", out, "output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "fpc: %s\n", e.what());
    return 2;
  }

  try {
    if (*init) cmd_init_weights(config_path, seed, out);
    else if (*gen) cmd_gen_synthetic(spec, out);
    else if (*build) cmd_build_gallery(weights, images, out);
    else if (*query) cmd_query(weights, gallery, image, camera, flags, explain);
    else if (*eval) cmd_evaluate(weights, gallery, queries, flags, records);
    else if (*sw) cmd_sweep(param, values, config_path, weights, gallery, queries, flags, records);
    else if (*vis) cmd_visualize_drop(weights, image, camera, flags.keep_rate, flags.strategy, out);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::fprintf(stderr, "fpc: error: %s\n", msg.c_str());
    return 1;
  }
  return 0;
}
