#include "fpc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fpc/decoder.hpp"
#include "fpc/random.hpp"

namespace fpc {

std::vector<bool> filter_matches(std::span<const Identity> ranked, Identity query) {
  std::vector<bool> out;
  out.reserve(ranked.size());
  for (const auto& g : ranked) {
    const bool same_person = g.person_id == query.person_id;
    if (same_person && g.camera_id == query.camera_id) continue;  // junk
    out.push_back(same_person);
  }
  return out;
}

std::optional<double> average_precision(std::span<const bool> matches) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (!matches[i]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

// std::vector<bool> has no contiguous storage; the span overload above needs a
// real bool array, so keep one adapter here.
namespace {
std::optional<double> ap_of(const std::vector<bool>& m) {
  std::unique_ptr<bool[]> buf(new bool[m.size()]);
  std::copy(m.begin(), m.end(), buf.get());
  return average_precision(std::span<const bool>(buf.get(), m.size()));
}
}  // namespace

std::optional<double> average_precision(std::span<const Identity> ranked, Identity query) {
  return ap_of(filter_matches(ranked, query));
}

std::vector<double> cmc_curve(const std::vector<std::vector<bool>>& per_query_matches,
                              std::size_t max_rank) {
  std::vector<double> cmc(max_rank, 0.0);
  std::size_t valid = 0;
  for (const auto& m : per_query_matches) {
    auto it = std::find(m.begin(), m.end(), true);
    if (it == m.end()) continue;
    ++valid;
    const auto first = static_cast<std::size_t>(it - m.begin());
    for (std::size_t r = first; r < max_rank; ++r) cmc[r] += 1.0;
  }
  if (valid > 0)
    for (auto& v : cmc) v /= static_cast<double>(valid);
  return cmc;
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  if (identities == 0 || images_per_identity == 0) {
    throw ConfigError("synthetic: identities and images per identity must be positive");
  }
  if (num_cameras < 2) throw ConfigError("synthetic: need at least 2 cameras");
  if (patch_size == 0 || stride == 0 || image_h < patch_size || image_w < patch_size) {
    throw ConfigError("synthetic: image size incompatible with patch grid");
  }
  if (!(occlusion_rate >= 0.0 && occlusion_rate <= 1.0)) {
    throw ConfigError("synthetic: occlusion rate must lie in [0, 1]");
  }
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("synthetic: noise must lie in [0, 1]");
}

CellRect cell_rect(std::size_t r, std::size_t c, std::size_t grid_rows, std::size_t grid_cols,
                   std::size_t stride, std::size_t image_h, std::size_t image_w) {
  return {r * stride, r + 1 == grid_rows ? image_h : (r + 1) * stride, c * stride,
          c + 1 == grid_cols ? image_w : (c + 1) * stride};
}

namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb random_color(Rng& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  return {static_cast<std::uint8_t>(d(rng)), static_cast<std::uint8_t>(d(rng)),
          static_cast<std::uint8_t>(d(rng))};
}

// Two-color stripe or checker texture.
struct Texture {
  Rgb a, b;
  int kind;    // 0 horizontal stripes, 1 vertical stripes, 2 checker
  int period;  // pixels per stripe pair

  Rgb at(std::size_t y, std::size_t x) const {
    const std::size_t half = static_cast<std::size_t>(period / 2);
    bool first = false;
    switch (kind) {
      case 0: first = (y / half) % 2 == 0; break;
      case 1: first = (x / half) % 2 == 0; break;
      default: first = ((y / half) + (x / half)) % 2 == 0; break;
    }
    return first ? a : b;
  }
};

Texture random_texture(Rng& rng) {
  static constexpr int kPeriods[] = {4, 6, 8, 12, 16};
  std::uniform_int_distribution<int> kind(0, 2), period(0, 4);
  Texture t{random_color(rng), random_color(rng), kind(rng), 0};
  t.period = kPeriods[period(rng)];
  return t;
}

void put(Rgb8Image& img, std::size_t y, std::size_t x, Rgb c) {
  auto* p = &img.pixels[(y * img.width + x) * 3];
  p[0] = c.r;
  p[1] = c.g;
  p[2] = c.b;
}

// Shared background: a vertical gray-blue gradient identical for every image.
Rgb8Image render_background(const SyntheticSpec& s) {
  Rgb8Image img{s.image_h, s.image_w, std::vector<std::uint8_t>(s.image_h * s.image_w * 3)};
  for (std::size_t y = 0; y < s.image_h; ++y) {
    const double t = static_cast<double>(y) / static_cast<double>(s.image_h);
    const Rgb c{static_cast<std::uint8_t>(110 + 40 * t), static_cast<std::uint8_t>(115 + 35 * t),
                static_cast<std::uint8_t>(130 + 20 * t)};
    for (std::size_t x = 0; x < s.image_w; ++x) put(img, y, x, c);
  }
  return img;
}

// A person is a central figure split into 6 bands x 2 columns of textured blocks.
Rgb8Image render_identity(const SyntheticSpec& s, const Rgb8Image& background, Rng& rng) {
  constexpr std::size_t kBands = 6, kCols = 2;
  std::vector<Texture> blocks;
  for (std::size_t i = 0; i < kBands * kCols; ++i) blocks.push_back(random_texture(rng));

  Rgb8Image img = background;
  const std::size_t y0 = s.image_h / 16, y1 = s.image_h - s.image_h / 16;
  const std::size_t x0 = s.image_w * 3 / 16, x1 = s.image_w - s.image_w * 3 / 16;
  for (std::size_t y = y0; y < y1; ++y) {
    const std::size_t band = (y - y0) * kBands / (y1 - y0);
    for (std::size_t x = x0; x < x1; ++x) {
      const std::size_t col = (x - x0) * kCols / (x1 - x0);
      put(img, y, x, blocks[band * kCols + col].at(y, x));
    }
  }
  return img;
}

// Marks exactly round(rate * N) cells as a contiguous band growing in from one
// random side: full rows (or columns) plus one partial row (or column).
std::vector<bool> occlusion_cells(const SyntheticSpec& s, Rng& rng) {
  const std::size_t rows = s.grid_rows(), cols = s.grid_cols(), n = rows * cols;
  const auto target = static_cast<std::size_t>(std::llround(s.occlusion_rate * static_cast<double>(n)));
  std::vector<bool> cells(n, false);
  const int side = std::uniform_int_distribution<int>(0, 3)(rng);  // bottom, top, left, right
  const bool flip_partial = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
  for (std::size_t k = 0; k < target; ++k) {
    std::size_t r, c;
    if (side < 2) {
      const std::size_t band = k / cols;
      std::size_t within = k % cols;
      if (flip_partial) within = cols - 1 - within;
      r = side == 0 ? rows - 1 - band : band;
      c = within;
    } else {
      const std::size_t band = k / rows;
      std::size_t within = k % rows;
      if (flip_partial) within = rows - 1 - within;
      c = side == 2 ? band : cols - 1 - band;
      r = within;
    }
    cells[r * cols + c] = true;
  }
  return cells;
}

std::string image_name(std::uint32_t pid, std::uint32_t cam, const char* tag, std::size_t n) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04u_c%u_%s%02zu.ppm", pid, cam + 1, tag, n);
  return buf;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Rgb8Image background = render_background(spec);
  SyntheticCorpus corpus;
  for (std::size_t id = 0; id < spec.identities; ++id) {
    Rng id_rng(mix_seed(spec.seed, id));
    const Rgb8Image person = render_identity(spec, background, id_rng);
    const auto pid = static_cast<std::uint32_t>(id + 1);

    for (std::size_t j = 0; j < spec.images_per_identity; ++j) {
      const auto cam = static_cast<std::uint32_t>(1 + j % (spec.num_cameras - 1));
      corpus.gallery.push_back({person, pid, cam, image_name(pid, cam, "g", j),
                                std::vector<bool>(spec.grid_rows() * spec.grid_cols(), false)});
    }

    for (std::size_t q = 0; q < spec.queries_per_identity; ++q) {
      Rng q_rng(mix_seed(spec.seed, 1'000'000 + id * 1000 + q));
      SyntheticImage query{person, pid, 0, image_name(pid, 0, "q", q), occlusion_cells(spec, q_rng)};
      const Texture occluder = random_texture(q_rng);
      for (std::size_t r = 0; r < spec.grid_rows(); ++r) {
        for (std::size_t c = 0; c < spec.grid_cols(); ++c) {
          if (!query.occluded_cells[r * spec.grid_cols() + c]) continue;
          const CellRect rect = cell_rect(r, c, spec.grid_rows(), spec.grid_cols(), spec.stride,
                                          spec.image_h, spec.image_w);
          for (std::size_t y = rect.y0; y < rect.y1; ++y)
            for (std::size_t x = rect.x0; x < rect.x1; ++x) put(query.image, y, x, occluder.at(y, x));
        }
      }
      if (spec.noise > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.noise * 255.0);
        for (auto& p : query.image.pixels) {
          p = static_cast<std::uint8_t>(std::clamp(std::round(p + noise(q_rng)), 0.0, 255.0));
        }
      }
      corpus.queries.push_back(std::move(query));
    }
  }
  return corpus;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  fs::create_directories(root / "gallery");
  fs::create_directories(root / "query");
  for (const auto& g : corpus.gallery) write_ppm((root / "gallery" / g.filename).string(), g.image);
  for (const auto& q : corpus.queries) write_ppm((root / "query" / q.filename).string(), q.image);
}

std::vector<LabeledImage> to_labeled(const std::vector<SyntheticImage>& images) {
  std::vector<LabeledImage> out;
  out.reserve(images.size());
  for (const auto& s : images) out.push_back({to_float_image(s.image), s.person_id, s.camera_id});
  return out;
}

std::vector<LabeledImage> load_labeled_dir(const std::string& dir, const EncoderConfig& cfg) {
  std::vector<LabeledImage> out;
  for (const auto& path : list_images(dir)) {
    const FileMetadata meta = parse_metadata(path);
    out.push_back({to_float_image(load_image(path, cfg.image_h, cfg.image_w)), meta.person_id,
                   meta.camera_id});
  }
  return out;
}

// ---------------------------------------------------------------------------

EvalReport evaluate(const std::vector<LabeledImage>& queries, const GalleryMemory& memory,
                    const ModelBundle& model, const EvalOptions& opts) {
  if (queries.empty()) throw InputError("evaluate: no queries");
  if (memory.empty()) throw InputError("evaluate: gallery memory is empty");

  EncoderConfig cfg = model.config.encoder;
  cfg.keep_rate = opts.keep_rate;
  cfg.strategy = opts.strategy;
  cfg.validate();

  EncoderConfig dense_cfg = cfg;
  dense_cfg.keep_rate = 1.0;

  EvalReport report;
  report.options = opts;
  report.flops = count_flops(cfg.dims(), token_schedule(cfg));
  report.flops_ratio = report.flops.total / count_flops(cfg.dims(), token_schedule(dense_cfg)).total;

  std::vector<std::vector<bool>> all_matches;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    cfg.drop_seed = mix_seed(opts.drop_seed, qi);
    const EncodedFeature feat = encode(q.image, q.camera_id, cfg, model.encoder);
    FullRanking fr = rank_full(feat, memory, opts.rank);

    QueryResult res;
    res.query_index = qi;
    res.query = {q.person_id, q.camera_id};
    res.kept_patches = feat.patches.rows();

    if (opts.consolidate && opts.rank.k > 0) {
      const std::size_t k = std::min(opts.rank.k, fr.shortlist.shortlist_size);
      std::vector<const GalleryRecord*> neighbors;
      for (std::size_t i = 0; i < k; ++i) neighbors.push_back(&memory[fr.order[i]]);
      const Vector consolidated = decode(assemble_multiview(feat, neighbors), model.decoder);
      std::vector<double> score(k);
      for (std::size_t i = 0; i < k; ++i) score[i] = cosine_distance(consolidated, neighbors[i]->cls);
      std::vector<std::size_t> idx(k);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
      std::vector<std::size_t> head(k);
      for (std::size_t i = 0; i < k; ++i) head[i] = fr.order[idx[i]];
      std::copy(head.begin(), head.end(), fr.order.begin());
      res.neighbors_used = k;
    }
    res.ranking = std::move(fr.order);

    std::vector<Identity> ranked;
    ranked.reserve(res.ranking.size());
    for (std::size_t pos : res.ranking) ranked.push_back({memory[pos].person_id, memory[pos].camera_id});
    auto matches = filter_matches(ranked, res.query);
    res.ap = ap_of(matches);
    if (auto it = std::find(matches.begin(), matches.end(), true); it != matches.end()) {
      res.first_match = static_cast<std::size_t>(it - matches.begin()) + 1;
    }
    if (res.ap) report.per_query_ap.push_back(*res.ap);
    all_matches.push_back(std::move(matches));
    report.queries.push_back(std::move(res));
  }

  report.valid_queries = report.per_query_ap.size();
  report.cmc = cmc_curve(all_matches, opts.max_rank);
  if (!report.per_query_ap.empty()) {
    report.map = std::accumulate(report.per_query_ap.begin(), report.per_query_ap.end(), 0.0) /
                 static_cast<double>(report.per_query_ap.size());
  }
  return report;
}

SweepParam parse_sweep_param(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '_', '-');
  if (n == "keep-rate") return SweepParam::kKeepRate;
  if (n == "alpha") return SweepParam::kAlpha;
  if (n == "k") return SweepParam::kK;
  if (n == "strategy") return SweepParam::kStrategy;
  throw ConfigError("unknown sweep parameter '" + name + "' (keep-rate, alpha, k, strategy)");
}

std::string to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kKeepRate: return "keep-rate";
    case SweepParam::kAlpha: return "alpha";
    case SweepParam::kK: return "k";
    case SweepParam::kStrategy: return "strategy";
  }
  return "?";
}

EvalOptions apply_sweep_value(const EvalOptions& base, SweepParam param, const std::string& value) {
  EvalOptions o = base;
  try {
    switch (param) {
      case SweepParam::kKeepRate: o.keep_rate = std::stod(value); break;
      case SweepParam::kAlpha: o.rank.alpha = std::stod(value); break;
      case SweepParam::kK: o.rank.k = std::stoul(value); break;
      case SweepParam::kStrategy: o.strategy = parse_drop_strategy(value); break;
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad " + to_string(param) + " value '" + value + "'");
  }
  return o;
}

std::vector<SweepRow> sweep(SweepParam param, const std::vector<std::string>& values,
                            const std::vector<LabeledImage>& queries, const GalleryMemory& memory,
                            const ModelBundle& model, const EvalOptions& base) {
  if (values.empty()) throw InputError("sweep: no values");
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    rows.push_back({v, evaluate(queries, memory, model, apply_sweep_value(base, param, v))});
  }
  return rows;
}

std::vector<FlopsRow> flops_sweep(const EncoderConfig& cfg, const std::vector<double>& keep_rates) {
  EncoderConfig dense = cfg;
  dense.keep_rate = 1.0;
  const double base = count_flops(dense.dims(), token_schedule(dense)).total;
  std::vector<FlopsRow> rows;
  for (double g : keep_rates) {
    EncoderConfig c = cfg;
    c.keep_rate = g;
    FlopsRow row;
    row.keep_rate = g;
    row.tokens_per_layer = token_schedule(c);
    row.total = count_flops(c.dims(), row.tokens_per_layer).total;
    row.ratio = row.total / base;
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

nlohmann::ordered_json options_json(const EvalOptions& o) {
  return {{"keep_rate", o.keep_rate}, {"alpha", o.rank.alpha}, {"k", o.rank.k},
          {"shortlist", o.rank.shortlist}, {"strategy", to_string(o.strategy)},
          {"consolidate", o.consolidate}};
}

nlohmann::ordered_json summary_json(const EvalReport& r) {
  return {{"rank1", r.rank_at(1)},      {"rank5", r.rank_at(5)},
          {"rank10", r.rank_at(10)},    {"map", r.map},
          {"valid_queries", r.valid_queries}, {"gflops", r.flops.total / 1e9},
          {"flops_ratio", r.flops_ratio}, {"config", options_json(r.options)}};
}

}  // namespace

std::string format_eval_report(const EvalReport& r) {
  std::string s;
  s += fmt("keep_rate=%.2f alpha=%.2f k=%zu strategy=%s consolidate=%s\n", r.options.keep_rate,
           r.options.rank.alpha, r.options.rank.k, to_string(r.options.strategy).c_str(),
           r.options.consolidate ? "on" : "off");
  s += fmt("Rank-1  %6.2f%%\n", 100.0 * r.rank_at(1));
  s += fmt("Rank-5  %6.2f%%\n", 100.0 * r.rank_at(5));
  s += fmt("Rank-10 %6.2f%%\n", 100.0 * r.rank_at(10));
  s += fmt("mAP     %6.2f%%\n", 100.0 * r.map);
  s += fmt("GFLOPs  %8.3f (%.3f of dense)\n", r.flops.total / 1e9, r.flops_ratio);
  s += fmt("queries %zu valid / %zu\n", r.valid_queries, r.queries.size());
  return s;
}

std::string format_sweep_table(SweepParam param, const std::vector<SweepRow>& rows) {
  std::string s = fmt("%-12s %8s %8s %8s %8s %10s %8s\n", to_string(param).c_str(), "Rank-1",
                      "Rank-5", "Rank-10", "mAP", "GFLOPs", "ratio");
  for (const auto& row : rows) {
    const auto& r = row.report;
    s += fmt("%-12s %7.2f%% %7.2f%% %7.2f%% %7.2f%% %10.3f %8.3f\n", row.value.c_str(),
             100.0 * r.rank_at(1), 100.0 * r.rank_at(5), 100.0 * r.rank_at(10), 100.0 * r.map,
             r.flops.total / 1e9, r.flops_ratio);
  }
  return s;
}

std::string format_flops_table(const std::vector<FlopsRow>& rows) {
  std::string s = fmt("%-10s %10s %8s %8s  %s\n", "keep-rate", "GFLOPs", "ratio", "change",
                      "tokens per layer");
  for (const auto& row : rows) {
    std::string tokens;
    for (std::size_t i = 0; i < row.tokens_per_layer.size(); ++i) {
      tokens += (i ? "," : "") + std::to_string(row.tokens_per_layer[i]);
    }
    s += fmt("%-10.2f %10.3f %8.3f %7.1f%%  ", row.keep_rate, row.total / 1e9, row.ratio,
             100.0 * (row.ratio - 1.0)) +
         tokens + "\n";
  }
  return s;
}

std::string eval_report_records(const EvalReport& r) {
  std::string out;
  for (const auto& q : r.queries) {
    nlohmann::ordered_json j{{"type", "query"},
                             {"index", q.query_index},
                             {"person_id", q.query.person_id},
                             {"camera_id", q.query.camera_id + 1},
                             {"kept_patches", q.kept_patches},
                             {"neighbors_used", q.neighbors_used}};
    j["ap"] = q.ap ? nlohmann::json(*q.ap) : nlohmann::json(nullptr);
    j["first_match"] = q.first_match ? nlohmann::json(*q.first_match) : nlohmann::json(nullptr);
    out += j.dump() + "\n";
  }
  nlohmann::ordered_json summary{{"type", "summary"}};
  summary.update(summary_json(r));
  out += summary.dump() + "\n";
  return out;
}

std::string sweep_records(SweepParam param, const std::vector<SweepRow>& rows) {
  std::string out;
  for (const auto& row : rows) {
    nlohmann::ordered_json j{{"type", "sweep_point"}, {"param", to_string(param)}, {"value", row.value}};
    j.update(summary_json(row.report));
    out += j.dump() + "\n";
  }
  return out;
}

std::string flops_records(const std::vector<FlopsRow>& rows) {
  std::string out;
  for (const auto& row : rows) {
    nlohmann::ordered_json j{{"type", "flops_point"},
                             {"keep_rate", row.keep_rate},
                             {"gflops", row.total / 1e9},
                             {"ratio", row.ratio},
                             {"tokens_per_layer", row.tokens_per_layer}};
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace fpc
