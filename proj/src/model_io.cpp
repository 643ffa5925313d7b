#include "fpc/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fpc/binary_io.hpp"
#include "fpc/random.hpp"

namespace fpc {

void WeightFile::add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  if (n != data.size()) throw ShapeError("weight tensor '" + name + "': dims do not match payload");
  if (contains(name)) throw InputError("duplicate weight tensor '" + name + "'");
  tensors_.push_back({std::move(name), std::move(dims), std::move(data)});
}

void WeightFile::add(std::string name, const Matrix& m) {
  add(std::move(name), {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
      m.values());
}

void WeightFile::add(std::string name, const Vector& v) {
  add(std::move(name), {static_cast<std::uint32_t>(v.size())}, v);
}

bool WeightFile::contains(const std::string& name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const NamedTensor& t) { return t.name == name; });
}

const NamedTensor& WeightFile::get(const std::string& name) const {
  for (const auto& t : tensors_)
    if (t.name == name) return t;
  throw FormatError("weight file has no tensor '" + name + "'", 0);
}

Matrix WeightFile::matrix(const std::string& name) const {
  const auto& t = get(name);
  if (t.dims.size() != 2) throw FormatError("weight tensor '" + name + "' is not rank 2", 0);
  return Matrix(t.dims[0], t.dims[1], t.data);
}

Vector WeightFile::vector(const std::string& name) const {
  const auto& t = get(name);
  if (t.dims.size() != 1) throw FormatError("weight tensor '" + name + "' is not rank 1", 0);
  return t.data;
}

std::string WeightFile::serialize() const {
  std::ostringstream os(std::ios::binary);
  binary::Writer w(os);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& t : tensors_) {
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.f32s(t.data);
  }
  w.check("weights");
  return std::move(os).str();
}

WeightFile WeightFile::deserialize(std::span<const unsigned char> bytes) {
  binary::Reader in(bytes);
  if (in.bytes(4, "magic") != std::string(kMagic, 4)) {
    throw FormatError("bad weight-file magic: expected \"FPCW\"", 0);
  }
  const auto version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported weight-file version " + std::to_string(version) +
                          ", expected 1",
                      version_at);
  }
  const std::uint32_t count = in.u32("tensor_count");
  WeightFile file;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto at = in.offset();
    const std::uint32_t name_len = in.u32("name length");
    std::string name = in.bytes(name_len, "tensor name");
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) throw FormatError("tensor '" + name + "' has rank " + std::to_string(rank), at);
    std::vector<std::uint32_t> dims(rank);
    std::uint64_t n = 1;
    for (auto& d : dims) {
      d = in.u32("dims");
      n *= d;
      if (n > bytes.size()) {
        throw FormatError("tensor '" + name + "' larger than the file", in.offset());
      }
    }
    if (n * 4 > in.remaining()) {
      throw FormatError("truncated payload for tensor '" + name + "'", in.offset());
    }
    std::vector<float> data(n);
    in.f32s(data, "payload");
    if (file.contains(name)) throw FormatError("duplicate tensor '" + name + "'", at);
    file.tensors_.push_back({std::move(name), std::move(dims), std::move(data)});
  }
  if (in.remaining() != 0) {
    throw FormatError(std::to_string(in.remaining()) + " trailing bytes after last tensor",
                      in.offset());
  }
  return file;
}

void WeightFile::save(const std::string& path) const { binary::write_file_atomic(path, serialize()); }

WeightFile WeightFile::load(const std::string& path) {
  const auto bytes = binary::read_file(path);
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw e.in_file(path);
  }
}

// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
  encoder.validate();
  if (decoder_heads == 0 || encoder.embed_dim % decoder_heads != 0) {
    throw ConfigError("decoder_heads " + std::to_string(decoder_heads) + " must divide embed_dim " +
                      std::to_string(encoder.embed_dim));
  }
  if (decoder_mlp_dim == 0) throw ConfigError("decoder_mlp_dim must be positive");
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
}

ModelConfig parse_model_config(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  ModelConfig cfg;
  auto& e = cfg.encoder;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "image_h") e.image_h = value.get<std::size_t>();
      else if (key == "image_w") e.image_w = value.get<std::size_t>();
      else if (key == "channels") e.channels = value.get<std::size_t>();
      else if (key == "patch_size") e.patch_size = value.get<std::size_t>();
      else if (key == "stride") e.stride = value.get<std::size_t>();
      else if (key == "embed_dim") e.embed_dim = value.get<std::size_t>();
      else if (key == "mlp_dim") e.mlp_dim = value.get<std::size_t>();
      else if (key == "layers") e.layers = value.get<std::size_t>();
      else if (key == "heads") e.heads = value.get<std::size_t>();
      else if (key == "sparsify_layers") e.sparsify_layers = value.get<std::set<std::size_t>>();
      else if (key == "keep_rate") e.keep_rate = value.get<double>();
      else if (key == "strategy") e.strategy = parse_drop_strategy(value.get<std::string>());
      else if (key == "drop_seed") e.drop_seed = value.get<std::uint64_t>();
      else if (key == "num_cameras") e.num_cameras = value.get<std::size_t>();
      else if (key == "camera_scale") e.camera_scale = value.get<float>();
      else if (key == "decoder_heads") cfg.decoder_heads = value.get<std::size_t>();
      else if (key == "decoder_mlp_dim") cfg.decoder_mlp_dim = value.get<std::size_t>();
      else if (key == "num_classes") cfg.num_classes = value.get<std::size_t>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config value has wrong type: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model_config(ss.str());
}

std::string model_config_json(const ModelConfig& cfg) {
  const auto& e = cfg.encoder;
  nlohmann::ordered_json j;
  j["image_h"] = e.image_h;
  j["image_w"] = e.image_w;
  j["channels"] = e.channels;
  j["patch_size"] = e.patch_size;
  j["stride"] = e.stride;
  j["embed_dim"] = e.embed_dim;
  j["mlp_dim"] = e.mlp_dim;
  j["layers"] = e.layers;
  j["heads"] = e.heads;
  j["sparsify_layers"] = e.sparsify_layers;
  j["keep_rate"] = e.keep_rate;
  j["strategy"] = to_string(e.strategy);
  j["drop_seed"] = e.drop_seed;
  j["num_cameras"] = e.num_cameras;
  j["camera_scale"] = e.camera_scale;
  j["decoder_heads"] = cfg.decoder_heads;
  j["decoder_mlp_dim"] = cfg.decoder_mlp_dim;
  j["num_classes"] = cfg.num_classes;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

bool ModelBundle::operator==(const ModelBundle& o) const {
  return model_config_json(config) == model_config_json(o.config) && encoder == o.encoder &&
         decoder == o.decoder && classifier.weight == o.classifier.weight &&
         classifier.bias == o.classifier.bias;
}

ModelBundle init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelBundle m;
  m.config = cfg;
  m.encoder = init_encoder_weights(cfg.encoder, mix_seed(seed, 1));
  m.decoder = init_decoder_weights(cfg.encoder.embed_dim, cfg.decoder_mlp_dim, cfg.decoder_heads,
                                   mix_seed(seed, 2));
  Rng rng(mix_seed(seed, 3));
  m.classifier.weight = Matrix(cfg.num_classes, cfg.encoder.embed_dim);
  fill_normal(m.classifier.weight.data(), rng, 1.0 / std::sqrt(static_cast<double>(cfg.encoder.embed_dim)));
  m.classifier.bias.assign(cfg.num_classes, 0.0f);
  return m;
}

namespace {

// Integer-valued fields are exact in f32 below 2^24; the keep rate is stored
// in parts per million so 0.8 reads back as exactly 0.8.
enum ConfigSlot : std::size_t {
  kImageH, kImageW, kChannels, kPatch, kStride, kEmbed, kMlp, kLayers, kHeads, kCameras,
  kCameraScale, kKeepRatePpm, kStrategy, kDecoderHeads, kDecoderMlp, kClasses, kSlotCount
};

void add_layer(WeightFile& f, const std::string& p, const TransformerLayerWeights& l) {
  f.add(p + "ln1.gain", l.ln1_gain);
  f.add(p + "ln1.bias", l.ln1_bias);
  f.add(p + "attn.wq", l.attn.wq);
  f.add(p + "attn.wk", l.attn.wk);
  f.add(p + "attn.wv", l.attn.wv);
  f.add(p + "attn.wo", l.attn.wo);
  f.add(p + "attn.bq", l.attn.bq);
  f.add(p + "attn.bk", l.attn.bk);
  f.add(p + "attn.bv", l.attn.bv);
  f.add(p + "attn.bo", l.attn.bo);
  f.add(p + "ln2.gain", l.ln2_gain);
  f.add(p + "ln2.bias", l.ln2_bias);
  f.add(p + "mlp.w1", l.mlp_w1);
  f.add(p + "mlp.b1", l.mlp_b1);
  f.add(p + "mlp.w2", l.mlp_w2);
  f.add(p + "mlp.b2", l.mlp_b2);
}

TransformerLayerWeights read_layer(const WeightFile& f, const std::string& p) {
  TransformerLayerWeights l;
  l.ln1_gain = f.vector(p + "ln1.gain");
  l.ln1_bias = f.vector(p + "ln1.bias");
  l.attn.wq = f.matrix(p + "attn.wq");
  l.attn.wk = f.matrix(p + "attn.wk");
  l.attn.wv = f.matrix(p + "attn.wv");
  l.attn.wo = f.matrix(p + "attn.wo");
  l.attn.bq = f.vector(p + "attn.bq");
  l.attn.bk = f.vector(p + "attn.bk");
  l.attn.bv = f.vector(p + "attn.bv");
  l.attn.bo = f.vector(p + "attn.bo");
  l.ln2_gain = f.vector(p + "ln2.gain");
  l.ln2_bias = f.vector(p + "ln2.bias");
  l.mlp_w1 = f.matrix(p + "mlp.w1");
  l.mlp_b1 = f.vector(p + "mlp.b1");
  l.mlp_w2 = f.matrix(p + "mlp.w2");
  l.mlp_b2 = f.vector(p + "mlp.b2");
  return l;
}

void check_decoder_shapes(const DecoderWeights& w, std::size_t d, std::size_t mlp) {
  const auto& l = w.layer;
  auto mat = [](const Matrix& m, std::size_t r, std::size_t c) { return m.rows() == r && m.cols() == c; };
  const bool ok = l.ln1_gain.size() == d && l.ln1_bias.size() == d && mat(l.attn.wq, d, d) &&
                  mat(l.attn.wk, d, d) && mat(l.attn.wv, d, d) && mat(l.attn.wo, d, d) &&
                  l.attn.bq.size() == d && l.attn.bk.size() == d && l.attn.bv.size() == d &&
                  l.attn.bo.size() == d && l.ln2_gain.size() == d && l.ln2_bias.size() == d &&
                  mat(l.mlp_w1, d, mlp) && l.mlp_b1.size() == mlp && mat(l.mlp_w2, mlp, d) &&
                  l.mlp_b2.size() == d && w.final_ln_gain.size() == d && w.final_ln_bias.size() == d;
  if (!ok) throw FormatError("decoder tensors do not match config", 0);
}

}  // namespace

WeightFile to_weight_file(const ModelBundle& model) {
  const auto& c = model.config;
  const auto& e = c.encoder;
  Vector slots(kSlotCount);
  slots[kImageH] = static_cast<float>(e.image_h);
  slots[kImageW] = static_cast<float>(e.image_w);
  slots[kChannels] = static_cast<float>(e.channels);
  slots[kPatch] = static_cast<float>(e.patch_size);
  slots[kStride] = static_cast<float>(e.stride);
  slots[kEmbed] = static_cast<float>(e.embed_dim);
  slots[kMlp] = static_cast<float>(e.mlp_dim);
  slots[kLayers] = static_cast<float>(e.layers);
  slots[kHeads] = static_cast<float>(e.heads);
  slots[kCameras] = static_cast<float>(e.num_cameras);
  slots[kCameraScale] = e.camera_scale;
  slots[kKeepRatePpm] = static_cast<float>(std::round(e.keep_rate * 1e6));
  slots[kStrategy] = static_cast<float>(static_cast<int>(e.strategy));
  slots[kDecoderHeads] = static_cast<float>(c.decoder_heads);
  slots[kDecoderMlp] = static_cast<float>(c.decoder_mlp_dim);
  slots[kClasses] = static_cast<float>(c.num_classes);

  WeightFile f;
  f.add("config", slots);
  f.add("config.sparsify_layers",
        Vector(e.sparsify_layers.begin(), e.sparsify_layers.end()));

  const auto& w = model.encoder;
  f.add("encoder.patch_proj", w.patch_proj);
  f.add("encoder.patch_bias", w.patch_bias);
  f.add("encoder.cls_token", w.cls_token);
  f.add("encoder.pos_embed", w.pos_embed);
  f.add("encoder.camera_embed", w.camera_embed);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    add_layer(f, "encoder.layers." + std::to_string(i) + ".", w.layers[i]);
  }
  f.add("encoder.final_ln.gain", w.final_ln_gain);
  f.add("encoder.final_ln.bias", w.final_ln_bias);

  add_layer(f, "decoder.layer.", model.decoder.layer);
  f.add("decoder.final_ln.gain", model.decoder.final_ln_gain);
  f.add("decoder.final_ln.bias", model.decoder.final_ln_bias);

  f.add("classifier.weight", model.classifier.weight);
  f.add("classifier.bias", model.classifier.bias);
  return f;
}

ModelBundle from_weight_file(const WeightFile& f) {
  const Vector slots = f.vector("config");
  if (slots.size() != kSlotCount) {
    throw FormatError("config tensor has " + std::to_string(slots.size()) + " slots, expected " +
                          std::to_string(kSlotCount),
                      0);
  }
  auto count = [&](ConfigSlot s) {
    const float v = slots[s];
    if (!(v >= 0.0f) || v != std::floor(v)) throw FormatError("config slot is not a count", 0);
    return static_cast<std::size_t>(v);
  };
  ModelBundle m;
  auto& c = m.config;
  auto& e = c.encoder;
  e.image_h = count(kImageH);
  e.image_w = count(kImageW);
  e.channels = count(kChannels);
  e.patch_size = count(kPatch);
  e.stride = count(kStride);
  e.embed_dim = count(kEmbed);
  e.mlp_dim = count(kMlp);
  e.layers = count(kLayers);
  e.heads = count(kHeads);
  e.num_cameras = count(kCameras);
  e.camera_scale = slots[kCameraScale];
  e.keep_rate = static_cast<double>(count(kKeepRatePpm)) / 1e6;
  const std::size_t strategy = count(kStrategy);
  if (strategy > 2) throw FormatError("config: unknown drop strategy code", 0);
  e.strategy = static_cast<DropStrategy>(strategy);
  c.decoder_heads = count(kDecoderHeads);
  c.decoder_mlp_dim = count(kDecoderMlp);
  c.num_classes = count(kClasses);
  e.sparsify_layers.clear();
  for (float l : f.vector("config.sparsify_layers")) e.sparsify_layers.insert(static_cast<std::size_t>(l));
  try {
    c.validate();
  } catch (const ConfigError& ex) {
    throw FormatError(std::string("weight file config invalid: ") + ex.what(), 0);
  }

  auto& w = m.encoder;
  w.patch_proj = f.matrix("encoder.patch_proj");
  w.patch_bias = f.vector("encoder.patch_bias");
  w.cls_token = f.vector("encoder.cls_token");
  w.pos_embed = f.matrix("encoder.pos_embed");
  w.camera_embed = f.matrix("encoder.camera_embed");
  for (std::size_t i = 0; i < e.layers; ++i) {
    w.layers.push_back(read_layer(f, "encoder.layers." + std::to_string(i) + "."));
  }
  w.final_ln_gain = f.vector("encoder.final_ln.gain");
  w.final_ln_bias = f.vector("encoder.final_ln.bias");
  check_encoder_weights(e, w);

  m.decoder.heads = c.decoder_heads;
  m.decoder.layer = read_layer(f, "decoder.layer.");
  m.decoder.final_ln_gain = f.vector("decoder.final_ln.gain");
  m.decoder.final_ln_bias = f.vector("decoder.final_ln.bias");
  check_decoder_shapes(m.decoder, e.embed_dim, c.decoder_mlp_dim);
  m.classifier.weight = f.matrix("classifier.weight");
  m.classifier.bias = f.vector("classifier.bias");
  if (m.classifier.weight.rows() != c.num_classes || m.classifier.weight.cols() != e.embed_dim ||
      m.classifier.bias.size() != c.num_classes) {
    throw FormatError("classifier tensors do not match config", 0);
  }
  return m;
}

void save_model(const ModelBundle& model, const std::string& path) {
  to_weight_file(model).save(path);
}

ModelBundle load_model(const std::string& path) {
  const WeightFile f = WeightFile::load(path);
  try {
    return from_weight_file(f);
  } catch (const FormatError& e) {
    throw e.in_file(path);
  } catch (const ShapeError& e) {
    throw FormatError(path + ": " + e.what(), 0);
  }
}

}  // namespace fpc
