#pragma once

// Named-tensor weight files and the model bundle they carry.
//
// File layout (little-endian):
//   "FPCW" | u32 version=1 | u32 tensor_count
//   per tensor: u32 name_len | name bytes | u32 rank | rank x u32 dims | f32 payload

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpc/decoder.hpp"
#include "fpc/encoder.hpp"
#include "fpc/losses.hpp"

namespace fpc {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

class WeightFile {
 public:
  static constexpr char kMagic[4] = {'F', 'P', 'C', 'W'};
  static constexpr std::uint32_t kVersion = 1;

  void add(std::string name, std::vector<std::uint32_t> dims, std::vector<float> data);
  void add(std::string name, const Matrix& m);
  void add(std::string name, const Vector& v);

  /// Throws FormatError when missing or shaped differently.
  const NamedTensor& get(const std::string& name) const;
  Matrix matrix(const std::string& name) const;
  Vector vector(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedTensor>& tensors() const noexcept { return tensors_; }

  std::string serialize() const;
  static WeightFile deserialize(std::span<const unsigned char> bytes);
  void save(const std::string& path) const;
  static WeightFile load(const std::string& path);

  bool operator==(const WeightFile&) const = default;

 private:
  std::vector<NamedTensor> tensors_;
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t decoder_heads = 12;
  std::size_t decoder_mlp_dim = 3072;
  std::size_t num_classes = 702;

  void validate() const;
};

/// Reads a JSON config; absent keys keep their defaults. Unknown keys are rejected.
ModelConfig parse_model_config(const std::string& json_text);
ModelConfig load_model_config(const std::string& path);
std::string model_config_json(const ModelConfig& cfg);

struct ModelBundle {
  ModelConfig config;
  EncoderWeights encoder;
  DecoderWeights decoder;
  Classifier<float> classifier;

  bool operator==(const ModelBundle& o) const;
};

/// Seeded initialization of every component (encoder, decoder, classifier).
ModelBundle init_model(const ModelConfig& cfg, std::uint64_t seed);

WeightFile to_weight_file(const ModelBundle& model);
ModelBundle from_weight_file(const WeightFile& file);

void save_model(const ModelBundle& model, const std::string& path);
ModelBundle load_model(const std::string& path);

}  // namespace fpc
