#pragma once

// Gallery memory: full-token (keep rate 1.0) encodings of every gallery image.
//
// File layout (little-endian):
//   "FPCG" | u32 version=1 | u32 D | u32 N | u32 record_count
//   per record: u32 person_id | u32 camera_id | D f32 cls | N*D f32 patches

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpc/encoder.hpp"

namespace fpc {

struct GalleryRecord {
  std::uint32_t person_id = 0;
  std::uint32_t camera_id = 0;
  Vector cls;
  Matrix patches;  // N x D

  bool operator==(const GalleryRecord&) const = default;
};

struct LabeledImage {
  Image image;
  std::uint32_t person_id = 0;
  std::uint32_t camera_id = 0;
};

class GalleryMemory {
 public:
  static constexpr char kMagic[4] = {'F', 'P', 'C', 'G'};
  static constexpr std::uint32_t kVersion = 1;

  /// Validates that every record has length-dim cls and patch_count x dim patches.
  GalleryMemory(std::size_t dim, std::size_t patch_count, std::vector<GalleryRecord> records);

  static GalleryMemory build(const std::vector<LabeledImage>& images, const EncoderConfig& cfg,
                             const EncoderWeights& w);
  static GalleryMemory load(const std::string& path);
  static GalleryMemory deserialize(std::span<const unsigned char> bytes);

  void save(const std::string& path) const;
  std::string serialize() const;

  std::size_t dim() const noexcept { return dim_; }
  std::size_t patch_count() const noexcept { return patch_count_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const GalleryRecord& operator[](std::size_t i) const { return records_[i]; }
  const std::vector<GalleryRecord>& records() const noexcept { return records_; }

  /// Record positions for a person id (empty if unknown).
  const std::vector<std::size_t>& positions_of(std::uint32_t person_id) const;

  bool operator==(const GalleryMemory& o) const {
    return dim_ == o.dim_ && patch_count_ == o.patch_count_ && records_ == o.records_;
  }

 private:
  std::size_t dim_;
  std::size_t patch_count_;
  std::vector<GalleryRecord> records_;
  std::unordered_map<std::uint32_t, std::vector<std::size_t>> index_;
};

}  // namespace fpc
