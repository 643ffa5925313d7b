#include "fpc/gallery.hpp"

#include <cmath>
#include <sstream>

#include "fpc/binary_io.hpp"

namespace fpc {

GalleryMemory::GalleryMemory(std::size_t dim, std::size_t patch_count,
                             std::vector<GalleryRecord> records)
    : dim_(dim), patch_count_(patch_count), records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const auto& r = records_[i];
    if (r.cls.size() != dim_ || r.patches.rows() != patch_count_ || r.patches.cols() != dim_) {
      throw ShapeError("gallery record " + std::to_string(i) + " does not match D=" +
                       std::to_string(dim_) + ", N=" + std::to_string(patch_count_));
    }
    for (float v : r.cls)
      if (!std::isfinite(v)) throw InputError("gallery record " + std::to_string(i) + ": non-finite cls");
    for (float v : r.patches.data())
      if (!std::isfinite(v)) throw InputError("gallery record " + std::to_string(i) + ": non-finite patch");
    index_[r.person_id].push_back(i);
  }
}

GalleryMemory GalleryMemory::build(const std::vector<LabeledImage>& images,
                                   const EncoderConfig& cfg, const EncoderWeights& w) {
  EncoderConfig full = cfg;
  full.keep_rate = 1.0;
  full.validate();
  check_encoder_weights(full, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& im = images[i].image;
    if (im.height != cfg.image_h || im.width != cfg.image_w || im.channels != cfg.channels) {
      throw InputError("gallery image " + std::to_string(i) + " is " + std::to_string(im.height) +
                       "x" + std::to_string(im.width) + "x" + std::to_string(im.channels) +
                       ", expected " + std::to_string(cfg.image_h) + "x" +
                       std::to_string(cfg.image_w) + "x" + std::to_string(cfg.channels));
    }
  }
  std::vector<GalleryRecord> records;
  records.reserve(images.size());
  for (const auto& li : images) {
    EncodedFeature f = encode(li.image, li.camera_id, full, w);
    records.push_back({li.person_id, li.camera_id, std::move(f.cls), std::move(f.patches)});
  }
  return GalleryMemory(cfg.embed_dim, cfg.patch_count(), std::move(records));
}

const std::vector<std::size_t>& GalleryMemory::positions_of(std::uint32_t person_id) const {
  static const std::vector<std::size_t> kNone;
  auto it = index_.find(person_id);
  return it == index_.end() ? kNone : it->second;
}

std::string GalleryMemory::serialize() const {
  std::ostringstream os(std::ios::binary);
  binary::Writer w(os);
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(dim_));
  w.u32(static_cast<std::uint32_t>(patch_count_));
  w.u32(static_cast<std::uint32_t>(records_.size()));
  for (const auto& r : records_) {
    w.u32(r.person_id);
    w.u32(r.camera_id);
    w.f32s(r.cls);
    w.f32s(r.patches.data());
  }
  w.check("gallery");
  return std::move(os).str();
}

void GalleryMemory::save(const std::string& path) const {
  binary::write_file_atomic(path, serialize());
}

GalleryMemory GalleryMemory::deserialize(std::span<const unsigned char> bytes) {
  binary::Reader in(bytes);
  const std::string magic = in.bytes(4, "magic");
  if (magic != std::string(kMagic, 4)) {
    throw FormatError("bad gallery magic: expected \"FPCG\"", 0);
  }
  const auto version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) {
    throw FormatError("unsupported gallery version " + std::to_string(version) + ", expected 1",
                      version_at);
  }
  const std::uint32_t dim = in.u32("D");
  const std::uint32_t n = in.u32("N");
  const auto count_at = in.offset();
  const std::uint32_t count = in.u32("record_count");
  const std::uint64_t per_record = 8ULL + 4ULL * (static_cast<std::uint64_t>(dim) +
                                                  static_cast<std::uint64_t>(n) * dim);
  if (per_record * count != in.remaining()) {
    throw FormatError("gallery body is " + std::to_string(in.remaining()) + " bytes, header implies " +
                          std::to_string(per_record * count),
                      count_at);
  }
  std::vector<GalleryRecord> records(count);
  for (auto& r : records) {
    r.person_id = in.u32("person_id");
    r.camera_id = in.u32("camera_id");
    r.cls.resize(dim);
    in.f32s(r.cls, "cls");
    r.patches = Matrix(n, dim);
    in.f32s(r.patches.data(), "patches");
  }
  return GalleryMemory(dim, n, std::move(records));
}

GalleryMemory GalleryMemory::load(const std::string& path) {
  const auto bytes = binary::read_file(path);
  try {
    return deserialize(bytes);
  } catch (const FormatError& e) {
    throw e.in_file(path);
  }
}

}  // namespace fpc
