#pragma once

// Binary PPM (P6) images and Market-style filename metadata.

#include <cstdint>
#include <string>
#include <vector>

#include "fpc/encoder.hpp"

namespace fpc {

struct Rgb8Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  bool operator==(const Rgb8Image&) const = default;
};

/// Throws FormatError for anything but P6 with maxval 255, or short data.
Rgb8Image decode_ppm(std::span<const unsigned char> bytes);
Rgb8Image read_ppm(const std::string& path);
std::string encode_ppm(const Rgb8Image& image);
void write_ppm(const std::string& path, const Rgb8Image& image);

/// Half-pixel-centered bilinear resampling with edge clamping; outputs are
/// rounded half up. Same-size input is returned unchanged.
Rgb8Image resize_bilinear(const Rgb8Image& image, std::size_t height, std::size_t width);

/// read_ppm + resize to the configured input size.
Rgb8Image load_image(const std::string& path, std::size_t height, std::size_t width);

/// Maps 8-bit values to [-1, 1] via (v / 255 - 0.5) / 0.5.
Image to_float_image(const Rgb8Image& image);

struct FileMetadata {
  std::uint32_t person_id = 0;
  std::uint32_t camera_id = 0;  // 0-based
};

/// Parses "<pid>_c<camid>..." basenames; camid is 1-based in the name.
/// Throws InputError naming the file otherwise.
FileMetadata parse_metadata(const std::string& filename);

/// *.ppm files in `dir`, sorted by filename.
std::vector<std::string> list_images(const std::string& dir);

}  // namespace fpc
