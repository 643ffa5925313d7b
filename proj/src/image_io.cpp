#include "fpc/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <regex>
#include <tuple>

#include "fpc/binary_io.hpp"

namespace fpc {

namespace {

class HeaderParser {
 public:
  explicit HeaderParser(std::span<const unsigned char> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1u << 24)) throw FormatError(std::string("PPM ") + what + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("PPM: expected ") + what, start);
    return v;
  }

  std::size_t pos_ = 0;

 private:
  std::span<const unsigned char> b_;
};

}  // namespace

Rgb8Image decode_ppm(std::span<const unsigned char> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    const std::string got = bytes.size() >= 2 ? std::string(bytes.begin(), bytes.begin() + 2) : "";
    throw FormatError("unsupported image format '" + got + "': expected binary PPM (P6)", 0);
  }
  HeaderParser hp(bytes);
  hp.pos_ = 2;
  Rgb8Image img;
  img.width = hp.number("width");
  img.height = hp.number("height");
  const std::size_t maxval_at = hp.pos_;
  const std::size_t maxval = hp.number("maxval");
  if (maxval != 255) {
    throw FormatError("PPM maxval " + std::to_string(maxval) + " unsupported, expected 255",
                      maxval_at);
  }
  if (hp.pos_ >= bytes.size() || !std::isspace(bytes[hp.pos_])) {
    throw FormatError("PPM: missing whitespace after header", hp.pos_);
  }
  ++hp.pos_;
  const std::size_t need = img.width * img.height * 3;
  if (bytes.size() - hp.pos_ < need) {
    throw FormatError("truncated PPM: " + std::to_string(bytes.size() - hp.pos_) + " of " +
                          std::to_string(need) + " pixel bytes",
                      hp.pos_);
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(hp.pos_),
                    bytes.begin() + static_cast<std::ptrdiff_t>(hp.pos_ + need));
  return img;
}

Rgb8Image read_ppm(const std::string& path) {
  const auto bytes = binary::read_file(path);
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what(), e.offset());
  }
}

std::string encode_ppm(const Rgb8Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(image.pixels.data()), image.pixels.size());
  return out;
}

void write_ppm(const std::string& path, const Rgb8Image& image) {
  binary::write_file_atomic(path, encode_ppm(image));
}

Rgb8Image resize_bilinear(const Rgb8Image& image, std::size_t height, std::size_t width) {
  if (image.height == height && image.width == width) return image;
  if (image.height == 0 || image.width == 0) throw InputError("resize_bilinear: empty image");
  Rgb8Image out{height, width, std::vector<std::uint8_t>(height * width * 3)};

  auto source_coord = [](std::size_t dst, std::size_t n_in, std::size_t n_out) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(n_in) /
                   static_cast<double>(n_out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };

  for (std::size_t y = 0; y < height; ++y) {
    const auto [y0, y1, wy] = source_coord(y, image.height, height);
    for (std::size_t x = 0; x < width; ++x) {
      const auto [x0, x1, wx] = source_coord(x, image.width, width);
      for (std::size_t c = 0; c < 3; ++c) {
        auto px = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(image.pixels[(yy * image.width + xx) * 3 + c]);
        };
        const double top = px(y0, x0) * (1.0 - wx) + px(y0, x1) * wx;
        const double bottom = px(y1, x0) * (1.0 - wx) + px(y1, x1) * wx;
        const double v = top * (1.0 - wy) + bottom * wy;
        out.pixels[(y * width + x) * 3 + c] =
            static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

Rgb8Image load_image(const std::string& path, std::size_t height, std::size_t width) {
  return resize_bilinear(read_ppm(path), height, width);
}

Image to_float_image(const Rgb8Image& image) {
  Image out{image.height, image.width, 3, std::vector<float>(image.pixels.size())};
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    out.pixels[i] = (static_cast<float>(image.pixels[i]) / 255.0f - 0.5f) / 0.5f;
  }
  return out;
}

FileMetadata parse_metadata(const std::string& filename) {
  static const std::regex pattern(R"(^(\d+)_c(\d+)(?:[^0-9].*)?$)");
  const std::string base = std::filesystem::path(filename).filename().string();
  std::smatch m;
  if (!std::regex_match(base, m, pattern)) {
    throw InputError("cannot parse '<pid>_c<camid>_...' from file name '" + filename + "'");
  }
  if (m[1].length() > 9 || m[2].length() > 9) {
    throw InputError("person/camera id out of range in file name '" + filename + "'");
  }
  const unsigned long pid = std::stoul(m[1].str());
  const unsigned long cam = std::stoul(m[2].str());
  if (cam == 0) {
    throw InputError("invalid person/camera id in file name '" + filename + "'");
  }
  return {static_cast<std::uint32_t>(pid), static_cast<std::uint32_t>(cam - 1)};
}

std::vector<std::string> list_images(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw InputError("not a directory: '" + dir + "'");
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fpc
