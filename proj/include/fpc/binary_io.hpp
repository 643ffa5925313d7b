#pragma once

// Little-endian primitives for the FPCW / FPCG file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "fpc/error.hpp"

namespace fpc::binary {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u32(std::uint32_t v) {
    v = to_little(v);
    bytes(&v, 4);
  }
  void f32s(std::span<const float> v) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(v.data(), v.size() * 4);
    } else {
      for (float f : v) {
        f = to_little(f);
        bytes(&f, 4);
      }
    }
  }
  void check(const std::string& what) const {
    if (!os_) throw Error("write failed: " + what);
  }

 private:
  std::ostream& os_;
};

/// Reads from an in-memory buffer; every failure reports its byte offset.
class Reader {
 public:
  explicit Reader(std::span<const unsigned char> buf) : buf_(buf) {}

  std::uint64_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw FormatError("truncated file: expected " + std::to_string(n) + " bytes for " + what +
                            ", " + std::to_string(remaining()) + " left",
                        pos_);
    }
  }
  std::string bytes(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, buf_.data() + pos_, 4);
    pos_ += 4;
    return to_little(v);
  }
  void f32s(std::span<float> out, const std::string& what) {
    need(out.size() * 4, what);
    std::memcpy(out.data(), buf_.data() + pos_, out.size() * 4);
    if constexpr (std::endian::native == std::endian::big) {
      for (auto& f : out) f = to_little(f);
    }
    pos_ += out.size() * 4;
  }

 private:
  std::span<const unsigned char> buf_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path);

/// Writes via a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace fpc::binary
