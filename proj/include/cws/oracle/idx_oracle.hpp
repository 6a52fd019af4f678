#pragma once

// Second IDX reader, written from the file-format description: gunzip with
// zlib's stream API, then read the big-endian header by hand.

#include <zlib.h>

#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace oracle {

inline std::vector<unsigned char> gunzip_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> packed((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const bool gz = packed.size() >= 2 && packed[0] == 0x1f && packed[1] == 0x8b;
  if (!gz) return packed;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw std::runtime_error("inflateInit2");
  zs.next_in = packed.data();
  zs.avail_in = static_cast<uInt>(packed.size());
  std::vector<unsigned char> out;
  unsigned char buf[4096];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof buf;
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw std::runtime_error("inflate failed on " + path);
    }
    out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
  }
  inflateEnd(&zs);
  return out;
}

inline std::uint32_t be32_at(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b.at(off)} << 24) | (std::uint32_t{b.at(off + 1)} << 16) | (std::uint32_t{b.at(off + 2)} << 8) |
         std::uint32_t{b.at(off + 3)};
}

struct IdxImage {
  std::vector<unsigned char> pixels;
  int label = -1;
};

inline IdxImage idx_item(const std::string& images, const std::string& labels, std::size_t index) {
  const auto im = gunzip_file(images), lb = gunzip_file(labels);
  if (be32_at(im, 0) != 0x00000803 || be32_at(lb, 0) != 0x00000801) throw std::runtime_error("bad magic");
  const std::size_t rows = be32_at(im, 8), cols = be32_at(im, 12);
  IdxImage out;
  const std::size_t start = 16 + index * rows * cols;
  out.pixels.assign(im.begin() + static_cast<std::ptrdiff_t>(start),
                    im.begin() + static_cast<std::ptrdiff_t>(start + rows * cols));
  out.label = lb.at(8 + index);
  return out;
}

}  // namespace oracle
