#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/tensor.hpp"

// Binary PPM (P6) frame I/O. Frames are [3 x H x W] tensors with values in
// [0, 1]; bytes are round(v * 255), so a write/read round trip lands on the
// 1/255 grid within half a quantum.

namespace cgmm {

inline void write_ppm(const std::filesystem::path& path, const Tensor& frame) {
  if (frame.ndim() != 3 || frame.dim(0) != 3) {
    throw validation_error("write_ppm expects a [3,H,W] frame, got " + shape_str(frame.shape()));
  }
  const int h = frame.dim(1), w = frame.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open " + path.string() + " for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = frame.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x];
        v = std::min(1.0, std::max(0.0, v));
        row[static_cast<std::size_t>(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw io_error("short write to " + path.string());
}

namespace detail {

inline int ppm_read_int(const std::vector<char>& buf, std::size_t& pos, const std::string& path) {
  while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
  if (pos >= buf.size() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    throw data_error("malformed PPM header in " + path + " at byte offset " + std::to_string(pos));
  }
  int v = 0;
  while (pos < buf.size() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
    v = v * 10 + (buf[pos] - '0');
    ++pos;
  }
  return v;
}

}  // namespace detail

inline Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') {
    throw data_error("bad PPM magic in " + path.string() + " at byte offset 0 (expected P6)");
  }
  pos = 2;
  const int w = detail::ppm_read_int(buf, pos, path.string());
  const int h = detail::ppm_read_int(buf, pos, path.string());
  const int maxval = detail::ppm_read_int(buf, pos, path.string());
  if (w <= 0 || h <= 0) {
    throw data_error("bad PPM extents " + std::to_string(w) + "x" + std::to_string(h) +
                     " in " + path.string() + " at byte offset " + std::to_string(pos));
  }
  if (maxval != 255) {
    throw data_error("unsupported PPM maxval " + std::to_string(maxval) + " in " + path.string());
  }
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw data_error("missing header terminator in " + path.string() + " at byte offset " +
                     std::to_string(pos));
  }
  ++pos;  // single whitespace separates header and payload
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (buf.size() - pos < plane * 3) {
    throw data_error("truncated PPM payload in " + path.string() + " at byte offset " +
                     std::to_string(buf.size()) + " (need " + std::to_string(pos + plane * 3) + " bytes)");
  }
  Tensor frame = Tensor::zeros({3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const unsigned char byte = static_cast<unsigned char>(buf[pos++]);
        frame.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
            static_cast<double>(byte) / 255.0;
      }
    }
  }
  return frame;
}

}  // namespace cgmm
