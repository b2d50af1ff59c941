#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nvs/errors.hpp"

namespace nvs {

// Dense H x W x C grid, row-major, channel-contiguous per pixel.
template <typename T>
struct Volume {
  int height = 0, width = 0, channels = 0;
  std::vector<T> data;

  Volume() = default;
  Volume(int h, int w, int c)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, T(0)) {}

  T& at(int v, int u, int c) {
    return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
  T at(int v, int u, int c) const {
    return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
  std::size_t size() const { return data.size(); }
};

// RGB image with values in [0, 1].
using Image = Volume<float>;

inline std::uint8_t to_u8(float x) {
  float v = x < 0.f ? 0.f : (x > 1.f ? 1.f : x);
  return static_cast<std::uint8_t>(v * 255.f + 0.5f);
}

inline float from_u8(std::uint8_t v) { return static_cast<float>(v) / 255.f; }

// Snaps every value onto the 8-bit grid k/255 so that disk roundtrips are
// bit-exact.
void quantize_u8(Image& img);

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const Image& img);
Image read_ppm(const std::string& path);

// Minimal PNG support: reader handles 8-bit gray / gray+alpha / RGB / RGBA,
// non-interlaced; writer emits 8-bit RGB with stored deflate blocks.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Dispatches on file magic (PNG signature or "P6").
Image read_image(const std::string& path);

}  // namespace nvs
