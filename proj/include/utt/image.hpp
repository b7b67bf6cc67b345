#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace utt {

/// Interleaved float image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c = 3, float fill = 0.0F)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool operator==(const Image& other) const = default;
};

/// Writes an 8-bit RGB PNG; values are clamped to [0, 1].
void write_png(const std::string& path, const Image& image);

/// Reads an 8-bit RGB or RGBA PNG into a 3-channel image.
Image read_png(const std::string& path);

}  // namespace utt
