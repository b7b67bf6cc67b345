#include "utt/render.hpp"

#include <algorithm>
#include <cmath>

namespace utt {

namespace {

// 3x5 glyphs for 0-9, one row per 3 bits.
constexpr unsigned short kDigits[10][5] = {
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}};

void put(Image& image, int x, int y, const Color& color) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  for (int c = 0; c < std::min(3, image.channels); ++c) image.at(y, x, c) = color[static_cast<std::size_t>(c)];
}

}  // namespace

Color color_for_id(int id) {
  // Golden-ratio hue walk, full saturation.
  const double hue = std::fmod(0.61803398875 * id, 1.0) * 6.0;
  const int sector = static_cast<int>(hue);
  const float f = static_cast<float>(hue - sector);
  switch (sector % 6) {
    case 0: return {1.0F, f, 0.0F};
    case 1: return {1.0F - f, 1.0F, 0.0F};
    case 2: return {0.0F, 1.0F, f};
    case 3: return {0.0F, 1.0F - f, 1.0F};
    case 4: return {f, 0.0F, 1.0F};
    default: return {1.0F, 0.0F, 1.0F - f};
  }
}

void draw_box(Image& image, const Box& box, const Color& color, int thickness) {
  const int x1 = static_cast<int>(std::lround(box(0))), y1 = static_cast<int>(std::lround(box(1)));
  const int x2 = static_cast<int>(std::lround(box(2))) - 1, y2 = static_cast<int>(std::lround(box(3))) - 1;
  for (int t = 0; t < thickness; ++t) {
    for (int x = x1; x <= x2; ++x) {
      put(image, x, y1 + t, color);
      put(image, x, y2 - t, color);
    }
    for (int y = y1; y <= y2; ++y) {
      put(image, x1 + t, y, color);
      put(image, x2 - t, y, color);
    }
  }
}

void draw_text(Image& image, int x, int y, const std::string& text, const Color& color, int scale) {
  for (char ch : text) {
    if (ch >= '0' && ch <= '9') {
      const auto& glyph = kDigits[ch - '0'];
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (!((glyph[row] >> (2 - col)) & 1)) continue;
          for (int dy = 0; dy < scale; ++dy) {
            for (int dx = 0; dx < scale; ++dx) put(image, x + col * scale + dx, y + row * scale + dy, color);
          }
        }
      }
    }
    x += 4 * scale;
  }
}

Image render_frame(const Image& frame, const FrameAnnotations& boxes) {
  Image out = frame;
  for (const auto& a : boxes) {
    const Color color = color_for_id(a.id);
    draw_box(out, a.box, color);
    const int x = static_cast<int>(std::lround(a.box(0))) + 1;
    const int y = std::max(0, static_cast<int>(std::lround(a.box(1))) - 6);
    draw_text(out, x, y, std::to_string(a.id), color);
  }
  return out;
}

}  // namespace utt
