// Figure-style overlays: box outlines and numeric ids drawn into frames.
#pragma once

#include <array>
#include <string>

#include "utt/annotation.hpp"
#include "utt/image.hpp"

namespace utt {

using Color = std::array<float, 3>;

/// Distinct, stable color per id.
Color color_for_id(int id);

void draw_box(Image& image, const Box& box, const Color& color, int thickness = 1);

/// Digits in a 3x5 pixel font, scaled by `scale`, top-left at (x, y).
void draw_text(Image& image, int x, int y, const std::string& text, const Color& color, int scale = 1);

/// Outlines and ids of every annotation in the frame.
Image render_frame(const Image& frame, const FrameAnnotations& boxes);

}  // namespace utt
