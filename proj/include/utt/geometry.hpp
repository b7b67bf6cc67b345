// Box arithmetic, overlap measures, bilinear RoI sampling, soft-argmax corner
// localization and the center/log-size delta codec.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "utt/autodiff.hpp"
#include "utt/errors.hpp"

namespace utt {

enum class BoxFrame { kImage, kFeature };

/// N axis-aligned boxes stored as rows (x1, y1, x2, y2).
template <typename Scalar>
class BoxSet {
 public:
  BoxSet() : coords_(0, 4), frame_(BoxFrame::kImage) {}

  explicit BoxSet(Mat<Scalar> coords, BoxFrame frame = BoxFrame::kImage)
      : coords_(std::move(coords)), frame_(frame) {
    validate();
  }

  static BoxSet single(Scalar x1, Scalar y1, Scalar x2, Scalar y2,
                       BoxFrame frame = BoxFrame::kImage) {
    Mat<Scalar> c(1, 4);
    c << x1, y1, x2, y2;
    return BoxSet(std::move(c), frame);
  }

  /// Builds corners from top-left (x, y) and size (w, h) rows.
  static BoxSet from_xywh(const Mat<Scalar>& xywh, BoxFrame frame = BoxFrame::kImage) {
    Mat<Scalar> c(xywh.rows(), 4);
    c.col(0) = xywh.col(0);
    c.col(1) = xywh.col(1);
    c.col(2) = xywh.col(0) + xywh.col(2);
    c.col(3) = xywh.col(1) + xywh.col(3);
    return BoxSet(std::move(c), frame);
  }

  Eigen::Index size() const { return coords_.rows(); }
  bool empty() const { return coords_.rows() == 0; }
  const Mat<Scalar>& coords() const { return coords_; }
  BoxFrame frame() const { return frame_; }

  Eigen::Matrix<Scalar, 1, 4> box(Eigen::Index i) const { return coords_.row(i); }

  Mat<Scalar> xywh() const {
    Mat<Scalar> out(size(), 4);
    out.col(0) = coords_.col(0);
    out.col(1) = coords_.col(1);
    out.col(2) = coords_.col(2) - coords_.col(0);
    out.col(3) = coords_.col(3) - coords_.col(1);
    return out;
  }

  /// Multiplies every coordinate by `factor` and retags the frame.
  BoxSet rescaled(Scalar factor, BoxFrame frame) const {
    return BoxSet(coords_ * factor, frame);
  }

  BoxSet select(const std::vector<Eigen::Index>& rows) const {
    Mat<Scalar> c(static_cast<Eigen::Index>(rows.size()), 4);
    for (std::size_t i = 0; i < rows.size(); ++i) c.row(i) = coords_.row(rows[i]);
    return BoxSet(std::move(c), frame_);
  }

  template <typename Other>
  BoxSet<Other> cast() const {
    return BoxSet<Other>(coords_.template cast<Other>(), frame_);
  }

 private:
  void validate() const {
    if (coords_.cols() != 4) throw std::invalid_argument("BoxSet: expected N x 4 coordinates");
    if (!coords_.allFinite()) throw NumericError("BoxSet: non-finite coordinate");
    for (Eigen::Index i = 0; i < coords_.rows(); ++i) {
      if (coords_(i, 2) < coords_(i, 0) || coords_(i, 3) < coords_(i, 1))
        throw std::invalid_argument("BoxSet: row " + std::to_string(i) +
                                    " violates x2 >= x1, y2 >= y1");
    }
  }

  Mat<Scalar> coords_;
  BoxFrame frame_;
};

/// Dense H x W x C grid stored as an (H*W) x C matrix, rows ordered (y, x).
template <typename Scalar>
struct FeatureMap {
  ad::Var<Scalar> values;
  int height = 0;
  int width = 0;
  int stride = 1;

  int channels() const { return static_cast<int>(values.cols()); }
};

/// N corner distributions stored as a 2N x (H*W) matrix; row 2n is the
/// top-left channel of target n and row 2n+1 its bottom-right channel.
template <typename Scalar>
struct HeatmapPair {
  ad::Var<Scalar> values;
  int height = 0;
  int width = 0;

  Eigen::Index targets() const { return values.rows() / 2; }
};

struct GeometryDiagnostics {
  int degenerate_boxes = 0;
};

template <typename Scalar>
Scalar box_area(const Eigen::Matrix<Scalar, 1, 4>& b) {
  return (b(2) - b(0)) * (b(3) - b(1));
}

template <typename Scalar>
Scalar box_iou(const Eigen::Matrix<Scalar, 1, 4>& a, const Eigen::Matrix<Scalar, 1, 4>& b) {
  const Scalar iw = std::max(Scalar(0), std::min(a(2), b(2)) - std::max(a(0), b(0)));
  const Scalar ih = std::max(Scalar(0), std::min(a(3), b(3)) - std::max(a(1), b(1)));
  const Scalar inter = iw * ih;
  const Scalar uni = box_area(a) + box_area(b) - inter;
  return uni > Scalar(0) ? inter / uni : Scalar(0);
}

/// Pairwise IoU, N x M.
template <typename Scalar>
Mat<Scalar> iou(const BoxSet<Scalar>& a, const BoxSet<Scalar>& b) {
  if (a.frame() != b.frame()) throw FrameMismatchError("iou: box sets use different frames");
  Mat<Scalar> out(a.size(), b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    for (Eigen::Index j = 0; j < b.size(); ++j) out(i, j) = box_iou<Scalar>(a.box(i), b.box(j));
  }
  return out;
}

/// Row-paired generalized IoU. Zero-area enclosures fall back to plain IoU and
/// are counted in `diag`.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> giou(const BoxSet<Scalar>& a, const BoxSet<Scalar>& b,
                                              GeometryDiagnostics* diag = nullptr) {
  if (a.frame() != b.frame()) throw FrameMismatchError("giou: box sets use different frames");
  if (a.size() != b.size()) throw std::invalid_argument("giou: expected paired rows");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const auto ba = a.box(i);
    const auto bb = b.box(i);
    if (diag && (box_area<Scalar>(ba) == Scalar(0) || box_area<Scalar>(bb) == Scalar(0)))
      ++diag->degenerate_boxes;
    const Scalar iw = std::max(Scalar(0), std::min(ba(2), bb(2)) - std::max(ba(0), bb(0)));
    const Scalar ih = std::max(Scalar(0), std::min(ba(3), bb(3)) - std::max(ba(1), bb(1)));
    const Scalar inter = iw * ih;
    const Scalar uni = box_area<Scalar>(ba) + box_area<Scalar>(bb) - inter;
    const Scalar iou_v = uni > Scalar(0) ? inter / uni : Scalar(0);
    const Scalar cw = std::max(ba(2), bb(2)) - std::min(ba(0), bb(0));
    const Scalar ch = std::max(ba(3), bb(3)) - std::min(ba(1), bb(1));
    const Scalar enclosing = cw * ch;
    out(i) = enclosing > Scalar(0) ? iou_v - (enclosing - uni) / enclosing : iou_v;
  }
  return out;
}

namespace ad {

/// Differentiable row-paired GIoU over N x 4 corner matrices; returns N x 1.
template <typename Scalar>
Var<Scalar> giou(const Var<Scalar>& a, const Var<Scalar>& b) {
  constexpr Scalar kTiny = Scalar(1e-12);
  auto ax1 = slice_cols(a, 0, 1), ay1 = slice_cols(a, 1, 1);
  auto ax2 = slice_cols(a, 2, 1), ay2 = slice_cols(a, 3, 1);
  auto bx1 = slice_cols(b, 0, 1), by1 = slice_cols(b, 1, 1);
  auto bx2 = slice_cols(b, 2, 1), by2 = slice_cols(b, 3, 1);
  auto iw = clamp_min(minimum(ax2, bx2) - maximum(ax1, bx1), Scalar(0));
  auto ih = clamp_min(minimum(ay2, by2) - maximum(ay1, by1), Scalar(0));
  auto inter = mul(iw, ih);
  auto area_a = mul(ax2 - ax1, ay2 - ay1);
  auto area_b = mul(bx2 - bx1, by2 - by1);
  auto uni = clamp_min(area_a + area_b - inter, kTiny);
  auto iou_v = div(inter, uni);
  auto cw = maximum(ax2, bx2) - minimum(ax1, bx1);
  auto ch = maximum(ay2, by2) - minimum(ay1, by1);
  auto enclosing = clamp_min(mul(cw, ch), kTiny);
  return iou_v - div(enclosing - uni, enclosing);
}

/// Expected corner coordinates under each heatmap channel, with per-axis
/// min/max so that x2 >= x1 and y2 >= y1. Returns N x 4 in grid units.
template <typename Scalar>
Var<Scalar> soft_argmax_box(const Var<Scalar>& heat, int height, int width) {
  if (heat.cols() != static_cast<Eigen::Index>(height) * width || heat.rows() % 2 != 0)
    throw std::invalid_argument("soft_argmax_box: heatmap shape mismatch");
  Mat<Scalar> grid(static_cast<Eigen::Index>(height) * width, 2);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      grid(y * width + x, 0) = static_cast<Scalar>(x);
      grid(y * width + x, 1) = static_cast<Scalar>(y);
    }
  }
  // (2N x HW) * (HW x 2) -> rows (x, y) per channel, then N x 4.
  auto corners = reshape(matmul(heat, constant<Scalar>(std::move(grid))), heat.rows() / 2, 4);
  auto x1 = slice_cols(corners, 0, 1), y1 = slice_cols(corners, 1, 1);
  auto x2 = slice_cols(corners, 2, 1), y2 = slice_cols(corners, 3, 1);
  return concat_cols<Scalar>({minimum(x1, x2), minimum(y1, y2), maximum(x2, x1), maximum(y2, y1)});
}

/// Bilinear RoI sampling with one centered sample per bin.
///
/// feat: (H*W) x C. boxes: N x 4 in grid units. Returns (N*K*K) x C with rows
/// ordered (n, bin_y, bin_x). Samples outside the grid read zeros.
template <typename Scalar>
Var<Scalar> roi_align(const Var<Scalar>& feat, int height, int width, const Var<Scalar>& boxes,
                      int out_size) {
  if (out_size <= 0) throw ConfigError("roi_align: output size must be positive");
  if (feat.rows() != static_cast<Eigen::Index>(height) * width)
    throw std::invalid_argument("roi_align: feature shape mismatch");
  if (boxes.cols() != 4) throw std::invalid_argument("roi_align: boxes must be N x 4");
  const Eigen::Index n = boxes.rows();
  const Eigen::Index c = feat.cols();
  const int k = out_size;
  const Eigen::Index bins = static_cast<Eigen::Index>(k) * k;

  struct Sample {
    int x0, y0;
    Scalar fx, fy;
  };
  std::vector<Sample> samples(static_cast<std::size_t>(n * bins));
  Mat<Scalar> out = Mat<Scalar>::Zero(n * bins, c);
  const auto& f = feat.value();
  auto inside = [&](int x, int y) { return x >= 0 && x < width && y >= 0 && y < height; };

  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar bx1 = boxes.value()(i, 0), by1 = boxes.value()(i, 1);
    const Scalar bw = boxes.value()(i, 2) - bx1, bh = boxes.value()(i, 3) - by1;
    for (int by = 0; by < k; ++by) {
      for (int bx = 0; bx < k; ++bx) {
        const Scalar sx = bx1 + (Scalar(bx) + Scalar(0.5)) * bw / Scalar(k);
        const Scalar sy = by1 + (Scalar(by) + Scalar(0.5)) * bh / Scalar(k);
        const Scalar fl_x = std::floor(sx), fl_y = std::floor(sy);
        Sample s{static_cast<int>(fl_x), static_cast<int>(fl_y), sx - fl_x, sy - fl_y};
        const Eigen::Index row = i * bins + by * k + bx;
        samples[static_cast<std::size_t>(row)] = s;
        auto dst = out.row(row);
        const Scalar w00 = (1 - s.fx) * (1 - s.fy), w10 = s.fx * (1 - s.fy);
        const Scalar w01 = (1 - s.fx) * s.fy, w11 = s.fx * s.fy;
        if (inside(s.x0, s.y0)) dst += w00 * f.row(s.y0 * width + s.x0);
        if (inside(s.x0 + 1, s.y0)) dst += w10 * f.row(s.y0 * width + s.x0 + 1);
        if (inside(s.x0, s.y0 + 1)) dst += w01 * f.row((s.y0 + 1) * width + s.x0);
        if (inside(s.x0 + 1, s.y0 + 1)) dst += w11 * f.row((s.y0 + 1) * width + s.x0 + 1);
      }
    }
  }

  return make_result<Scalar>(
      std::move(out), {feat, boxes},
      [feat, boxes, samples = std::move(samples), height, width, k, n, bins,
       c](const Mat<Scalar>& g) {
        auto inside = [&](int x, int y) { return x >= 0 && x < width && y >= 0 && y < height; };
        Mat<Scalar> dfeat;
        if (feat.requires_grad()) dfeat = Mat<Scalar>::Zero(feat.rows(), c);
        Mat<Scalar> dboxes;
        if (boxes.requires_grad()) dboxes = Mat<Scalar>::Zero(n, 4);
        const auto& f = feat.value();
        for (Eigen::Index i = 0; i < n; ++i) {
          for (int by = 0; by < k; ++by) {
            for (int bx = 0; bx < k; ++bx) {
              const Eigen::Index row = i * bins + by * k + bx;
              const Sample& s = samples[static_cast<std::size_t>(row)];
              const auto grow = g.row(row);
              const bool i00 = inside(s.x0, s.y0), i10 = inside(s.x0 + 1, s.y0);
              const bool i01 = inside(s.x0, s.y0 + 1), i11 = inside(s.x0 + 1, s.y0 + 1);
              if (feat.requires_grad()) {
                if (i00) dfeat.row(s.y0 * width + s.x0) += (1 - s.fx) * (1 - s.fy) * grow;
                if (i10) dfeat.row(s.y0 * width + s.x0 + 1) += s.fx * (1 - s.fy) * grow;
                if (i01) dfeat.row((s.y0 + 1) * width + s.x0) += (1 - s.fx) * s.fy * grow;
                if (i11) dfeat.row((s.y0 + 1) * width + s.x0 + 1) += s.fx * s.fy * grow;
              }
              if (boxes.requires_grad()) {
                const Scalar g00 = i00 ? grow.dot(f.row(s.y0 * width + s.x0)) : Scalar(0);
                const Scalar g10 = i10 ? grow.dot(f.row(s.y0 * width + s.x0 + 1)) : Scalar(0);
                const Scalar g01 = i01 ? grow.dot(f.row((s.y0 + 1) * width + s.x0)) : Scalar(0);
                const Scalar g11 =
                    i11 ? grow.dot(f.row((s.y0 + 1) * width + s.x0 + 1)) : Scalar(0);
                const Scalar dsx = (1 - s.fy) * (g10 - g00) + s.fy * (g11 - g01);
                const Scalar dsy = (1 - s.fx) * (g01 - g00) + s.fx * (g11 - g10);
                const Scalar tx = (Scalar(bx) + Scalar(0.5)) / Scalar(k);
                const Scalar ty = (Scalar(by) + Scalar(0.5)) / Scalar(k);
                dboxes(i, 0) += dsx * (1 - tx);
                dboxes(i, 2) += dsx * tx;
                dboxes(i, 1) += dsy * (1 - ty);
                dboxes(i, 3) += dsy * ty;
              }
            }
          }
        }
        if (feat.requires_grad()) feat.node()->accumulate(dfeat);
        if (boxes.requires_grad()) boxes.node()->accumulate(dboxes);
      });
}

/// Refines N x 4 proposals by (dx, dy, dw, dh) deltas:
/// cx' = cx + dx*w, cy' = cy + dy*h, w' = w*exp(dw), h' = h*exp(dh).
/// Log-scale deltas are clipped at `max_log_scale` before exponentiation.
template <typename Scalar>
Var<Scalar> apply_deltas(const Var<Scalar>& proposals, const Var<Scalar>& deltas,
                         Scalar max_log_scale = Scalar(4)) {
  if (!deltas.value().allFinite()) throw NumericError("apply_deltas: non-finite delta");
  auto x1 = slice_cols(proposals, 0, 1), y1 = slice_cols(proposals, 1, 1);
  auto x2 = slice_cols(proposals, 2, 1), y2 = slice_cols(proposals, 3, 1);
  auto w = x2 - x1;
  auto h = y2 - y1;
  auto cx = x1 + scale(w, Scalar(0.5));
  auto cy = y1 + scale(h, Scalar(0.5));
  auto ncx = cx + mul(slice_cols(deltas, 0, 1), w);
  auto ncy = cy + mul(slice_cols(deltas, 1, 1), h);
  auto nw = mul(w, exp(clamp_max(slice_cols(deltas, 2, 1), max_log_scale)));
  auto nh = mul(h, exp(clamp_max(slice_cols(deltas, 3, 1), max_log_scale)));
  auto half_w = scale(nw, Scalar(0.5));
  auto half_h = scale(nh, Scalar(0.5));
  return concat_cols<Scalar>({ncx - half_w, ncy - half_h, ncx + half_w, ncy + half_h});
}

/// Expands boxes narrower or shorter than `min_size` to `min_size` about their
/// center. Returns the number of rows touched through `expanded`.
template <typename Scalar>
Var<Scalar> enforce_min_size(const Var<Scalar>& boxes, Scalar min_size, int* expanded = nullptr) {
  auto x1 = slice_cols(boxes, 0, 1), y1 = slice_cols(boxes, 1, 1);
  auto x2 = slice_cols(boxes, 2, 1), y2 = slice_cols(boxes, 3, 1);
  auto w = x2 - x1;
  auto h = y2 - y1;
  if (expanded) {
    *expanded = 0;
    for (Eigen::Index i = 0; i < boxes.rows(); ++i) {
      if (w.value()(i, 0) < min_size || h.value()(i, 0) < min_size) ++*expanded;
    }
  }
  auto cx = x1 + scale(w, Scalar(0.5));
  auto cy = y1 + scale(h, Scalar(0.5));
  auto half_w = scale(clamp_min(w, min_size), Scalar(0.5));
  auto half_h = scale(clamp_min(h, min_size), Scalar(0.5));
  return concat_cols<Scalar>({cx - half_w, cy - half_h, cx + half_w, cy + half_h});
}

}  // namespace ad

/// Expectation of grid indices under each heatmap channel (feature frame).
template <typename Scalar>
BoxSet<Scalar> soft_argmax_box(const HeatmapPair<Scalar>& heat) {
  auto corners = ad::soft_argmax_box(ad::detach(heat.values), heat.height, heat.width);
  return BoxSet<Scalar>(corners.value(), BoxFrame::kFeature);
}

/// Value-level RoIAlign; boxes must be in the feature frame.
template <typename Scalar>
Mat<Scalar> roi_align(const FeatureMap<Scalar>& feat, const BoxSet<Scalar>& boxes, int out_size) {
  if (boxes.frame() != BoxFrame::kFeature)
    throw FrameMismatchError("roi_align: boxes must be expressed in the feature frame");
  return ad::roi_align(ad::detach(feat.values), feat.height, feat.width,
                       ad::constant<Scalar>(boxes.coords()), out_size)
      .value();
}

template <typename Scalar>
BoxSet<Scalar> apply_deltas(const BoxSet<Scalar>& proposals, const Mat<Scalar>& deltas) {
  if (deltas.rows() != proposals.size() || deltas.cols() != 4)
    throw std::invalid_argument("apply_deltas: deltas must be N x 4");
  auto out = ad::apply_deltas(ad::constant<Scalar>(proposals.coords()),
                              ad::constant<Scalar>(deltas), std::numeric_limits<Scalar>::max());
  return BoxSet<Scalar>(out.value(), proposals.frame());
}

/// Inverse of apply_deltas for positive-size proposals and targets.
template <typename Scalar>
Mat<Scalar> encode_deltas(const BoxSet<Scalar>& proposals, const BoxSet<Scalar>& targets) {
  if (proposals.size() != targets.size())
    throw std::invalid_argument("encode_deltas: expected paired rows");
  if (proposals.frame() != targets.frame())
    throw FrameMismatchError("encode_deltas: box sets use different frames");
  Mat<Scalar> d(proposals.size(), 4);
  for (Eigen::Index i = 0; i < proposals.size(); ++i) {
    const auto p = proposals.box(i);
    const auto t = targets.box(i);
    const Scalar pw = p(2) - p(0), ph = p(3) - p(1);
    const Scalar tw = t(2) - t(0), th = t(3) - t(1);
    if (!(pw > 0 && ph > 0 && tw > 0 && th > 0))
      throw std::invalid_argument("encode_deltas: boxes must have positive size");
    d(i, 0) = ((t(0) + t(2)) / 2 - (p(0) + p(2)) / 2) / pw;
    d(i, 1) = ((t(1) + t(3)) / 2 - (p(1) + p(3)) / 2) / ph;
    d(i, 2) = std::log(tw / pw);
    d(i, 3) = std::log(th / ph);
  }
  return d;
}

}  // namespace utt
