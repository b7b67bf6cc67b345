// Differentiable layers shared by the backbone and the track transformer.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "utt/autodiff.hpp"
#include "utt/errors.hpp"
#include "utt/geometry.hpp"
#include "utt/image.hpp"

namespace utt {

template <typename Scalar>
using NamedParameter = std::pair<std::string, ad::Var<Scalar>>;

template <typename Scalar>
using ParameterList = std::vector<NamedParameter<Scalar>>;

/// Deterministic weight initializer (scaled uniform fan-in).
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  template <typename Scalar>
  Mat<Scalar> uniform(Eigen::Index rows, Eigen::Index cols, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Mat<Scalar> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng_));
    return m;
  }

  template <typename Scalar>
  Mat<Scalar> fan_in(Eigen::Index fan, Eigen::Index rows, Eigen::Index cols) {
    return uniform<Scalar>(rows, cols, 1.0 / std::sqrt(static_cast<double>(fan)));
  }

 private:
  std::mt19937_64 rng_;
};

struct AttentionConfig {
  int model_dim = 64;
  int heads = 4;
  int ffn_hidden = 256;

  void validate() const {
    if (model_dim <= 0 || heads <= 0 || ffn_hidden <= 0)
      throw ConfigError("attention: dimensions must be positive");
    if (model_dim % heads != 0) throw ConfigError("attention: model_dim must divide by heads");
  }
};

struct BackboneConfig {
  std::vector<int> widths{16, 32, 64};  // hidden stages; a final stage maps to output_dim
  int stride = 8;
  int output_dim = 64;

  void validate() const {
    if (stride <= 0 || (stride & (stride - 1)) != 0)
      throw ConfigError("backbone: stride must be a positive power of two");
    if (output_dim <= 0) throw ConfigError("backbone: output_dim must be positive");
    int downsamples = 0;
    for (int s = stride; s > 1; s /= 2) ++downsamples;
    if (static_cast<int>(widths.size()) + 1 < downsamples)
      throw ConfigError("backbone: too few stages for the requested stride");
    for (int w : widths) {
      if (w <= 0) throw ConfigError("backbone: stage widths must be positive");
    }
  }
};

/// y = x W + b, with W stored in x out.
template <typename Scalar>
struct Linear {
  ad::Var<Scalar> weight;
  ad::Var<Scalar> bias;

  Linear() = default;
  Linear(int in, int out, Initializer& init, bool zero = false) {
    weight = ad::parameter<Scalar>(zero ? Mat<Scalar>::Zero(in, out)
                                        : init.template fan_in<Scalar>(in, in, out));
    bias = ad::parameter<Scalar>(zero ? Mat<Scalar>::Zero(1, out)
                                      : init.template fan_in<Scalar>(in, 1, out));
  }

  ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const {
    return ad::add_row(ad::matmul(x, weight), bias);
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Per-token channel normalization with learned affine (eps = 1e-5).
template <typename Scalar>
struct Norm {
  static constexpr double kEps = 1e-5;
  ad::Var<Scalar> gamma;
  ad::Var<Scalar> beta;

  Norm() = default;
  explicit Norm(int channels)
      : gamma(ad::parameter<Scalar>(Mat<Scalar>::Ones(1, channels))),
        beta(ad::parameter<Scalar>(Mat<Scalar>::Zero(1, channels))) {}

  ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const {
    if (x.cols() < 2) throw std::invalid_argument("norm: need at least two channels");
    return ad::layer_norm_rows(x, gamma, beta, static_cast<Scalar>(kEps));
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

/// Two linear maps with a ReLU in between; callers add the residual and Norm.
template <typename Scalar>
struct FeedForward {
  Linear<Scalar> expand;
  Linear<Scalar> project;

  FeedForward() = default;
  FeedForward(int dim, int hidden, Initializer& init)
      : expand(dim, hidden, init), project(hidden, dim, init) {}

  ad::Var<Scalar> operator()(const ad::Var<Scalar>& x) const {
    return project(ad::relu(expand(x)));
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    expand.collect(out, prefix + ".expand");
    project.collect(out, prefix + ".project");
  }
};

template <typename Scalar>
struct MultiHeadAttention {
  Linear<Scalar> query;
  Linear<Scalar> key;
  Linear<Scalar> value;
  Linear<Scalar> output;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const AttentionConfig& cfg, Initializer& init)
      : query(cfg.model_dim, cfg.model_dim, init),
        key(cfg.model_dim, cfg.model_dim, init),
        value(cfg.model_dim, cfg.model_dim, init),
        output(cfg.model_dim, cfg.model_dim, init),
        heads(cfg.heads) {
    cfg.validate();
  }

  /// Softmax attention of `q_in` rows over `k_in`/`v_in` rows. When `weights`
  /// is given it receives one N x P attention matrix per head.
  ad::Var<Scalar> attend(const ad::Var<Scalar>& q_in, const ad::Var<Scalar>& k_in,
                         const ad::Var<Scalar>& v_in,
                         std::vector<Mat<Scalar>>* weights = nullptr) const {
    if (k_in.rows() == 0) throw UsageError("attention: empty key/value context");
    const auto q = query(q_in);
    const auto k = key(k_in);
    const auto v = value(v_in);
    const Eigen::Index dim = q.cols() / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
    std::vector<ad::Var<Scalar>> parts;
    parts.reserve(static_cast<std::size_t>(heads));
    if (weights) weights->clear();
    for (int h = 0; h < heads; ++h) {
      auto qh = ad::slice_cols(q, h * dim, dim);
      auto kh = ad::slice_cols(k, h * dim, dim);
      auto vh = ad::slice_cols(v, h * dim, dim);
      auto attn = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), scale));
      if (weights) weights->push_back(attn.value());
      parts.push_back(ad::matmul(attn, vh));
    }
    return output(heads == 1 ? parts.front() : ad::concat_cols(parts));
  }

  /// Cross attention: targets query a flattened frame feature.
  ad::Var<Scalar> cross(const ad::Var<Scalar>& targets, const ad::Var<Scalar>& context,
                        std::vector<Mat<Scalar>>* weights = nullptr) const {
    return attend(targets, context, context, weights);
  }

  /// Self attention with positional encodings on queries and keys only.
  ad::Var<Scalar> self(const ad::Var<Scalar>& x, const ad::Var<Scalar>& pos,
                       std::vector<Mat<Scalar>>* weights = nullptr) const {
    auto with_pos = ad::add(x, pos);
    return attend(with_pos, with_pos, x, weights);
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    output.collect(out, prefix + ".output");
  }
};

namespace ad {

/// Correlation attention against one shared map.
/// filters: N x C, feat: P x C -> (N*P) x C with out[n*P+p] = <f_n, x_p> x_p.
template <typename Scalar>
Var<Scalar> corr_att(const Var<Scalar>& filters, const Var<Scalar>& feat) {
  if (filters.cols() != feat.cols()) throw std::invalid_argument("corr_att: channel mismatch");
  const Eigen::Index n = filters.rows(), p = feat.rows(), c = feat.cols();
  Mat<Scalar> scores = filters.value() * feat.value().transpose();  // N x P
  Mat<Scalar> out(n * p, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.middleRows(i * p, p) = feat.value().array().colwise() * scores.row(i).transpose().array();
  }
  return make_result<Scalar>(
      std::move(out), {filters, feat}, [filters, feat, scores, n, p, c](const Mat<Scalar>& g) {
        Mat<Scalar> dscores(n, p);
        for (Eigen::Index i = 0; i < n; ++i) {
          dscores.row(i) = g.middleRows(i * p, p).cwiseProduct(feat.value()).rowwise().sum().transpose();
        }
        if (filters.requires_grad()) filters.node()->accumulate(dscores * feat.value());
        if (feat.requires_grad()) {
          Mat<Scalar> dfeat = dscores.transpose() * filters.value();
          for (Eigen::Index i = 0; i < n; ++i) {
            dfeat += Mat<Scalar>(g.middleRows(i * p, p).array().colwise() *
                                 scores.row(i).transpose().array());
          }
          feat.node()->accumulate(dfeat);
        }
      });
}

/// Correlation attention where target n reads its own block of `per_target`
/// rows: filters N x C, feat (N*Q) x C -> (N*Q) x C.
template <typename Scalar>
Var<Scalar> corr_att_per_target(const Var<Scalar>& filters, const Var<Scalar>& feat,
                                Eigen::Index per_target) {
  if (filters.cols() != feat.cols()) throw std::invalid_argument("corr_att: channel mismatch");
  if (feat.rows() != filters.rows() * per_target)
    throw std::invalid_argument("corr_att: expected N*Q feature rows");
  const Eigen::Index n = filters.rows(), q = per_target, c = feat.cols();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> scores(n * q);
  for (Eigen::Index i = 0; i < n; ++i) {
    scores.segment(i * q, q) = feat.value().middleRows(i * q, q) * filters.value().row(i).transpose();
  }
  Mat<Scalar> out = feat.value().array().colwise() * scores.array();
  return make_result<Scalar>(
      std::move(out), {filters, feat}, [filters, feat, scores, n, q, c](const Mat<Scalar>& g) {
        Eigen::Matrix<Scalar, Eigen::Dynamic, 1> dscores =
            g.cwiseProduct(feat.value()).rowwise().sum();
        if (filters.requires_grad()) {
          Mat<Scalar> df(n, c);
          for (Eigen::Index i = 0; i < n; ++i) {
            df.row(i) = dscores.segment(i * q, q).transpose() * feat.value().middleRows(i * q, q);
          }
          filters.node()->accumulate(df);
        }
        if (feat.requires_grad()) {
          Mat<Scalar> dfeat = g.array().colwise() * scores.array();
          for (Eigen::Index i = 0; i < n; ++i) {
            dfeat.middleRows(i * q, q) += dscores.segment(i * q, q) * filters.value().row(i);
          }
          feat.node()->accumulate(dfeat);
        }
      });
}

/// 2-D convolution over `batch` stacked H x W maps, rows ordered (b, y, x).
/// weight: (k*k*Cin) x Cout with rows ordered (ky, kx, cin).
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, int batch, int height, int width,
                   const Var<Scalar>& weight, const Var<Scalar>& bias, int kernel, int stride,
                   int pad, int* out_height, int* out_width) {
  const Eigen::Index cin = x.cols();
  if (x.rows() != static_cast<Eigen::Index>(batch) * height * width)
    throw std::invalid_argument("conv2d: input shape mismatch");
  if (weight.rows() != static_cast<Eigen::Index>(kernel) * kernel * cin)
    throw std::invalid_argument("conv2d: weight shape mismatch");
  const int ho = (height + 2 * pad - kernel) / stride + 1;
  const int wo = (width + 2 * pad - kernel) / stride + 1;
  *out_height = ho;
  *out_width = wo;
  const Eigen::Index out_rows = static_cast<Eigen::Index>(batch) * ho * wo;
  Mat<Scalar> cols = Mat<Scalar>::Zero(out_rows, weight.rows());
  const auto& xv = x.value();
  for (int b = 0; b < batch; ++b) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const Eigen::Index r = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            cols.row(r).segment((ky * kernel + kx) * cin, cin) =
                xv.row((static_cast<Eigen::Index>(b) * height + iy) * width + ix);
          }
        }
      }
    }
  }
  Mat<Scalar> out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  return make_result<Scalar>(
      std::move(out), {x, weight, bias},
      [x, weight, bias, cols = std::move(cols), batch, height, width, kernel, stride, pad, ho, wo,
       cin](const Mat<Scalar>& g) {
        if (weight.requires_grad()) weight.node()->accumulate(cols.transpose() * g);
        if (bias.requires_grad()) bias.node()->accumulate(g.colwise().sum());
        if (!x.requires_grad()) return;
        Mat<Scalar> dcols = g * weight.value().transpose();
        Mat<Scalar> dx = Mat<Scalar>::Zero(x.rows(), cin);
        for (int b = 0; b < batch; ++b) {
          for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
              const Eigen::Index r = (static_cast<Eigen::Index>(b) * ho + oy) * wo + ox;
              for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= height) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                  const int ix = ox * stride - pad + kx;
                  if (ix < 0 || ix >= width) continue;
                  dx.row((static_cast<Eigen::Index>(b) * height + iy) * width + ix) +=
                      dcols.row(r).segment((ky * kernel + kx) * cin, cin);
                }
              }
            }
          }
        }
        x.node()->accumulate(dx);
      });
}

}  // namespace ad

/// Multiply-add bookkeeping for corr_att over N filters and P positions:
/// N*P dot products of length C (C mults, C-1 adds) plus N*P*C broadcast mults.
constexpr std::int64_t corr_att_flops(std::int64_t n, std::int64_t p, std::int64_t c) {
  return n * p * (2 * c - 1) + n * p * c;
}

template <typename Scalar>
struct Conv2d {
  ad::Var<Scalar> weight;
  ad::Var<Scalar> bias;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  Conv2d(int in, int out, int kernel_size, int stride_, Initializer& init)
      : kernel(kernel_size), stride(stride_), pad(kernel_size / 2) {
    const int fan = kernel * kernel * in;
    weight = ad::parameter<Scalar>(init.template fan_in<Scalar>(fan, fan, out));
    bias = ad::parameter<Scalar>(init.template fan_in<Scalar>(fan, 1, out));
  }

  ad::Var<Scalar> operator()(const ad::Var<Scalar>& x, int batch, int height, int width,
                             int* out_height, int* out_width) const {
    return ad::conv2d(x, batch, height, width, weight, bias, kernel, stride, pad, out_height,
                      out_width);
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
  }
};

/// Sine encoding of box centers normalized by the image size. The first half
/// of the columns encodes x, the second y; each half interleaves sin/cos at
/// geometric frequencies (temperature 10000).
template <typename Scalar>
Mat<Scalar> sine_pos_encoding(const BoxSet<Scalar>& boxes, int dim, double image_width,
                              double image_height) {
  if (dim <= 0 || dim % 4 != 0) throw ConfigError("sine_pos_encoding: dim must divide by 4");
  const int half = dim / 2;
  const double two_pi = 2.0 * 3.14159265358979323846;
  Mat<Scalar> out(boxes.size(), dim);
  for (Eigen::Index i = 0; i < boxes.size(); ++i) {
    const auto b = boxes.box(i);
    const double centers[2] = {static_cast<double>(b(0) + b(2)) / 2.0 / image_width,
                               static_cast<double>(b(1) + b(3)) / 2.0 / image_height};
    for (int axis = 0; axis < 2; ++axis) {
      for (int j = 0; j < half / 2; ++j) {
        const double freq = std::pow(10000.0, 2.0 * j / half);
        const double arg = centers[axis] * two_pi / freq;
        out(i, axis * half + 2 * j) = static_cast<Scalar>(std::sin(arg));
        out(i, axis * half + 2 * j + 1) = static_cast<Scalar>(std::cos(arg));
      }
    }
  }
  return out;
}

/// Strided convolutional feature extractor. The first log2(stride) stages
/// downsample by two; every stage but the last is followed by ReLU, and the
/// output is channel-normalized per position so correlation magnitudes stay
/// bounded while the weights move.
template <typename Scalar>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Initializer& init) : cfg_(cfg) {
    cfg.validate();
    int downsamples = 0;
    for (int s = cfg.stride; s > 1; s /= 2) ++downsamples;
    int in = 3;
    std::vector<int> widths = cfg.widths;
    widths.push_back(cfg.output_dim);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const int stride = static_cast<int>(i) < downsamples ? 2 : 1;
      stages_.emplace_back(in, widths[i], 3, stride, init);
      in = widths[i];
    }
    out_norm_ = Norm<Scalar>(cfg.output_dim);
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Feature-grid dims for an image: ceil(image / stride).
  std::pair<int, int> output_dims(int height, int width) const {
    return {(height + cfg_.stride - 1) / cfg_.stride, (width + cfg_.stride - 1) / cfg_.stride};
  }

  FeatureMap<Scalar> forward(const Image& image) const {
    if (image.channels != 3) throw FormatError("backbone: expected a 3-channel image");
    const int ph = ((image.height + cfg_.stride - 1) / cfg_.stride) * cfg_.stride;
    const int pw = ((image.width + cfg_.stride - 1) / cfg_.stride) * cfg_.stride;
    Mat<Scalar> x = Mat<Scalar>::Zero(static_cast<Eigen::Index>(ph) * pw, 3);
    for (int y = 0; y < image.height; ++y) {
      for (int xx = 0; xx < image.width; ++xx) {
        for (int c = 0; c < 3; ++c) {
          x(y * pw + xx, c) = static_cast<Scalar>(image.at(y, xx, c)) - Scalar(0.5);
        }
      }
    }
    ad::Var<Scalar> h = ad::constant<Scalar>(std::move(x));
    int height = ph, width = pw;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      int oh = 0, ow = 0;
      h = stages_[i](h, 1, height, width, &oh, &ow);
      if (i + 1 < stages_.size()) h = ad::relu(h);
      height = oh;
      width = ow;
    }
    return FeatureMap<Scalar>{out_norm_(h), height, width, cfg_.stride};
  }

  void collect(ParameterList<Scalar>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      stages_[i].collect(out, prefix + ".stage" + std::to_string(i));
    }
    out_norm_.collect(out, prefix + ".norm");
  }

 private:
  BackboneConfig cfg_;
  std::vector<Conv2d<Scalar>> stages_;
  Norm<Scalar> out_norm_;
};

}  // namespace utt
