#include "utt/bench.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "utt/errors.hpp"

namespace utt {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void softmax_rows_inplace(MatF& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

// Every target attends over the whole frame: the target-modulated frame
// features (HW queries) against themselves (HW keys / values).
struct CrossKernel {
  const MatF& frame;
  const MatF& filters;
  MatF modulated, scores, out;
  float sink = 0.0F;

  void operator()() {
    const float scale = 1.0F / std::sqrt(static_cast<float>(frame.cols()));
    for (Eigen::Index n = 0; n < filters.rows(); ++n) {
      modulated = frame.array().rowwise() * filters.row(n).array();
      scores.noalias() = modulated * modulated.transpose();
      scores *= scale;
      softmax_rows_inplace(scores);
      out.noalias() = scores * frame;
      sink += out(0, 0);
    }
  }
};

// The same attention restricted to a K x K crop around each target after the
// correlation reweighting: K^2 queries against K^2 keys per target.
struct CorrKernel {
  const MatF& frame;
  int height, width;
  const MatF& filters;
  const MatF& boxes;  // feature-grid corners per target
  int pool;
  MatF crop, scores, out;
  Eigen::VectorXf weights;
  float sink = 0.0F;

  float sample(float x, float y, Eigen::Index c) const {
    if (x < -1.0F || y < -1.0F || x > static_cast<float>(width) || y > static_cast<float>(height))
      return 0.0F;
    x = std::clamp(x, 0.0F, static_cast<float>(width - 1));
    y = std::clamp(y, 0.0F, static_cast<float>(height - 1));
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, width - 1), y1 = std::min(y0 + 1, height - 1);
    const float ax = x - static_cast<float>(x0), ay = y - static_cast<float>(y0);
    return (1 - ay) * ((1 - ax) * frame(y0 * width + x0, c) + ax * frame(y0 * width + x1, c)) +
           ay * ((1 - ax) * frame(y1 * width + x0, c) + ax * frame(y1 * width + x1, c));
  }

  void operator()() {
    const Eigen::Index bins = static_cast<Eigen::Index>(pool) * pool;
    const Eigen::Index channels = frame.cols();
    const float scale = 1.0F / std::sqrt(static_cast<float>(channels));
    crop.resize(bins, channels);
    for (Eigen::Index n = 0; n < filters.rows(); ++n) {
      const float bw = (boxes(n, 2) - boxes(n, 0)) / static_cast<float>(pool);
      const float bh = (boxes(n, 3) - boxes(n, 1)) / static_cast<float>(pool);
      for (int by = 0; by < pool; ++by) {
        for (int bx = 0; bx < pool; ++bx) {
          const float x = boxes(n, 0) + (static_cast<float>(bx) + 0.5F) * bw;
          const float y = boxes(n, 1) + (static_cast<float>(by) + 0.5F) * bh;
          for (Eigen::Index c = 0; c < channels; ++c) crop(by * pool + bx, c) = sample(x, y, c);
        }
      }
      weights.noalias() = crop * filters.row(n).transpose();
      crop.array().colwise() *= weights.array();
      scores.noalias() = crop * crop.transpose();
      scores *= scale;
      softmax_rows_inplace(scores);
      out.noalias() = scores * crop;
      sink += out(0, 0);
    }
  }
};

// Repetitions so that one timed sample lasts at least min_sample_ms.
template <typename Kernel>
int calibrate(Kernel& kernel, const BenchOptions& options) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  kernel();  // also warms caches and buffers
  const double once = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  return std::max(1, static_cast<int>(std::ceil(options.min_sample_ms / std::max(once, 1e-6))));
}

template <typename Kernel>
double time_ms(Kernel& kernel, int calls) {
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  for (int c = 0; c < calls; ++c) kernel();
  return std::chrono::duration<double, std::milli>(clock::now() - t0).count() / calls;
}

// Interference only ever adds time, so the fastest sample is the estimate.
double fastest(const std::vector<double>& v) { return *std::min_element(v.begin(), v.end()); }

}  // namespace

double cross_attention_flops(int height, int width, int targets, int channels) {
  const double hw = static_cast<double>(height) * width;
  return hw * hw * targets * channels;
}

double corr_attention_flops(int pool_size, int targets, int channels) {
  const double k2 = static_cast<double>(pool_size) * pool_size;
  return k2 * k2 * targets * channels;
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("fit_slope: need two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw UsageError("fit_slope: x values are all equal");
  return sxy / sxx;
}

std::vector<BenchCase> bench_grid(const std::vector<int>& sizes, const std::vector<int>& targets,
                                  int channels, int pool_size) {
  std::vector<BenchCase> grid;
  for (int n : targets) {
    for (int s : sizes) grid.push_back({s, s, n, channels, pool_size});
  }
  return grid;
}

BenchReport bench_attention(const std::vector<BenchCase>& grid, const BenchOptions& options) {
  if (options.samples < 1) throw ConfigError("bench: samples must be >= 1");
  struct Case {
    MatF frame, filters, boxes;
  };
  std::vector<Case> cases;
  BenchReport report;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<float> normal(0.0F, 1.0F);
  for (const auto& cfg : grid) {
    if (cfg.height <= 0 || cfg.width <= 0 || cfg.targets <= 0 || cfg.channels <= 0 || cfg.pool_size <= 0)
      throw ConfigError("bench: all case dimensions must be positive");
    const Eigen::Index positions = static_cast<Eigen::Index>(cfg.height) * cfg.width;
    Case c;
    c.frame.resize(positions, cfg.channels);
    for (Eigen::Index i = 0; i < c.frame.size(); ++i) c.frame.data()[i] = 0.1F * normal(rng);
    c.filters.resize(cfg.targets, cfg.channels);
    for (Eigen::Index i = 0; i < c.filters.size(); ++i) c.filters.data()[i] = 0.1F * normal(rng);
    c.boxes.resize(cfg.targets, 4);
    for (int n = 0; n < cfg.targets; ++n) {
      const float x = static_cast<float>((n * 3) % std::max(1, cfg.width - cfg.pool_size));
      const float y = static_cast<float>((n * 5) % std::max(1, cfg.height - cfg.pool_size));
      c.boxes.row(n) << x, y, x + static_cast<float>(cfg.pool_size), y + static_cast<float>(cfg.pool_size);
    }
    cases.push_back(std::move(c));

    BenchRow row;
    row.config = cfg;
    row.flops_cross = cross_attention_flops(cfg.height, cfg.width, cfg.targets, cfg.channels);
    row.flops_corr = corr_attention_flops(cfg.pool_size, cfg.targets, cfg.channels);
    report.rows.push_back(row);
  }

  std::vector<CrossKernel> cross;
  std::vector<CorrKernel> corr;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto& c = cases[i];
    cross.push_back(CrossKernel{c.frame, c.filters, {}, {}, {}});
    corr.push_back(CorrKernel{c.frame, grid[i].height, grid[i].width, c.filters, c.boxes, grid[i].pool_size, {}, {}, {}, {}});
    report.rows[i].calls_cross = calibrate(cross[i], options);
    report.rows[i].calls_corr = calibrate(corr[i], options);
  }
  // Rounds interleave the cases so clock-speed drift spreads over all of them.
  std::vector<std::vector<double>> t_cross(grid.size()), t_corr(grid.size());
  for (int s = 0; s < options.samples; ++s) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      t_cross[i].push_back(time_ms(cross[i], report.rows[i].calls_cross));
      t_corr[i].push_back(time_ms(corr[i], report.rows[i].calls_corr));
    }
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    report.rows[i].time_cross_ms = fastest(t_cross[i]);
    report.rows[i].time_corr_ms = fastest(t_corr[i]);
    // Keep the kernels' results observable.
    if (!std::isfinite(cross[i].sink + corr[i].sink)) throw NumericError("bench: non-finite kernel output");
  }

  std::set<int> target_counts;
  for (const auto& r : report.rows) target_counts.insert(r.config.targets);
  for (int n : target_counts) {
    std::vector<double> lx, ly;
    double lo = INFINITY, hi = 0.0;
    std::set<double> sizes;
    for (const auto& r : report.rows) {
      if (r.config.targets != n) continue;
      const double hw = static_cast<double>(r.config.height) * r.config.width;
      sizes.insert(hw);
      lx.push_back(std::log(hw));
      ly.push_back(std::log(r.time_cross_ms));
      lo = std::min(lo, r.time_corr_ms);
      hi = std::max(hi, r.time_corr_ms);
    }
    if (sizes.size() >= 2) report.cross_slope[n] = fit_slope(lx, ly);
    report.corr_spread[n] = lo > 0.0 ? (hi - lo) / lo : 0.0;
  }
  return report;
}

std::string bench_csv(const BenchReport& report) {
  std::string out = "height,width,targets,channels,pool_size,flops_cross,flops_corr,time_cross_ms,time_corr_ms\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%d,%d,%d,%.0f,%.0f,%.6f,%.6f\n", r.config.height, r.config.width,
                  r.config.targets, r.config.channels, r.config.pool_size, r.flops_cross, r.flops_corr,
                  r.time_cross_ms, r.time_corr_ms);
    out += buf;
  }
  return out;
}

std::string bench_json(const BenchReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : report.rows) {
    j["rows"].push_back({{"height", r.config.height},
                         {"width", r.config.width},
                         {"targets", r.config.targets},
                         {"channels", r.config.channels},
                         {"pool_size", r.config.pool_size},
                         {"flops_cross", r.flops_cross},
                         {"flops_corr", r.flops_corr},
                         {"flops_ratio", r.flops_cross / r.flops_corr},
                         {"time_cross_ms", r.time_cross_ms},
                         {"time_corr_ms", r.time_corr_ms}});
  }
  for (const auto& [n, s] : report.cross_slope) j["cross_slope"][std::to_string(n)] = s;
  for (const auto& [n, s] : report.corr_spread) j["corr_spread"][std::to_string(n)] = s;
  return j.dump(2);
}

std::string bench_text(const BenchReport& report) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%5s %5s %4s %4s %3s %14s %10s %10s %12s %12s\n", "H", "W", "N", "C", "K",
                "flops_cross", "flops_corr", "ratio", "cross_ms", "corr_ms");
  out += buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%5d %5d %4d %4d %3d %14.0f %10.0f %10.1f %12.4f %12.4f\n", r.config.height,
                  r.config.width, r.config.targets, r.config.channels, r.config.pool_size, r.flops_cross,
                  r.flops_corr, r.flops_cross / r.flops_corr, r.time_cross_ms, r.time_corr_ms);
    out += buf;
  }
  for (const auto& [n, s] : report.cross_slope) {
    std::snprintf(buf, sizeof(buf), "N=%d: cross log-log slope %.3f, corr spread %.1f%%\n", n, s,
                  100.0 * report.corr_spread.at(n));
    out += buf;
  }
  return out;
}

}  // namespace utt
