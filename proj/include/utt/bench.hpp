// Timing and analytic cost of full-frame cross attention versus the
// crop-restricted correlation attention used by the target transformer.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace utt {

struct BenchCase {
  int height = 16;
  int width = 16;
  int targets = 1;
  int channels = 64;
  int pool_size = 7;
};

struct BenchRow {
  BenchCase config;
  double flops_cross = 0.0;  // (HW)^2 N C
  double flops_corr = 0.0;   // K^4 N C
  double time_cross_ms = 0.0;
  double time_corr_ms = 0.0;
  int calls_cross = 0;  // kernel calls per timing sample
  int calls_corr = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  /// Least-squares slope of log(time_cross) against log(HW), per target count.
  std::map<int, double> cross_slope;
  /// (max - min) / min of time_corr across the HW range, per target count.
  std::map<int, double> corr_spread;
};

double cross_attention_flops(int height, int width, int targets, int channels);
double corr_attention_flops(int pool_size, int targets, int channels);

/// Ordinary least-squares slope of y on x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

struct BenchOptions {
  int samples = 9;           // best of this many timing samples
  double min_sample_ms = 5.0;  // each sample repeats the kernel at least this long
  std::uint64_t seed = 7;
};

BenchReport bench_attention(const std::vector<BenchCase>& grid, const BenchOptions& options = {});

/// Cross product of the given sizes and target counts at fixed C and K.
std::vector<BenchCase> bench_grid(const std::vector<int>& sizes, const std::vector<int>& targets,
                                  int channels, int pool_size);

std::string bench_csv(const BenchReport& report);
std::string bench_json(const BenchReport& report);
std::string bench_text(const BenchReport& report);

}  // namespace utt
