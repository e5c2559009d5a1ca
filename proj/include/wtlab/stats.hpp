#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace wtl {

/// Streaming mean / variance (Welford), mergeable in a fixed order.
struct RunningStat {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / double(n);
    m2 += delta * (x - mean);
  }
  void merge(const RunningStat& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double total = double(n + o.n);
    const double delta = o.mean - mean;
    mean += delta * double(o.n) / total;
    m2 += o.m2 + delta * delta * double(n) * double(o.n) / total;
    n += o.n;
  }
  double variance() const { return n > 1 ? m2 / double(n - 1) : 0.0; }
  double stderr_mean() const { return n > 1 ? std::sqrt(variance() / double(n)) : 0.0; }
};

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

/// Least squares y = a + b x; with weights w_i = 1 / sigma_i^2 when given.
/// The slope error is the propagated sigma error (weighted) or the residual
/// scatter (unweighted, zero for two points).
LineFit fit_line(std::span<const double> x, std::span<const double> y,
                 std::span<const double> sigma = {});

/// Jackknife estimate from leave-one-out (or leave-one-block-out) replicates.
struct JackknifeResult {
  std::complex<double> value;
  double stderr_value = 0.0;
};

/// Standard error from G replicate estimates of a statistic.
double jackknife_stderr(std::span<const std::complex<double>> replicates);

}  // namespace wtl
