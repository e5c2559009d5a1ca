#include "wtlab/stats.hpp"

namespace wtl {

LineFit fit_line(std::span<const double> x, std::span<const double> y,
                 std::span<const double> sigma) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("fit_line needs two or more points");
  const bool weighted = !sigma.empty();
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = weighted ? 1.0 / (sigma[i] * sigma[i]) : 1.0;
    sw += w;
    sx += w * x[i];
    sy += w * y[i];
    sxx += w * x[i] * x[i];
    sxy += w * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  if (!(std::abs(det) > 0.0)) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = (sw * sxy - sx * sy) / det;
  fit.intercept = (sxx * sy - sx * sxy) / det;
  if (weighted) {
    fit.slope_stderr = std::sqrt(sw / det);
  } else if (n > 2) {
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[i] - fit.intercept - fit.slope * x[i];
      rss += r * r;
    }
    fit.slope_stderr = std::sqrt(rss / double(n - 2) * sw / det);
  }
  return fit;
}

double jackknife_stderr(std::span<const std::complex<double>> replicates) {
  const std::size_t g = replicates.size();
  if (g < 2) return 0.0;
  std::complex<double> mean = 0.0;
  for (const auto& r : replicates) mean += r;
  mean /= double(g);
  double acc = 0.0;
  for (const auto& r : replicates) acc += std::norm(r - mean);
  return std::sqrt(double(g - 1) / double(g) * acc);
}

}  // namespace wtl
