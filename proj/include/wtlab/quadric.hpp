#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace wtl {

/// Radial, non-increasing weight f(z) = profile(|z|) on R^k.
///
/// Two families are provided: Gaussian exp(-|z|^2 / sigma^2) and the
/// polynomial bracket <z>^{-mu} with <z> = max(1, |z|).
class SchwartzWeight {
 public:
  enum class Family { Gaussian, Polynomial, Zero };

  static SchwartzWeight gaussian(double sigma = 1.0);
  static SchwartzWeight polynomial(double mu = 16.0);
  static SchwartzWeight zero();
  /// Parses "gaussian:σ", "poly:μ" or "zero".
  static SchwartzWeight parse(const std::string& text);

  Family family() const { return family_; }
  double parameter() const { return param_; }
  std::string name() const;

  double profile(double r) const;
  double operator()(const Eigen::VectorXd& z) const { return profile(z.norm()); }
  double max_value() const { return profile(0.0); }

  /// sup_{|z| <= domain_radius} <z>^n2 |f(z)|, sampled on a fine radial grid.
  double decay_norm(double n2, double domain_radius) const;

  /// Radius beyond which the profile is below rel * max.
  double decay_radius(double rel) const;

 private:
  SchwartzWeight(Family f, double p) : family_(f), param_(p) {}
  Family family_;
  double param_;
};

struct QuadricSumResult {
  double sum = 0.0;
  /// Upper bound on the contribution of lattice points beyond the radius.
  double tail_bound = 0.0;
  /// Set when tail_bound exceeds 1e-9 of |sum|.
  bool tail_warning = false;
  std::size_t points = 0;
};

/// S_L^{z0}(f) = sum over z = (u, v) in (L^{-1} Z^d)^2 with u.v = 0 and
/// |z - z0| <= radius of f(z - z0).
///
/// Resonance is decided in integer arithmetic: for each u the admissible v
/// are the points of the integer lattice u-perp, enumerated inside the ball.
QuadricSumResult quadric_sum(const SchwartzWeight& f, int d, int L,
                             const Eigen::VectorXd& shift, double radius);

/// Same sum by plain double loop over the integer box; test-size only.
QuadricSumResult quadric_sum_bruteforce(const SchwartzWeight& f, int d, int L,
                                        const Eigen::VectorXd& shift, double radius);

struct QuadricRow {
  int L = 1;
  double shift_norm = 0.0;
  double sum = 0.0;
  double ratio = 0.0;  ///< sum / L^{2(d-1)}
  double tail_bound = 0.0;
  bool tail_warning = false;
};

struct QuadricAsymptoticReport {
  int d = 3;
  std::vector<QuadricRow> rows;
  /// Fitted exponent of S_L against L, one per shift (same order as input).
  std::vector<double> L_exponent;
  /// Slope of log ratio against log <z0> at the largest L; measured only.
  double shift_exponent = 0.0;
  /// d = 2 sums carry an extra log L factor; flagged in the report.
  bool log_correction_expected = false;
};

QuadricAsymptoticReport quadric_asymptotic_report(const SchwartzWeight& f, int d,
                                                  const std::vector<int>& L_list,
                                                  const std::vector<Eigen::VectorXd>& shifts,
                                                  double radius);

/// Integral of f over the continuum quadric u.v = 0 in R^{2d} with the
/// delta(u.v) du dv measure, closed form for the unit Gaussian.
double gaussian_quadric_integral(int d);

}  // namespace wtl
