#pragma once

#include "wtlab/lattice.hpp"
#include "wtlab/rng.hpp"
#include "wtlab/stats.hpp"

#include <Eigen/Dense>

#include <complex>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

namespace wtl {

using Complex = std::complex<double>;
/// Complex amplitudes, one per lattice mode.
using Field = Eigen::VectorXcd;
/// Mode-by-time array; column k is the field at time k h.
using TrajectoryData = Eigen::MatrixXcd;

/// Damping rates gamma_s = gamma0(|s|^2); default (1 + |s|^2)^{r_*}.
class DampingProfile {
 public:
  static DampingProfile power_law(double r_star);
  /// User supplied monotone gamma0(y), y = |s|^2.  Must satisfy gamma0 >= 1.
  static DampingProfile custom(std::function<double(double)> gamma0);
  /// gamma = 0; only for conservation checks of the Hamiltonian part.
  static DampingProfile disabled();

  double operator()(double s2) const;
  Eigen::VectorXd on(const LatticeSpec& lattice) const;
  bool is_disabled() const { return disabled_; }
  double r_star() const { return r_star_; }

 private:
  std::function<double(double)> gamma0_;
  double r_star_ = 0.0;
  bool disabled_ = false;
};

/// Forcing amplitudes b(s) = amplitude * exp(-|s|^2 / scale^2).
class ForcingProfile {
 public:
  static ForcingProfile gaussian(double scale = 1.0, double amplitude = 1.0);
  static ForcingProfile disabled();

  double operator()(double s2) const;
  Eigen::VectorXd on(const LatticeSpec& lattice) const;
  bool is_disabled() const { return amplitude_ == 0.0; }
  double scale() const { return scale_; }
  double amplitude() const { return amplitude_; }
  /// b at the truncation edge relative to b(0).
  double edge_ratio(double K) const { return is_disabled() ? 0.0 : (*this)(K * K) / amplitude_; }

 private:
  double scale_ = 1.0;
  double amplitude_ = 1.0;
};

/// Nonlinearity strength eps and the lattice prefactor L^{-d+1}
/// (divided by sqrt(ln L) for d = 2 when the log correction is on).
struct ScalingSpec {
  double alpha = 0.0;  ///< 0 when eps was given directly
  double epsilon = 0.0;
  double prefactor = 1.0;
  bool d2_log_correction = false;

  /// eps = L^{-alpha}; alpha in (0, 1/2] for d >= 3 and (0, 1/6] for d = 2.
  static ScalingSpec from_alpha(int d, int L, double alpha, bool d2_log_correction = true);
  static ScalingSpec with_epsilon(int d, int L, double epsilon, bool d2_log_correction = true);
  static double lattice_prefactor(int d, int L, bool d2_log_correction);
};

struct TimeGrid {
  double h = 0.01;
  int steps = 100;

  static TimeGrid uniform(double h, double T);
  double T() const { return h * steps; }
  double time(int k) const { return h * k; }
  /// Grid index of tau; throws when tau is not a grid time.
  int index_of(double tau) const;
  bool operator==(const TimeGrid& o) const { return h == o.h && steps == o.steps; }
};

/// Independent complex Gaussians zeta_{s,k}, E|zeta|^2 = 1, driving step k.
struct NoisePath {
  TimeGrid grid;
  Eigen::MatrixXcd zeta;  ///< modes x steps

  static NoisePath draw(std::size_t modes, const TimeGrid& grid, Rng& rng);
  NoisePath scaled(double lambda) const;
};

/// Everything the effective equation needs, shared read-only between samples.
struct EffectiveModel {
  std::shared_ptr<const LatticeSpec> lattice;
  std::shared_ptr<const ResonanceTable> table;
  Eigen::VectorXd gamma;
  Eigen::VectorXd forcing;
  ScalingSpec scaling;

  static EffectiveModel make(std::shared_ptr<const LatticeSpec> lattice,
                             std::shared_ptr<const ResonanceTable> table,
                             const DampingProfile& damping, const ForcingProfile& forcing,
                             const ScalingSpec& scaling);
  std::size_t modes() const { return std::size_t(gamma.size()); }
};

/// Per-mode coefficients of one step of length h for the linear part.
struct LinearPropagator {
  double h = 0.0;
  Eigen::VectorXd decay;        ///< e^{-gamma h}
  Eigen::VectorXd noise_scale;  ///< b sqrt((1 - e^{-2 gamma h}) / gamma)
  Eigen::VectorXd phi1_h;       ///< (1 - e^{-gamma h}) / gamma = h phi1(gamma h)

  static LinearPropagator make(const Eigen::VectorXd& gamma, const Eigen::VectorXd& forcing, double h);
};

/// phi1(x) = (1 - e^{-x}) / x and phi2(x) = (x - 1 + e^{-x}) / x^2, series near 0.
double phi1(double x);
double phi2(double x);

/// Exact Ornstein-Uhlenbeck update a <- e^{-gamma h} a + b sqrt((1-e^{-2 gamma h})/gamma) zeta.
void ou_exact_step(Field& a, const LinearPropagator& prop, const Eigen::Ref<const Eigen::VectorXcd>& zeta);
void ou_exact_step(Field& a, const LinearPropagator& prop, Rng& rng);

/// Trajectory of the linear (eps = 0) equation on a noise path, a(0) = 0.
TrajectoryData ou_trajectory(const LinearPropagator& prop, const NoisePath& noise);

/// Y_s(v1, v2, v3) = prefactor * sum_table sign * v1_{s1} v2_{s2} conj(v3_{s3}).
void nonlinearity_Y(const ResonanceTable& table, double prefactor,
                    const Eigen::Ref<const Eigen::VectorXcd>& v1,
                    const Eigen::Ref<const Eigen::VectorXcd>& v2,
                    const Eigen::Ref<const Eigen::VectorXcd>& v3, Eigen::Ref<Eigen::VectorXcd> out);
Field nonlinearity_Y(const ResonanceTable& table, double prefactor,
                     const Eigen::Ref<const Eigen::VectorXcd>& v1,
                     const Eigen::Ref<const Eigen::VectorXcd>& v2,
                     const Eigen::Ref<const Eigen::VectorXcd>& v3);
/// Single row of Y, for targets that only need a few modes.
Complex nonlinearity_Y_row(const ResonanceTable& table, double prefactor, std::size_t s,
                           const Eigen::Ref<const Eigen::VectorXcd>& v1,
                           const Eigen::Ref<const Eigen::VectorXcd>& v2,
                           const Eigen::Ref<const Eigen::VectorXcd>& v3);

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(double time, std::size_t mode);
  double time;
  std::size_t mode;
};

class StiffnessError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct IntegrateOptions {
  /// Require h <= guard / max gamma whenever eps != 0.
  double stiffness_guard = 0.1;
  bool enforce_stiffness_guard = true;
};

void check_stiffness(const Eigen::VectorXd& gamma, double h, const IntegrateOptions& options);

struct FieldTrajectory {
  TimeGrid grid;
  TrajectoryData values;
  std::uint64_t seed = 0;
  std::uint64_t sample_id = 0;
};

/// Exponential Euler for the effective equation:
///   a <- e^{-gamma h} a + i eps h phi1(gamma h) Y(a) + exact OU increment.
TrajectoryData integrate_effective(const EffectiveModel& model, const NoisePath& noise,
                                   const Field& initial, const IntegrateOptions& options = {});
FieldTrajectory integrate_effective(const EffectiveModel& model, const TimeGrid& grid,
                                    std::uint64_t master_seed, std::uint64_t sample_id,
                                    const IntegrateOptions& options = {});

/// Mean and standard error of |a_s(tau)|^2 across samples.
struct SpectrumEstimate {
  std::vector<double> times;
  Eigen::MatrixXd mean;    ///< modes x times
  Eigen::MatrixXd stderr;  ///< modes x times
  std::size_t samples = 0;
};

/// Streaming reducer; merge() in a fixed order keeps results reproducible.
class SpectrumAccumulator {
 public:
  SpectrumAccumulator(std::size_t modes, const TimeGrid& grid, std::vector<double> times);
  /// One row per group; a sample contributes the group mean of |a_s|^2.
  SpectrumAccumulator(std::vector<std::vector<std::size_t>> groups, const TimeGrid& grid,
                      std::vector<double> times);
  void push(const TrajectoryData& trajectory);
  void merge(const SpectrumAccumulator& other);
  SpectrumEstimate estimate() const;
  std::size_t count() const { return stats_.empty() ? 0 : stats_.front().n; }

 private:
  std::size_t modes_;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<double> times_;
  std::vector<int> columns_;
  std::vector<RunningStat> stats_;  ///< time-major
};

SpectrumEstimate estimate_spectrum(std::span<const FieldTrajectory> ensemble,
                                   const std::vector<double>& times);

/// Closed form E|a_s^{(0)}(tau)|^2 = (b^2 / gamma)(1 - e^{-2 gamma tau}).
double ou_variance(double gamma, double b, double tau);
/// E a_s^{(0)}(t1) conj(a_s^{(0)}(t2)).
double ou_covariance(double gamma, double b, double t1, double t2);

}  // namespace wtl
