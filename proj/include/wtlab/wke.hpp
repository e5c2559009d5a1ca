#pragma once

#include "wtlab/quadric.hpp"
#include "wtlab/sde.hpp"

#include <Eigen/Dense>

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace wtl {

class WkeNegativityError : public std::runtime_error {
 public:
  WkeNegativityError(double value, double tau);
  double value;
  double tau;
};

/// Z^j(tau, s) = int_0^tau e^{-g_j (tau - l)} prod_{n != j} sinh(g_n l) / sinh(g_n tau) dl
/// for the damping rates g = (g_1, .., g_4); j in 1..4.  Adaptive Gauss-Kronrod
/// on the overflow-safe form sinh(g l)/sinh(g tau) = e^{g(l - tau)} (1 - e^{-2gl}) / (1 - e^{-2g tau}).
double kernel_Z(int j, double tau, const std::array<double, 4>& gamma, double tol = 1e-13);
double kernel_Z(int j, double tau, const std::array<Eigen::VectorXd, 4>& s, const DampingProfile& damping);

/// Closed form: expanding prod (1 - e^{-2 g_n l}) turns the integrand into
/// eight exponentials.  Loses roughly (g tau)^{-3} relative digits when some
/// g_n tau is small.
double kernel_Z_closed(int j, double tau, const std::array<double, 4>& gamma);

/// All four kernels: closed form when every 2 g_n tau >= 0.02, adaptive otherwise.
std::array<double, 4> kernel_Z_all(double tau, const std::array<double, 4>& gamma);

/// m0 = (b^2 / gamma)(1 - e^{-2 gamma tau}), the solution at eps = 0.
double m0_exact(double gamma, double b, double tau);
double m0_exact(double s_radius, double tau, const DampingProfile& damping, const ForcingProfile& forcing);

/// Gauss-Legendre nodes and weights on [a, b].
struct GaussRule {
  std::vector<double> x;
  std::vector<double> w;
  static GaussRule legendre(int n, double a, double b);
};

/// Node counts of the quadric quadrature.  d = 3: u in spherical coordinates
/// (radius n_u, polar angle n_theta; the azimuth is integrated out by the
/// joint rotation about s), v in polar coordinates on u-perp (n_v, n_psi).
/// d = 2: u polar (n_u, n_theta), v on the line u-perp (n_v).
struct QuadricQuadrature {
  int n_u = 16;
  int n_theta = 12;
  int n_v = 16;
  int n_psi = 12;
  QuadricQuadrature doubled() const { return {2 * n_u, 2 * n_theta, 2 * n_v, 2 * n_psi}; }
  std::size_t nodes(int d) const;
};

/// Radial grid for a spectrum that depends on |s| only (radial damping and
/// forcing).  m is interpolated linearly in |s| and extended by zero beyond
/// the cutoff.
struct WkeGrid {
  int d = 3;
  double cutoff = 3.0;
  std::vector<double> radii;
  QuadricQuadrature quadrature;
  /// Drop every quadruple with a leg beyond the cutoff: the kinetic equation
  /// of a lattice system truncated to |s| <= cutoff.
  bool truncated = false;

  /// nr equispaced radii on [0, cutoff]; nangle sets the angular node counts,
  /// radial node counts follow 4 nangle / 3.
  static WkeGrid radial(int d, double cutoff, int nr, int nangle);
  /// "radial:nr,nangle" or "radial:nr,nangle,truncated".
  static WkeGrid parse(const std::string& text, int d, double cutoff);

  std::size_t size() const { return radii.size(); }
  WkeGrid doubled_quadrature() const;
  double interpolate(const Eigen::VectorXd& m, double r) const;
};

struct KineticConstant {
  enum class Provenance { Configured, EstimatedFromLattice };
  double value = 1.25;
  Provenance provenance = Provenance::Configured;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Set when an estimate's interval left (1, 1 + 2^{2-d}) and the configured value was kept.
  bool fallback = false;
  std::string note;

  /// Midpoint 1 + 2^{1-d} of the admissible interval (1, 1 + 2^{2-d}).
  static KineticConstant configured(int d);
  static KineticConstant configured(int d, double value);
  std::string provenance_name() const;
};

/// Lattice-to-continuum ratios r_L = S_L(f) / (L^{2(d-1)} I(f)) for the unit
/// Gaussian, extrapolated as r_L = C + a / L.
struct CdEstimate {
  std::vector<int> L;
  std::vector<double> ratio;
  KineticConstant constant;
};

/// Extrapolation of given ratios; two values give the exact two-point
/// extrapolation with half-width |C - r_Lmax|, three or more a weighted fit.
KineticConstant extrapolate_Cd(int d, const std::vector<int>& L, const std::vector<double>& ratio);
CdEstimate estimate_Cd_from_lattice(int d, const std::vector<int>& L_list, double radius = 6.0);

/// Rates and forcing sampled on exact radii, with a fast table for gamma(|s|).
struct WkeCoefficients {
  DampingProfile damping;
  ForcingProfile forcing;
  Eigen::VectorXd gamma;  ///< on grid radii
  Eigen::VectorXd b;
  /// gamma as a function of |s|^2, tabulated on [0, x_max] and read back by
  /// cubic interpolation (exact evaluation at the ends).
  std::vector<double> gamma_table;
  double table_step = 0.0;

  static WkeCoefficients make(const WkeGrid& grid, const DampingProfile& damping, const ForcingProfile& forcing);
  double gamma_at_r2(double r2) const;
};

/// K(s, tau)(m) at every grid radius.
Eigen::VectorXd kinetic_integral(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                                 const Eigen::VectorXd& m, double tau);
/// K at one radius |s|.
double kinetic_integral_at(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                           const Eigen::VectorXd& m, double tau, double s_radius);

struct QuadratureCheck {
  double value = 0.0;
  double doubled = 0.0;
  double relative_change = 0.0;
  bool converged = true;  ///< change at most 5%
};

/// Node-doubling comparison of K at one radius.
QuadratureCheck kinetic_convergence(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                                    const Eigen::VectorXd& m, double tau, double s_radius);

struct WkeSolution {
  std::vector<double> radii;
  TimeGrid time;
  double epsilon = 0.0;
  Eigen::MatrixXd m;   ///< radii x (steps + 1)
  Eigen::MatrixXd m0;  ///< closed-form eps = 0 spectrum on the same nodes

  /// m at an arbitrary radius: m0 exactly plus the interpolated m - m0.
  double value(double radius, int step, const WkeCoefficients& coeff) const;
  /// (m - m0) / eps^2 at a time index.
  Eigen::VectorXd remainder(int step) const;
};

struct WkeOptions {
  /// Abort when min m < -negativity_tol * max m.
  double negativity_tol = 1e-8;
};

/// m' = eps^2 K(m) - 2 gamma m + 2 b^2, m(0) = 0, by integrating-factor RK2:
/// the linear part is exact and the collision term is treated by Heun's rule.
WkeSolution solve_wke(const WkeGrid& grid, double eps, const DampingProfile& damping,
                      const ForcingProfile& forcing, const KineticConstant& Cd, const TimeGrid& time,
                      const WkeOptions& options = {});

}  // namespace wtl
