#pragma once

#include "wtlab/sde.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace wtl {

class GridMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// |v|_r = L^{-d} sum_s <s>^r sup_tau |v_s(tau)|, <s> = max(1, |s|).
struct XrNorm {
  double r = 0.0;
  double value = 0.0;
};

XrNorm xr_norm(const LatticeSpec& lattice, const TrajectoryData& v, double r);

/// Y evaluated column by column on trajectories.
TrajectoryData nonlinearity_Y(const EffectiveModel& model, const TrajectoryData& v1,
                              const TrajectoryData& v2, const TrajectoryData& v3);

/// Coefficients of the exponentially weighted trapezoid on one step:
///   C_{k+1} = decay C_k + w0 Y_k + w1 Y_{k+1}.
struct DuhamelWeights {
  Eigen::VectorXd decay;
  Eigen::VectorXd w0;
  Eigen::VectorXd w1;
  static DuhamelWeights make(const Eigen::VectorXd& gamma, double h);
};

/// C f(tau) = int_0^tau e^{-gamma (tau - l)} f(l) dl on the grid, C f(0) = 0.
TrajectoryData duhamel(const DuhamelWeights& weights, const TrajectoryData& f);

/// C Y(v1, v2, v3).
TrajectoryData duhamel_cY(const EffectiveModel& model, double h, const TrajectoryData& v1,
                          const TrajectoryData& v2, const TrajectoryData& v3);

/// Ordered triples (m1, m2, m3) of non-negative integers with sum n.
std::vector<std::array<int, 3>> compositions3(int n);

/// Number of ternary trees with m internal nodes: c_0 = 1,
/// c_m = sum_{i+j+k=m-1} c_i c_j c_k.  Throws on uint64 overflow.
std::uint64_t tree_count(int m);

/// Ordered triples with every m_i <= M and m1 + m2 + m3 >= M.
std::vector<std::array<int, 3>> remainder_triples(int M);

/// a^(0..M) on one noise path, their eps-combination and (optionally) the
/// error field w^M and the exact solution.
struct QuasisolutionSet {
  TimeGrid grid;
  std::vector<TrajectoryData> orders;  ///< a^(m), m = 0..M
  std::optional<TrajectoryData> w;
  std::optional<TrajectoryData> exact;

  int M() const { return int(orders.size()) - 1; }
  /// A^M = sum_m eps^m a^(m).
  TrajectoryData combined(double eps) const;
};

/// a^(0) from the exact OU chain on `noise`; a^(m) = i sum_{m1+m2+m3=m-1} C Y(a^(m1), a^(m2), a^(m3)).
/// The model's eps is not used: the a^(m) do not depend on it.
QuasisolutionSet build_quasisolutions(const EffectiveModel& model, const NoisePath& noise, int M);

/// a^(1) = i C Y(a0, a0, a0) on the listed modes only; row r of the result is
/// mode rows[r].  Same values as build_quasisolutions at a fraction of the cost.
TrajectoryData first_order_rows(const EffectiveModel& model, double h, const TrajectoryData& a0,
                                std::span<const std::size_t> rows);

/// R^M = sum over remainder_triples(M) of eps^{m1+m2+m3-M} Y(a^(m1), a^(m2), a^(m3)).
TrajectoryData remainder_RM(const EffectiveModel& model, const QuasisolutionSet& set, double eps);

/// (L y) = i C Y^sym(y, A, A), Y^sym(a, b, c) = Y(a, b, c) + Y(c, a, b) + Y(b, c, a).
/// Real-linear in y (y enters conjugated in one slot).
TrajectoryData apply_linearized(const EffectiveModel& model, double h, const TrajectoryData& y,
                                const TrajectoryData& A);

struct DisparityReport {
  /// sup over steps and modes of the one-step defect of A^M in the effective equation.
  double sup_residual = 0.0;
  /// sup of |defect + i eps^{M+1} (one-step Duhamel of R^M)|; zero up to roundoff.
  double identity_error = 0.0;
};

/// One-step defect D_k = A_{k+1} - e^{-gamma h} A_k - (noise increment) - i eps (w0 Y(A)_k + w1 Y(A)_{k+1}).
DisparityReport disparity_residual(const EffectiveModel& model, const NoisePath& noise,
                                   const QuasisolutionSet& set, double eps);

/// Exponential Euler for
///   w' + gamma w = i eps (Y^sym(w, A, A) + Y^sym(w, w, A) + Y(w) + eps^M R^M),  w(0) = 0.
TrajectoryData solve_w_forward(const EffectiveModel& model, const QuasisolutionSet& set, double eps);

class NonContractionError : public std::runtime_error {
 public:
  NonContractionError(double growth, int iteration);
  double growth_factor;
  int iteration;
};

struct FixedPointOptions {
  int neumann_terms = 3;  ///< N in (Id - (eps L)^N)^{-1}
  int max_iter = 200;
  double tol = 1e-12;     ///< on the X_0 norm of successive differences
  /// Abort when a difference exceeds the previous one by this factor
  /// three times in a row.
  double divergence_factor = 1.0;
};

struct FixedPointResult {
  TrajectoryData w;
  int iterations = 0;
  int inner_iterations = 0;
  double last_update = 0.0;  ///< X_0 norm of the final difference
  double contraction = 0.0;  ///< ratio of the last two differences
};

/// w = F(w) = (Id - eps L)^{-1} i eps C(Y^sym(w, w, A) + Y(w) + eps^M R^M), with
/// (Id - eps L)^{-1} = (sum_{k<N} (eps L)^k)(Id - (eps L)^N)^{-1} and the
/// last inverse realised by its own fixed-point iteration.
FixedPointResult solve_w_fixed_point(const EffectiveModel& model, const QuasisolutionSet& set,
                                     double eps, const FixedPointOptions& options = {});

/// (Id - eps L) w - i eps C(Y^sym(w, w, A) + Y(w) + eps^M R^M); zero at the fixed point.
TrajectoryData fixed_point_residual(const EffectiveModel& model, const QuasisolutionSet& set,
                                    double eps, const TrajectoryData& w);

/// The paper's sufficient thresholds: rho >= (2d+5)/alpha, M >= (2d+7)/alpha + rho,
/// N = ceil((d+3)/alpha) + 1.
struct PaperThresholds {
  double rho_min = 0.0;
  double M_min = 0.0;
  int N = 0;
  /// Whether (M, N) as run reach them.
  bool satisfied = false;
};

PaperThresholds paper_thresholds(int d, double alpha, int M, int N);

}  // namespace wtl
