#pragma once

#include "wtlab/quasi.hpp"
#include "wtlab/rng.hpp"

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wtl {

class CombinatoricsGuardError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Set partition of {0..n-1}; blocks stored as bit masks in the order of
/// their smallest element.
struct Partition {
  static constexpr int kMaxSize = 12;
  std::uint8_t count = 0;
  std::array<std::uint16_t, kMaxSize> masks{};

  int size() const { return count; }
  std::uint32_t block(int i) const { return masks[std::size_t(i)]; }
  std::vector<std::vector<int>> blocks() const;
};

/// All partitions of an n-set, 1 <= n <= 12, in lexicographic order of their
/// restricted growth strings.  Memoised per n; the reference stays valid.
const std::vector<Partition>& partitions(int n);

/// Partitions of X ⊔ Y in which every block meets Y.  Elements 0..|X|-1 are X,
/// the next |Y| are Y.
std::vector<Partition> partitions_p2(int x_size, int y_size);

/// Value of a joint moment or cumulant of the sub-multiset selected by a mask.
using SubsetFunction = std::function<std::complex<double>(std::uint32_t mask)>;

/// kappa(V) = sum_pi (-1)^{|pi|-1} (|pi|-1)! prod_{A in pi} M(A), V = {0..n-1}.
std::complex<double> cumulant_from_moments(const SubsetFunction& moment, int n);
/// M(V) = sum_pi prod_{A in pi} kappa(A).
std::complex<double> moments_from_cumulants(const SubsetFunction& cumulant, int n);

/// Same sums for an arbitrary sub-multiset given as a mask of the full index set.
std::complex<double> cumulant_of_subset(const SubsetFunction& moment, std::uint32_t mask);

/// A complex random vector with finitely many atoms; moments are exact.
struct DiscreteLaw {
  std::vector<Eigen::VectorXcd> atoms;
  std::vector<double> probabilities;

  int dimension() const { return atoms.empty() ? 0 : int(atoms.front().size()); }
  std::complex<double> moment(std::uint32_t mask) const;
  /// Uniform law on the rows of a sample matrix (the empirical measure).
  static DiscreteLaw empirical(const Eigen::MatrixXcd& samples);
};

/// |kappa(V ⊔ {prod W}) - sum_{pi in P2(V ⊔ W)} prod kappa(A)| for the law whose
/// first v_size components are V and the next w_size are W.
double malyshev_check(int v_size, int w_size, const DiscreteLaw& law);

/// One entry of a cumulant request: a^(order)_mode(time), conjugated or not.
struct CumulantEntry {
  int order = 0;
  std::size_t mode = 0;
  bool conjugated = false;
  double time = 0.0;
};

struct CumulantRequest {
  std::vector<CumulantEntry> entries;

  std::size_t size() const { return entries.size(); }
  /// Number of non-conjugated entries |I_+|.
  int p() const;
  int degree() const;
  int max_order() const;
  /// |I_+| = |I_-| and sum I_+ = sum I_-.
  bool balanced(const LatticeSpec& lattice) const;
  /// Additionally sum |xi|^2 = sum |sigma|^2 (reported, never asserted).
  bool energy_balanced(const LatticeSpec& lattice) const;

  /// "a:1:+:(1,0,0)@0.5, a:0:-:(1,0,0)@0.5": order, sign (+ plain, - conjugated),
  /// continuum mode coordinates that must lie on the lattice, time.
  static CumulantRequest parse(const std::string& text, const LatticeSpec& lattice);
  std::string to_string(const LatticeSpec& lattice) const;
};

enum class ErrorMethod { Jackknife, Bootstrap };

struct EstimatorOptions {
  /// Jackknife groups; samples are split into this many contiguous blocks
  /// (leave-one-out when it is at least the sample count).
  std::size_t groups = 500;
  ErrorMethod method = ErrorMethod::Jackknife;
  std::size_t bootstrap_replicates = 400;
  std::uint64_t bootstrap_seed = 0;
};

struct CumulantEstimate {
  std::complex<double> value;
  double stderr = 0.0;
  int p = 0;
  int degree = 0;
  bool balanced = false;
  std::size_t samples = 0;

  /// {value_re, value_im, stderr, p, degJ, balanced}
  std::string to_json() const;
};

/// Joint cumulant of the columns of `samples` (rows are samples) with a
/// resampling error bar.
CumulantEstimate estimate_cumulant(const Eigen::MatrixXcd& samples, const EstimatorOptions& options = {});

/// Mean of the cumulants of several column groups, with the error bar of the
/// mean computed on the same resamples (correlations included).
CumulantEstimate estimate_cumulant_family(const Eigen::MatrixXcd& samples,
                                          const std::vector<std::vector<int>>& groups,
                                          const EstimatorOptions& options = {});

/// Entry values of one quasisolution sample; conjugation applied.
Eigen::VectorXcd request_values(const QuasisolutionSet& set, const std::vector<CumulantEntry>& entries);

/// Generates quasisolution samples on demand from (model, grid, M, seed).
struct QuasiEnsemble {
  const EffectiveModel* model = nullptr;
  TimeGrid grid;
  int M = 0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;

  QuasisolutionSet sample(std::size_t i) const;
  /// Rows = samples, columns = entries, computed in parallel blocks.
  Eigen::MatrixXcd gather(const std::vector<CumulantEntry>& entries) const;
};

/// Requires at least 100 samples, at most 8 entries and orders within M.
CumulantEstimate empirical_cumulant(std::span<const QuasisolutionSet> ensemble, const LatticeSpec& lattice,
                                    const CumulantRequest& request, const EstimatorOptions& options = {});
CumulantEstimate empirical_cumulant(const QuasiEnsemble& ensemble, const CumulantRequest& request,
                                    const EstimatorOptions& options = {});

struct SelectionScanRow {
  CumulantRequest request;
  CumulantEstimate estimate;
  double ratio = 0.0;  ///< |kappa| / SE
  bool energy_balanced = false;
};

struct SelectionScanReport {
  std::vector<SelectionScanRow> unbalanced;
  std::vector<SelectionScanRow> balanced;
  double max_unbalanced_ratio = 0.0;
};

struct SelectionScanOptions {
  int draws = 50;
  int max_size = 4;
  /// Modes are drawn from |s| <= mode_radius.
  double mode_radius = 1.0;
  std::vector<double> times;
  /// Balanced requests drawn alongside for reference.
  int balanced_draws = 10;
  std::uint64_t seed = 0;
};

/// Random momentum-unbalanced requests, whose cumulants must vanish, and
/// balanced ones for reference.
SelectionScanReport selection_rule_scan(const QuasiEnsemble& ensemble, const SelectionScanOptions& options,
                                        const EstimatorOptions& estimator = {});

struct ScalingPoint {
  int L = 0;
  std::complex<double> value;
  double stderr = 0.0;
};

struct ScalingFit {
  double slope = 0.0;
  double slope_stderr = 0.0;
  double ci_low = 0.0;   ///< 95% interval
  double ci_high = 0.0;
  double expected = 0.0;  ///< -(d-1)(p-1)
};

/// Fit of log|kappa| against log L, weighted by SE/|kappa| when all error bars are positive.
ScalingFit scaling_fit(const std::vector<ScalingPoint>& points, int d, int p);

}  // namespace wtl
