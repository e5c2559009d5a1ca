#pragma once

#include "wtlab/cumulants.hpp"
#include "wtlab/quadric.hpp"
#include "wtlab/quasi.hpp"
#include "wtlab/sde.hpp"
#include "wtlab/wke.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wtl {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InterpolationDomainError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

inline constexpr const char* kManifestSchema = "wtlab.run/1";

/// Every parameter of a run.  Text form is one "key = value" per line, '#'
/// starts a comment; unknown keys and out-of-range values are rejected.
struct RunConfig {
  int d = 3;
  int L = 2;
  double K = 1.0;
  double alpha = 0.5;
  /// Direct eps; when set, alpha is not used (and must not be given).
  std::optional<double> epsilon;
  bool d2_log_correction = true;
  double r_star = 2.5;
  double b_scale = 1.0;
  double b_amplitude = 1.0;
  double h = 0.01;
  double T = 1.0;
  std::size_t samples = 1000;
  std::uint64_t seed = 1;
  /// Spectrum times; empty means {T}.
  std::vector<double> times;
  /// Average |a_s|^2 over lattice symmetry orbits in the comparison.
  bool orbit_average = true;
  /// Comparison window |s| <= compare_radius.
  double compare_radius = 2.0;
  /// Samples written to the binary trajectory store.
  std::size_t store_samples = 0;

  int M = 0;
  std::size_t quasi_samples = 0;  ///< 0 disables the quasisolution spectra

  std::string cumulant_request;  ///< empty disables the cumulant stage
  ErrorMethod cumulant_method = ErrorMethod::Jackknife;

  std::string wke_grid = "radial:31,12";
  double wke_h = 0.05;
  std::string cd_mode = "configured";  ///< configured | estimated
  std::optional<double> cd_value;
  std::vector<int> cd_L = {8, 16};

  std::vector<std::string> stages = {"simulate", "wke", "compare"};

  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  /// Applies one "key = value" pair with its range check.
  void set(const std::string& key, const std::string& value);
  /// Cross-field checks; throws ConfigError.
  void validate() const;

  ScalingSpec scaling() const;
  DampingProfile damping() const;
  ForcingProfile forcing() const;
  TimeGrid grid() const;
  std::vector<double> spectrum_times() const;
  bool has_stage(const std::string& stage) const;

  /// Sorted "key = value" lines of the keys a stage depends on ("all" for every key).
  std::string canonical(const std::string& stage = "all") const;
  static const std::vector<std::string>& keys();
};

/// Git-style content hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

/// Lattice modes in groups; orbits are classes under coordinate permutations
/// and sign changes, under which radial damping, forcing and the resonance
/// set are invariant.
struct ModeGroups {
  std::vector<std::vector<std::size_t>> members;
  std::vector<IntVec> representative;
  std::vector<double> radius;

  static ModeGroups singletons(const LatticeSpec& lattice);
  static ModeGroups orbits(const LatticeSpec& lattice);
  std::size_t size() const { return members.size(); }
};

struct EnsembleSpectra {
  SpectrumEstimate modes;
  SpectrumEstimate groups;
};

/// Writes (run_id, sample_id, time_index, mode_index, re, im) records,
/// little-endian u64 u64 u32 u32 f64 f64.
class TrajectoryStore {
 public:
  TrajectoryStore(const std::filesystem::path& path, std::uint64_t run_id);
  void write(std::uint64_t sample_id, const TrajectoryData& values);
  std::size_t records() const { return records_; }

 private:
  std::ofstream file_;
  std::uint64_t run_id_;
  std::size_t records_ = 0;
};

struct StoredRecord {
  std::uint64_t run_id;
  std::uint64_t sample_id;
  std::uint32_t time_index;
  std::uint32_t mode_index;
  double re;
  double im;
};
std::vector<StoredRecord> read_trajectory_store(const std::filesystem::path& path);

/// Monte Carlo spectrum of the effective equation, per mode and per group.
/// Samples i < store_samples also go to the store.
EnsembleSpectra simulate_spectra(const EffectiveModel& model, const TimeGrid& grid, std::uint64_t seed,
                                 std::size_t samples, const std::vector<double>& times, const ModeGroups& groups,
                                 TrajectoryStore* store = nullptr, std::size_t store_samples = 0);

/// Spectra N^m = E|A^m_s|^2 of the quasisolutions, m = 0..M, per group.
std::vector<SpectrumEstimate> quasi_spectra(const QuasiEnsemble& ensemble, const std::vector<double>& times,
                                            const ModeGroups& groups);

struct ComparisonRow {
  std::size_t group = 0;
  IntVec representative = IntVec::Zero();
  double radius = 0.0;
  double tau = 0.0;
  double n = 0.0;
  double n_stderr = 0.0;
  double m = 0.0;
  double deviation = 0.0;           ///< n - m
  double normalized = 0.0;          ///< |n - m| / eps^3 (NaN at eps = 0)
  double normalized_stderr = 0.0;   ///< n_stderr / eps^3
  std::vector<double> quasi;        ///< N^m, m = 0..M
  std::vector<double> quasi_stderr;
};

struct ComparisonReport {
  int L = 0;
  double epsilon = 0.0;
  std::vector<ComparisonRow> rows;

  /// Row with the largest |n - m| / eps^3 among |s| <= radius at tau.
  const ComparisonRow& worst(double tau, double radius) const;
};

/// Three-way comparison of the MC spectrum, the quasisolution spectra and the
/// WKE.  Group rows of `mc` follow `groups`; eps normalizes the deviations.
ComparisonReport compare_spectra(const SpectrumEstimate& mc, const ModeGroups& groups, int L,
                                 const WkeSolution& wke, const WkeCoefficients& coeff,
                                 const std::vector<SpectrumEstimate>& quasi, double eps);

/// Two-L trend of the worst normalized deviation; passes when the larger L
/// does not exceed the smaller by more than the combined standard error.
struct TrendCheck {
  int L_small = 0;
  int L_large = 0;
  double worst_small = 0.0;
  double stderr_small = 0.0;
  double worst_large = 0.0;
  double stderr_large = 0.0;
  double increase = 0.0;
  double combined_stderr = 0.0;
  bool passes = false;
};

TrendCheck trend_check(const ComparisonReport& small, const ComparisonReport& large, double tau, double radius);

/// Inputs of the figure-equivalent CSV files; absent parts give header-only files.
struct PlotsData {
  std::vector<ComparisonReport> comparisons;
  std::vector<ScalingPoint> scaling;
  std::optional<ScalingFit> scaling_fit;
  std::vector<QuadricRow> quadric;
};

/// spectrum_vs_wke.csv, cumulant_scaling.csv, quadric_ratios.csv in long format
/// (L, radius, tau, quantity, value, error, error_kind).  Returns the paths.
std::vector<std::filesystem::path> emit_plots_data(const PlotsData& data, const std::filesystem::path& dir);

/// Spectrum CSV: |s|, sx, sy, sz, tau, mean, stderr, n.
void write_spectrum_csv(const std::filesystem::path& path, const LatticeSpec& lattice, const SpectrumEstimate& spectrum);
/// WKE CSV: |s|, tau, m, m0.
void write_wke_csv(const std::filesystem::path& path, const WkeSolution& solution);

struct StageRecord {
  std::string name;
  std::string key;
  std::string status;  ///< ok | cached | failed | skipped
  std::string error;
  std::vector<std::string> artifacts;
};

struct RunResult {
  bool ok = true;
  std::filesystem::path manifest;
  std::vector<StageRecord> stages;
  std::optional<ComparisonReport> comparison;
};

/// Runs the configured stages into out_dir.  Stage outputs live in
/// out_dir/cache/<stage>-<key> keyed on the hash of the stage's config subset
/// and upstream keys, so unchanged stages are reused.  A failing stage is
/// recorded with its name; stages depending on it are skipped.
RunResult run_experiment(const RunConfig& config, const std::filesystem::path& out_dir);

/// Fixed-notation number formatting shared by all CSV writers.
std::string format_number(double x);

}  // namespace wtl
