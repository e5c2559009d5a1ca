#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace wtl {

/// Integer representative z of a lattice mode s = z / L.  Always three
/// components; for d = 2 the last one is identically zero.
using IntVec = Eigen::Vector3i;

inline std::int64_t dot(const IntVec& a, const IntVec& b) {
  return std::int64_t(a[0]) * b[0] + std::int64_t(a[1]) * b[1] + std::int64_t(a[2]) * b[2];
}
inline std::int64_t norm2(const IntVec& a) { return dot(a, a); }

class LatticeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Exact rational number numerator / denominator.
struct Rational {
  std::int64_t numerator = 0;
  std::int64_t denominator = 1;
  double value() const { return double(numerator) / double(denominator); }
  bool is_zero() const { return numerator == 0; }
};

/// A point of Z^d_L carried together with the lattice it lives on.
struct LatticePoint {
  IntVec z = IntVec::Zero();
  int L = 1;
  int d = 3;
};

/// Truncated lattice Z^d_L ∩ {|s| <= K}.
///
/// Modes are stored as integer vectors z = L s, sorted by |z|^2 and then
/// lexicographically.  The mode set is closed under negation and coordinate
/// permutation; lookup of an integer vector is O(1) through a dense box map.
class LatticeSpec {
 public:
  LatticeSpec(int d, int L, double K);

  int d() const { return d_; }
  int L() const { return L_; }
  double K() const { return K_; }
  /// Largest coordinate magnitude any stored mode can have, floor(K L).
  int box_radius() const { return box_; }
  /// Integer bound on |z|^2 for stored modes.
  std::int64_t radius2_bound() const { return r2max_; }

  std::size_t size() const { return modes_.size(); }
  const IntVec& mode(std::size_t i) const { return modes_[i]; }
  const std::vector<IntVec>& modes() const { return modes_; }

  /// Continuum coordinates s = z / L.
  Eigen::Vector3d coords(std::size_t i) const { return modes_[i].cast<double>() / double(L_); }
  double radius(std::size_t i) const { return std::sqrt(double(norm2(modes_[i]))) / double(L_); }
  double radius2(std::size_t i) const { return double(norm2(modes_[i])) / (double(L_) * L_); }

  /// Index of z, or -1 when z is not a stored mode.
  int index_of(const IntVec& z) const;
  bool contains(const IntVec& z) const { return index_of(z) >= 0; }

  LatticePoint point(std::size_t i) const { return {modes_[i], L_, d_}; }

  /// Whether an integer vector lies within the truncation ball.
  bool in_ball(const IntVec& z) const;

 private:
  int d_;
  int L_;
  double K_;
  int box_;
  std::int64_t r2max_;
  std::vector<IntVec> modes_;
  std::vector<int> lookup_;
  std::size_t box_offset(const IntVec& z) const;
};

/// |s1|^2 + |s2|^2 - |s3|^2 - |s|^2 as an exact fraction over L^2.
Rational omega(const LatticePoint& s1, const LatticePoint& s2, const LatticePoint& s3,
               const LatticePoint& s);

/// Sign of the resonance coefficient: +1 when s1+s2 = s3+s with s1, s2 != s3,
/// -1 on the diagonal s1 = s2 = s3 = s, and 0 otherwise.
int delta_prime(const LatticePoint& s1, const LatticePoint& s2, const LatticePoint& s3,
                const LatticePoint& s);

struct ResonanceEntry {
  std::int32_t i1;
  std::int32_t i2;
  std::int32_t i3;
  std::int32_t sign;
};

class MemoryBudgetError : public std::runtime_error {
 public:
  MemoryBudgetError(std::size_t projected, std::size_t budget);
  std::size_t projected_entries;
  std::size_t budget_entries;
};

/// All resonant quadruples of a truncated lattice grouped by target mode.
///
/// Row s holds every (i1, i2, i3) with s1 + s2 = s3 + s, (s1 - s).(s2 - s) = 0
/// and delta_prime != 0, stored contiguously (CSR layout).  Immutable after
/// construction and safe to share between threads.
class ResonanceTable {
 public:
  ResonanceTable() = default;
  ResonanceTable(int d, int L, double K, std::vector<std::size_t> offsets,
                 std::vector<ResonanceEntry> entries);

  int d() const { return d_; }
  int L() const { return L_; }
  double K() const { return K_; }
  std::size_t num_modes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_entries() const { return entries_.size(); }

  const ResonanceEntry* begin(std::size_t s) const { return entries_.data() + offsets_[s]; }
  const ResonanceEntry* end(std::size_t s) const { return entries_.data() + offsets_[s + 1]; }
  std::size_t row_size(std::size_t s) const { return offsets_[s + 1] - offsets_[s]; }

  const std::vector<std::size_t>& offsets() const { return offsets_; }
  const std::vector<ResonanceEntry>& entries() const { return entries_; }

  /// Binary cache with a versioned header keyed by (d, L, K).
  void save(const std::filesystem::path& file) const;
  static ResonanceTable load(const std::filesystem::path& file);
  static std::string cache_name(int d, int L, double K);
  static constexpr std::uint32_t kFormatVersion = 1;

 private:
  int d_ = 0;
  int L_ = 0;
  double K_ = 0.0;
  std::vector<std::size_t> offsets_;
  std::vector<ResonanceEntry> entries_;
};

struct ResonanceBuildOptions {
  std::size_t max_entries = 400'000'000;
};

ResonanceTable build_resonance_table(const LatticeSpec& spec,
                                     const ResonanceBuildOptions& options = {});

/// Loads the table from `cache_dir` when a matching file exists, otherwise
/// builds and stores it.
ResonanceTable cached_resonance_table(const LatticeSpec& spec,
                                      const std::filesystem::path& cache_dir,
                                      const ResonanceBuildOptions& options = {});

}  // namespace wtl
