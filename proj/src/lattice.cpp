#include "wtlab/lattice.hpp"

#include "wtlab/hyperplane.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wtl {

namespace {

void require_same_lattice(std::initializer_list<const LatticePoint*> points) {
  const LatticePoint* first = *points.begin();
  for (const LatticePoint* p : points)
    if (p->L != first->L || p->d != first->d)
      throw LatticeError("lattice points belong to different lattices");
}

}  // namespace

LatticeSpec::LatticeSpec(int d, int L, double K) : d_(d), L_(L), K_(K) {
  if (d != 2 && d != 3) throw LatticeError("only d = 2 and d = 3 are supported");
  if (L < 1) throw LatticeError("L must be a positive integer");
  if (!(K > 0.0)) throw LatticeError("truncation radius K must be positive");
  const double KL = K * L;
  // Tolerate K L landing a hair below an integer norm through rounding.
  r2max_ = static_cast<std::int64_t>(std::floor(KL * KL * (1.0 + 1e-12) + 1e-9));
  box_ = static_cast<int>(std::floor(std::sqrt(double(r2max_)) + 1e-12));
  while (std::int64_t(box_) * box_ > r2max_) --box_;
  while (std::int64_t(box_ + 1) * (box_ + 1) <= r2max_) ++box_;

  const int span = 2 * box_ + 1;
  const int zspan = d_ == 3 ? span : 1;
  for (int x = -box_; x <= box_; ++x)
    for (int y = -box_; y <= box_; ++y)
      for (int z = (d_ == 3 ? -box_ : 0); z <= (d_ == 3 ? box_ : 0); ++z) {
        IntVec v(x, y, z);
        if (norm2(v) <= r2max_) modes_.push_back(v);
      }
  std::sort(modes_.begin(), modes_.end(), [](const IntVec& a, const IntVec& b) {
    const auto na = norm2(a), nb = norm2(b);
    if (na != nb) return na < nb;
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  lookup_.assign(std::size_t(span) * span * zspan, -1);
  for (std::size_t i = 0; i < modes_.size(); ++i) lookup_[box_offset(modes_[i])] = int(i);
}

std::size_t LatticeSpec::box_offset(const IntVec& z) const {
  const std::size_t span = 2 * box_ + 1;
  const std::size_t zz = d_ == 3 ? std::size_t(z[2] + box_) : 0;
  return (std::size_t(z[0] + box_) * span + std::size_t(z[1] + box_)) * (d_ == 3 ? span : 1) + zz;
}

bool LatticeSpec::in_ball(const IntVec& z) const {
  if (d_ == 2 && z[2] != 0) return false;
  return norm2(z) <= r2max_;
}

int LatticeSpec::index_of(const IntVec& z) const {
  for (int k = 0; k < 3; ++k)
    if (std::abs(z[k]) > box_) return -1;
  if (d_ == 2 && z[2] != 0) return -1;
  return lookup_[box_offset(z)];
}

Rational omega(const LatticePoint& s1, const LatticePoint& s2, const LatticePoint& s3,
               const LatticePoint& s) {
  require_same_lattice({&s1, &s2, &s3, &s});
  Rational r;
  r.numerator = norm2(s1.z) + norm2(s2.z) - norm2(s3.z) - norm2(s.z);
  r.denominator = std::int64_t(s.L) * s.L;
  return r;
}

int delta_prime(const LatticePoint& s1, const LatticePoint& s2, const LatticePoint& s3,
                const LatticePoint& s) {
  require_same_lattice({&s1, &s2, &s3, &s});
  if (s1.z == s2.z && s2.z == s3.z && s3.z == s.z) return -1;
  if (s1.z + s2.z == s3.z + s.z && s1.z != s3.z && s2.z != s3.z) return 1;
  return 0;
}

MemoryBudgetError::MemoryBudgetError(std::size_t projected, std::size_t budget)
    : std::runtime_error("resonance table would hold " + std::to_string(projected) +
                         " entries, budget is " + std::to_string(budget)),
      projected_entries(projected),
      budget_entries(budget) {}

ResonanceTable::ResonanceTable(int d, int L, double K, std::vector<std::size_t> offsets,
                               std::vector<ResonanceEntry> entries)
    : d_(d), L_(L), K_(K), offsets_(std::move(offsets)), entries_(std::move(entries)) {}

namespace {

// Walks the resonant pairs (u, v) of target mode s: u = s1 - s, v = s2 - s with
// u.v = 0, u != 0, v != 0 and s1, s2, s3 = s + u + v all stored.
template <class Visit>
void for_each_resonant(const LatticeSpec& spec, std::size_t s, Visit&& visit) {
  const IntVec& z = spec.mode(s);
  const Eigen::Vector3d center = -z.cast<double>();
  // Slack only widens the search; index_of below is the exact membership test.
  const double radius = std::sqrt(double(spec.radius2_bound())) * (1.0 + 1e-12) + 1e-9;
  for (std::size_t i1 = 0; i1 < spec.size(); ++i1) {
    const IntVec u = spec.mode(i1) - z;
    if (u.isZero()) continue;
    const IntBasis basis = orthogonal_lattice_basis(u, spec.d());
    enumerate_ball(basis, center, radius, [&](const IntVec& v) {
      if (v.isZero()) return;
      const int i2 = spec.index_of(z + v);
      if (i2 < 0) return;
      const int i3 = spec.index_of(z + u + v);
      if (i3 < 0) return;
      visit(int(i1), i2, i3);
    });
  }
}

}  // namespace

ResonanceTable build_resonance_table(const LatticeSpec& spec,
                                     const ResonanceBuildOptions& options) {
  const std::size_t n = spec.size();
  std::vector<std::size_t> offsets(n + 1, 0);
  // Counting pass so the budget check happens before any allocation.
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t count = 1;
    for_each_resonant(spec, s, [&](int, int, int) { ++count; });
    offsets[s + 1] = offsets[s] + count;
    if (offsets[s + 1] > options.max_entries) {
      // Project the total from the rows seen so far.
      const double per_row = double(offsets[s + 1]) / double(s + 1);
      throw MemoryBudgetError(std::size_t(per_row * double(n)), options.max_entries);
    }
  }
  std::vector<ResonanceEntry> entries(offsets[n]);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t pos = offsets[s];
    entries[pos++] = {int(s), int(s), int(s), -1};
    for_each_resonant(spec, s, [&](int i1, int i2, int i3) { entries[pos++] = {i1, i2, i3, 1}; });
  }
  return ResonanceTable(spec.d(), spec.L(), spec.K(), std::move(offsets), std::move(entries));
}

namespace {
constexpr char kMagic[4] = {'W', 'T', 'R', 'T'};

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated resonance table file");
  return v;
}
}  // namespace

std::string ResonanceTable::cache_name(int d, int L, double K) {
  std::ostringstream os;
  os.precision(17);
  os << "restable_d" << d << "_L" << L << "_K" << K << ".bin";
  return os.str();
}

void ResonanceTable::save(const std::filesystem::path& file) const {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kFormatVersion);
  put<std::int32_t>(os, d_);
  put<std::int32_t>(os, L_);
  put<double>(os, K_);
  put<std::uint64_t>(os, num_modes());
  put<std::uint64_t>(os, entries_.size());
  for (std::size_t o : offsets_) put<std::uint64_t>(os, o);
  os.write(reinterpret_cast<const char*>(entries_.data()),
           std::streamsize(entries_.size() * sizeof(ResonanceEntry)));
}

ResonanceTable ResonanceTable::load(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + file.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a resonance table file: " + file.string());
  if (get<std::uint32_t>(is) != kFormatVersion)
    throw std::runtime_error("resonance table version mismatch: " + file.string());
  const int d = get<std::int32_t>(is);
  const int L = get<std::int32_t>(is);
  const double K = get<double>(is);
  const auto modes = get<std::uint64_t>(is);
  const auto count = get<std::uint64_t>(is);
  std::vector<std::size_t> offsets(modes + 1);
  for (auto& o : offsets) o = get<std::uint64_t>(is);
  std::vector<ResonanceEntry> entries(count);
  is.read(reinterpret_cast<char*>(entries.data()), std::streamsize(count * sizeof(ResonanceEntry)));
  if (!is || offsets.back() != count) throw std::runtime_error("corrupt resonance table file");
  return ResonanceTable(d, L, K, std::move(offsets), std::move(entries));
}

ResonanceTable cached_resonance_table(const LatticeSpec& spec,
                                      const std::filesystem::path& cache_dir,
                                      const ResonanceBuildOptions& options) {
  const auto file = cache_dir / ResonanceTable::cache_name(spec.d(), spec.L(), spec.K());
  if (std::filesystem::exists(file)) {
    ResonanceTable t = ResonanceTable::load(file);
    if (t.d() == spec.d() && t.L() == spec.L() && t.K() == spec.K() && t.num_modes() == spec.size())
      return t;
  }
  ResonanceTable t = build_resonance_table(spec, options);
  std::filesystem::create_directories(cache_dir);
  t.save(file);
  return t;
}

}  // namespace wtl
