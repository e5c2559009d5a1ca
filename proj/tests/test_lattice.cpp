#include "doctest.h"
#include "oracles.hpp"

#include "wtlab/lattice.hpp"

#include <filesystem>
#include <set>

using namespace wtl;

namespace {
LatticePoint P(int x, int y, int z, int L = 1, int d = 3) { return {IntVec(x, y, z), L, d}; }
}  // namespace

TEST_CASE("omega on integer representatives") {
  CHECK(omega(P(1, 0, 0), P(0, 1, 0), P(1, 1, 0), P(0, 0, 0)).numerator == 0);
  CHECK(omega(P(1, 2, 3), P(1, 2, 3), P(1, 2, 3), P(1, 2, 3)).is_zero());
  const Rational r = omega(P(2, 0, 0), P(0, 0, 0), P(1, 0, 0), P(1, 0, 0));
  CHECK(r.numerator == 2);
  CHECK(r.denominator == 1);
  const Rational r2 = omega(P(2, 0, 0, 2), P(0, 0, 0, 2), P(1, 0, 0, 2), P(1, 0, 0, 2));
  CHECK(r2.value() == doctest::Approx(0.5));
  CHECK_THROWS_AS(omega(P(1, 0, 0, 1), P(0, 0, 0, 2), P(1, 0, 0, 1), P(0, 0, 0, 1)), LatticeError);
}

TEST_CASE("delta_prime clauses") {
  CHECK(delta_prime(P(1, 0, 0), P(1, 0, 0), P(1, 0, 0), P(1, 0, 0)) == -1);
  CHECK(delta_prime(P(1, 0, 0), P(0, 1, 0), P(1, 0, 0), P(0, 1, 0)) == 0);
  CHECK(delta_prime(P(1, 0, 0), P(0, 1, 0), P(1, 1, 0), P(0, 0, 0)) == 1);
  CHECK(delta_prime(P(1, 0, 0), P(0, 1, 0), P(0, 0, 0), P(0, 0, 0)) == 0);
  CHECK_THROWS_AS(delta_prime(P(0, 0, 0, 1, 2), P(0, 0, 0), P(0, 0, 0), P(0, 0, 0)), LatticeError);
}

TEST_CASE("lattice spec invariants") {
  for (auto [d, L, K] : {std::tuple{2, 3, 2.0}, std::tuple{3, 2, 1.5}, std::tuple{3, 1, 2.0}}) {
    LatticeSpec spec(d, L, K);
    std::set<std::array<int, 3>> seen;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const IntVec& z = spec.mode(i);
      CHECK(double(norm2(z)) <= K * K * L * L + 1e-9);
      CHECK(spec.index_of(z) == int(i));
      CHECK(spec.contains(IntVec(-z)));
      IntVec sw(z[1], z[0], z[2]);
      CHECK(spec.contains(sw));
      if (d == 3) {
        IntVec cyc(z[2], z[0], z[1]);
        CHECK(spec.contains(cyc));
      } else {
        CHECK(z[2] == 0);
      }
      seen.insert({z[0], z[1], z[2]});
    }
    CHECK(seen.size() == spec.size());
    // Every in-ball integer vector is stored.
    const int b = spec.box_radius() + 1;
    std::size_t count = 0;
    for (int x = -b; x <= b; ++x)
      for (int y = -b; y <= b; ++y)
        for (int z = (d == 3 ? -b : 0); z <= (d == 3 ? b : 0); ++z)
          if (double(x * x + y * y + z * z) <= K * K * L * L + 1e-9) ++count;
    CHECK(count == spec.size());
  }
  CHECK(LatticeSpec(2, 1, 1.0).size() == 5);
  CHECK_THROWS_AS(LatticeSpec(4, 1, 1.0), LatticeError);
  CHECK_THROWS_AS(LatticeSpec(3, 0, 1.0), LatticeError);
  CHECK_THROWS_AS(LatticeSpec(3, 1, -1.0), LatticeError);
}

TEST_CASE("resonance table equals brute force") {
  for (auto [d, L, K] : {std::tuple{2, 1, 1.0}, std::tuple{3, 1, 2.0}, std::tuple{2, 3, 2.0},
                         std::tuple{3, 2, 1.5}, std::tuple{2, 2, 2.3}}) {
    LatticeSpec spec(d, L, K);
    REQUIRE(spec.size() <= 500);
    const ResonanceTable t = build_resonance_table(spec);
    const auto expect = oracle::resonances(spec);
    const auto got = oracle::table_rows(t);
    CHECK(got == expect);
    std::size_t total = 0;
    for (const auto& r : expect) total += r.size();
    CHECK(t.num_entries() == total);
  }
}

TEST_CASE("resonance table structure") {
  LatticeSpec spec(3, 2, 1.5);
  const ResonanceTable t = build_resonance_table(spec);
  for (std::size_t s = 0; s < t.num_modes(); ++s) {
    int diag = 0;
    std::set<std::array<int, 4>> row;
    for (auto it = t.begin(s); it != t.end(s); ++it) row.insert({it->i1, it->i2, it->i3, it->sign});
    for (auto it = t.begin(s); it != t.end(s); ++it) {
      const auto p1 = spec.point(it->i1), p2 = spec.point(it->i2), p3 = spec.point(it->i3), p = spec.point(s);
      CHECK(p1.z + p2.z == p3.z + p.z);
      CHECK(omega(p1, p2, p3, p).is_zero());
      CHECK(delta_prime(p1, p2, p3, p) == it->sign);
      if (it->sign == -1) {
        ++diag;
        CHECK(it->i1 == int(s));
        CHECK(it->i2 == int(s));
        CHECK(it->i3 == int(s));
      }
      CHECK(row.count({it->i2, it->i1, it->i3, it->sign}) == 1);
    }
    CHECK(diag == 1);
  }
}

TEST_CASE("d=2, L=1, K=1 table by hand") {
  LatticeSpec spec(2, 1, 1.0);
  const ResonanceTable t = build_resonance_table(spec);
  // Target 0: s1, s2 orthogonal unit vectors would need s3 = s1 + s2 of norm
  // sqrt 2, which is truncated.  Target e1: u = s1 - e1 and v = s2 - e1 both
  // need a nonzero first coordinate, so u.v = 0 forces u = -e1 + e2, v = -e1 - e2
  // or the swap; s3 = -e1.  Each axis mode gets the diagonal plus two entries.
  CHECK(t.row_size(0) == 1);
  for (std::size_t s = 1; s < spec.size(); ++s) CHECK(t.row_size(s) == 3);
  CHECK(t.num_entries() == 13);
}

TEST_CASE("resonance table cache roundtrip and budget") {
  LatticeSpec spec(3, 2, 1.2);
  const auto dir = std::filesystem::temp_directory_path() / "wtlab_test_cache";
  std::filesystem::remove_all(dir);
  const ResonanceTable a = cached_resonance_table(spec, dir);
  CHECK(std::filesystem::exists(dir / ResonanceTable::cache_name(3, 2, 1.2)));
  const ResonanceTable b = cached_resonance_table(spec, dir);
  CHECK(oracle::table_rows(a) == oracle::table_rows(b));
  std::filesystem::remove_all(dir);

  ResonanceBuildOptions tight;
  tight.max_entries = 10;
  try {
    build_resonance_table(spec, tight);
    FAIL("expected budget error");
  } catch (const MemoryBudgetError& e) {
    CHECK(e.projected_entries > 10);
    CHECK(e.budget_entries == 10);
  }
}
