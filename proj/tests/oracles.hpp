#pragma once
// Brute-force reference implementations used only by the tests.

#include "wtlab/lattice.hpp"
#include "wtlab/sde.hpp"

#include <algorithm>
#include <array>
#include <vector>

namespace oracle {

using Quad = std::array<int, 4>;  // i1, i2, i3, sign

/// Every triple of stored modes with delta' != 0 and omega = 0, per target,
/// by scanning all pairs (s1, s2).
inline std::vector<std::vector<Quad>> resonances(const wtl::LatticeSpec& spec) {
  const std::size_t n = spec.size();
  std::vector<std::vector<Quad>> rows(n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i1 = 0; i1 < n; ++i1)
      for (std::size_t i2 = 0; i2 < n; ++i2)
      {
        // s3 is forced by momentum balance; delta' rejects everything else.
        const int i3 = spec.index_of(spec.mode(i1) + spec.mode(i2) - spec.mode(s));
        if (i3 < 0) continue;
        const auto p1 = spec.point(i1), p2 = spec.point(i2), p3 = spec.point(std::size_t(i3)), p = spec.point(s);
        const int sg = wtl::delta_prime(p1, p2, p3, p);
        if (sg != 0 && wtl::omega(p1, p2, p3, p).is_zero()) rows[s].push_back({int(i1), int(i2), i3, sg});
      }
  for (auto& r : rows) std::sort(r.begin(), r.end());
  return rows;
}

inline std::vector<std::vector<Quad>> table_rows(const wtl::ResonanceTable& t) {
  std::vector<std::vector<Quad>> rows(t.num_modes());
  for (std::size_t s = 0; s < t.num_modes(); ++s) {
    for (auto it = t.begin(s); it != t.end(s); ++it) rows[s].push_back({it->i1, it->i2, it->i3, it->sign});
    std::sort(rows[s].begin(), rows[s].end());
  }
  return rows;
}

/// Y_s by direct loop over the oracle quadruples.
inline wtl::Field Y(const wtl::LatticeSpec& spec, double pref, const wtl::Field& v1,
                    const wtl::Field& v2, const wtl::Field& v3) {
  const auto rows = resonances(spec);
  wtl::Field out = wtl::Field::Zero(v1.size());
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (const auto& q : rows[s]) out[s] += double(q[3]) * v1[q[0]] * v2[q[1]] * std::conj(v3[q[2]]);
  return pref * out;
}

}  // namespace oracle
