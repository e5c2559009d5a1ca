#pragma once

#include "wtlab/lattice.hpp"

#include <array>
#include <cmath>
#include <cstdlib>

namespace wtl {

/// Integer basis of a sublattice of Z^d (columns, at most three).
struct IntBasis {
  int rank = 0;
  std::array<IntVec, 3> cols{IntVec::Zero(), IntVec::Zero(), IntVec::Zero()};
};

/// Basis of {v in Z^d : u.v = 0}.  For u = 0 this is the standard basis of Z^d.
/// The basis comes out of unimodular column reduction of the row u, followed by
/// Lagrange reduction when the rank is two.
inline IntBasis orthogonal_lattice_basis(const IntVec& u, int d) {
  IntBasis out;
  if (u.head(d).isZero()) {
    out.rank = d;
    for (int k = 0; k < d; ++k) {
      out.cols[k] = IntVec::Zero();
      out.cols[k][k] = 1;
    }
    return out;
  }
  std::array<std::int64_t, 3> r{u[0], u[1], u[2]};
  std::array<IntVec, 3> U;
  for (int k = 0; k < 3; ++k) {
    U[k] = IntVec::Zero();
    U[k][k] = 1;
  }
  int pivot = -1;
  while (true) {
    pivot = -1;
    int nonzero = 0;
    for (int k = 0; k < d; ++k) {
      if (r[k] == 0) continue;
      ++nonzero;
      if (pivot < 0 || std::llabs(r[k]) < std::llabs(r[pivot])) pivot = k;
    }
    if (nonzero == 1) break;
    for (int k = 0; k < d; ++k) {
      if (k == pivot || r[k] == 0) continue;
      const std::int64_t q = r[k] / r[pivot];
      r[k] -= q * r[pivot];
      U[k] -= int(q) * U[pivot];
    }
  }
  for (int k = 0; k < d; ++k)
    if (k != pivot) out.cols[out.rank++] = U[k];

  if (out.rank == 2) {
    // Lagrange-Gauss reduction.
    IntVec& a = out.cols[0];
    IntVec& b = out.cols[1];
    if (norm2(a) > norm2(b)) std::swap(a, b);
    while (true) {
      const double mu = double(dot(a, b)) / double(norm2(a));
      const auto q = static_cast<int>(std::llround(mu));
      if (q == 0) break;
      b -= q * a;
      if (norm2(b) >= norm2(a)) break;
      std::swap(a, b);
    }
  }
  return out;
}

/// Calls visit(x) for every lattice point x = B c with |x - center| <= radius.
///
/// Fincke-Pohst enumeration on the Gram-Schmidt form of the basis.  The
/// ranges are computed in floating point with a small slack; inclusion is
/// decided by the direct distance test on the exact integer point so the
/// visited set does not depend on the basis that was used.
template <class Visitor>
void enumerate_ball(const IntBasis& basis, const Eigen::Vector3d& center, double radius,
                    Visitor&& visit) {
  if (radius < 0.0) return;
  const int n = basis.rank;
  std::array<Eigen::Vector3d, 3> q;
  double R[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
  for (int k = 0; k < n; ++k) {
    Eigen::Vector3d b = basis.cols[k].cast<double>();
    for (int j = 0; j < k; ++j) {
      R[j][k] = q[j].dot(b);
      b -= R[j][k] * q[j];
    }
    R[k][k] = b.norm();
    q[k] = b / R[k][k];
  }
  double y[3] = {0, 0, 0};
  Eigen::Vector3d perp = center;
  for (int k = 0; k < n; ++k) {
    y[k] = q[k].dot(center);
    perp -= y[k] * q[k];
  }
  const double r2 = radius * radius;
  const double budget0 = r2 - perp.squaredNorm();
  if (budget0 < -1e-9 * (1.0 + r2)) return;

  std::array<int, 3> c{0, 0, 0};
  const double slack = 1e-9;
  auto recurse = [&](auto&& self, int k, double budget) -> void {
    if (k < 0) {
      IntVec x = IntVec::Zero();
      for (int j = 0; j < n; ++j) x += c[j] * basis.cols[j];
      if ((x.cast<double>() - center).squaredNorm() <= r2) visit(x);
      return;
    }
    double shift = y[k];
    for (int j = k + 1; j < n; ++j) shift -= R[k][j] * c[j];
    const double mid = shift / R[k][k];
    const double half = std::sqrt(std::max(budget, 0.0)) / R[k][k] + slack;
    const int lo = static_cast<int>(std::ceil(mid - half));
    const int hi = static_cast<int>(std::floor(mid + half));
    for (int ck = lo; ck <= hi; ++ck) {
      c[k] = ck;
      const double t = R[k][k] * ck - shift;
      self(self, k - 1, budget - t * t);
    }
  };
  recurse(recurse, n - 1, std::max(budget0, 0.0));
}

}  // namespace wtl
