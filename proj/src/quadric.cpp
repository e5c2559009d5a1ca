#include "wtlab/quadric.hpp"

#include "wtlab/hyperplane.hpp"
#include "wtlab/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace wtl {

SchwartzWeight SchwartzWeight::gaussian(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian weight needs sigma > 0");
  return {Family::Gaussian, sigma};
}

SchwartzWeight SchwartzWeight::polynomial(double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("polynomial weight needs mu > 0");
  return {Family::Polynomial, mu};
}

SchwartzWeight SchwartzWeight::zero() { return {Family::Zero, 0.0}; }

SchwartzWeight SchwartzWeight::parse(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  const double p = colon == std::string::npos ? 0.0 : std::stod(text.substr(colon + 1));
  if (kind == "gaussian") return gaussian(colon == std::string::npos ? 1.0 : p);
  if (kind == "poly" || kind == "polynomial") return polynomial(colon == std::string::npos ? 16.0 : p);
  if (kind == "zero") return zero();
  throw std::invalid_argument("unknown weight '" + text + "'");
}

std::string SchwartzWeight::name() const {
  switch (family_) {
    case Family::Gaussian: return "gaussian:" + std::to_string(param_);
    case Family::Polynomial: return "poly:" + std::to_string(param_);
    case Family::Zero: return "zero";
  }
  return "?";
}

double SchwartzWeight::profile(double r) const {
  switch (family_) {
    case Family::Gaussian: return std::exp(-(r * r) / (param_ * param_));
    case Family::Polynomial: return std::pow(std::max(1.0, r), -param_);
    case Family::Zero: return 0.0;
  }
  return 0.0;
}

double SchwartzWeight::decay_norm(double n2, double domain_radius) const {
  double best = 0.0;
  const int samples = 20000;
  for (int i = 0; i <= samples; ++i) {
    const double r = domain_radius * i / samples;
    best = std::max(best, std::pow(std::max(1.0, r), n2) * profile(r));
  }
  return best;
}

double SchwartzWeight::decay_radius(double rel) const {
  switch (family_) {
    case Family::Gaussian: return param_ * std::sqrt(-std::log(rel));
    case Family::Polynomial: return std::pow(rel, -1.0 / param_);
    case Family::Zero: return 0.0;
  }
  return 0.0;
}

namespace {

double sphere_area(int k) { return 2.0 * std::pow(std::numbers::pi, 0.5 * k) / std::tgamma(0.5 * k); }

// L^k |S^{k-1}| \int_{R-2δ}^∞ (t+δ)^{k-1} g(t) dt, δ = sqrt(k)/(2L): bounds the sum
// of f over all lattice points (on or off the quadric) outside the ball.
double tail_bound(const SchwartzWeight& f, int k, int L, double radius) {
  if (f.family() == SchwartzWeight::Family::Zero) return 0.0;
  const double delta = std::sqrt(double(k)) / (2.0 * L);
  const double a = std::max(0.0, radius - 2.0 * delta);
  auto integrand = [&](double t) { return std::pow(t + delta, k - 1) * f.profile(t); };
  double upper;
  double remainder = 0.0;
  if (f.family() == SchwartzWeight::Family::Gaussian) {
    upper = a + 12.0 * f.parameter() + 10.0;
  } else {
    const double mu = f.parameter();
    if (mu <= k) return std::numeric_limits<double>::infinity();
    upper = std::max(a, 1.0) + 1000.0;
    remainder = std::pow(1.0 + delta, k - 1) * std::pow(upper, k - mu) / (mu - k);
  }
  const int n = 20000;
  const double hstep = (upper - a) / n;
  double acc = integrand(a) + integrand(upper);
  for (int i = 1; i < n; ++i) acc += (i % 2 ? 4.0 : 2.0) * integrand(a + i * hstep);
  const double integral = acc * hstep / 3.0 + remainder;
  return std::pow(double(L), k) * sphere_area(k) * integral;
}

struct Shift {
  Eigen::Vector3d a = Eigen::Vector3d::Zero();
  Eigen::Vector3d b = Eigen::Vector3d::Zero();
};

Shift split_shift(const Eigen::VectorXd& shift, int d) {
  Shift s;
  if (shift.size() == 0) return s;
  if (shift.size() != 2 * d) throw std::invalid_argument("shift must have 2d components");
  for (int k = 0; k < d; ++k) {
    s.a[k] = shift[k];
    s.b[k] = shift[d + k];
  }
  return s;
}

void finish(QuadricSumResult& r, const SchwartzWeight& f, int d, int L, double radius) {
  r.tail_bound = tail_bound(f, 2 * d, L, radius);
  r.tail_warning = !(r.tail_bound <= 1e-9 * std::abs(r.sum)) && r.tail_bound > 0.0;
}

}  // namespace

QuadricSumResult quadric_sum(const SchwartzWeight& f, int d, int L, const Eigen::VectorXd& shift,
                             double radius) {
  if (d != 2 && d != 3) throw std::invalid_argument("quadric sums support d = 2 and d = 3");
  if (L < 1) throw std::invalid_argument("L must be positive");
  const Shift z0 = split_shift(shift, d);
  QuadricSumResult r;
  if (f.family() != SchwartzWeight::Family::Zero) {
    const double rho = radius * L;
    const Eigen::Vector3d cu = z0.a * L;
    const Eigen::Vector3d cv = z0.b * L;
    const IntBasis full = orthogonal_lattice_basis(IntVec::Zero(), d);
    const double invL = 1.0 / L;
    // Accumulate with Kahan compensation; the sums reach 1e6 terms.
    double sum = 0.0, comp = 0.0;
    // Radii get a relative slack; membership is decided by the explicit
    // test below so points exactly on the sphere are never lost to rounding.
    const double pad = 1.0 + 1e-12;
    enumerate_ball(full, cu, rho * pad, [&](const IntVec& u) {
      if ((u.cast<double>() - cu).squaredNorm() > rho * rho) return;
      const double du2 = (u.cast<double>() - cu).squaredNorm();
      const double rv = std::sqrt(std::max(0.0, rho * rho - du2));
      const IntBasis perp = orthogonal_lattice_basis(u, d);
      enumerate_ball(perp, cv, rv * pad + 1e-9, [&](const IntVec& v) {
        const double dv2 = (v.cast<double>() - cv).squaredNorm();
        if (du2 + dv2 > rho * rho) return;
        const double term = f.profile(std::sqrt(du2 + dv2) * invL) - comp;
        const double t = sum + term;
        comp = (t - sum) - term;
        sum = t;
        ++r.points;
      });
    });
    r.sum = sum;
  }
  finish(r, f, d, L, radius);
  return r;
}

QuadricSumResult quadric_sum_bruteforce(const SchwartzWeight& f, int d, int L,
                                        const Eigen::VectorXd& shift, double radius) {
  const Shift z0 = split_shift(shift, d);
  QuadricSumResult r;
  const double rho = radius * L;
  const Eigen::Vector3d cu = z0.a * L, cv = z0.b * L;
  int lo[3], hi[3], vlo[3], vhi[3];
  for (int k = 0; k < 3; ++k) {
    const bool active = k < d;
    lo[k] = active ? int(std::floor(cu[k] - rho)) : 0;
    hi[k] = active ? int(std::ceil(cu[k] + rho)) : 0;
    vlo[k] = active ? int(std::floor(cv[k] - rho)) : 0;
    vhi[k] = active ? int(std::ceil(cv[k] + rho)) : 0;
  }
  std::vector<double> terms;
  for (int u0 = lo[0]; u0 <= hi[0]; ++u0)
    for (int u1 = lo[1]; u1 <= hi[1]; ++u1)
      for (int u2 = lo[2]; u2 <= hi[2]; ++u2)
        for (int v0 = vlo[0]; v0 <= vhi[0]; ++v0)
          for (int v1 = vlo[1]; v1 <= vhi[1]; ++v1)
            for (int v2 = vlo[2]; v2 <= vhi[2]; ++v2) {
              const IntVec u(u0, u1, u2), v(v0, v1, v2);
              if (dot(u, v) != 0) continue;
              const double d2 = (u.cast<double>() - cu).squaredNorm() + (v.cast<double>() - cv).squaredNorm();
              if (d2 > rho * rho) continue;
              r.sum += f.profile(std::sqrt(d2) / L);
              ++r.points;
            }
  finish(r, f, d, L, radius);
  return r;
}

double gaussian_quadric_integral(int d) {
  // \int_{R^d} |u|^{-1} e^{-|u|^2} du \int_{R^{d-1}} e^{-|v|^2} dv
  const double radial = 0.5 * std::tgamma(0.5 * (d - 1));
  return sphere_area(d) * radial * std::pow(std::numbers::pi, 0.5 * (d - 1));
}

QuadricAsymptoticReport quadric_asymptotic_report(const SchwartzWeight& f, int d,
                                                  const std::vector<int>& L_list,
                                                  const std::vector<Eigen::VectorXd>& shifts,
                                                  double radius) {
  if (L_list.size() < 2) throw std::invalid_argument("quadric report needs at least two L values");
  QuadricAsymptoticReport rep;
  rep.d = d;
  rep.log_correction_expected = d == 2;
  const double power = 2.0 * (d - 1);
  for (const auto& z0 : shifts) {
    std::vector<double> xs, ys;
    for (int L : L_list) {
      const QuadricSumResult s = quadric_sum(f, d, L, z0, radius);
      QuadricRow row;
      row.L = L;
      row.shift_norm = z0.size() ? z0.norm() : 0.0;
      row.sum = s.sum;
      row.ratio = s.sum / std::pow(double(L), power);
      row.tail_bound = s.tail_bound;
      row.tail_warning = s.tail_warning;
      rep.rows.push_back(row);
      if (s.sum > 0.0) {
        xs.push_back(std::log(double(L)));
        ys.push_back(std::log(s.sum));
      }
    }
    rep.L_exponent.push_back(xs.size() >= 2 ? fit_line(xs, ys).slope
                                            : std::numeric_limits<double>::quiet_NaN());
  }
  // Shift growth at the largest L.
  std::vector<double> xs, ys;
  for (const auto& row : rep.rows)
    if (row.L == L_list.back() && row.ratio > 0.0) {
      xs.push_back(std::log(std::max(1.0, row.shift_norm)));
      ys.push_back(std::log(row.ratio));
    }
  bool spread = false;
  for (double x : xs) spread = spread || std::abs(x - xs.front()) > 1e-12;
  rep.shift_exponent = spread ? fit_line(xs, ys).slope : 0.0;
  return rep;
}

}  // namespace wtl
