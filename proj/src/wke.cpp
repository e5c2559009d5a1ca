#include "wtlab/wke.hpp"

#include "wtlab/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <regex>
#include <sstream>

namespace wtl {

WkeNegativityError::WkeNegativityError(double v, double t)
    : std::runtime_error("WKE spectrum went negative (" + std::to_string(v) + " at tau = " + std::to_string(t) +
                         "); the step or the quadrature is too coarse"),
      value(v),
      tau(t) {}

namespace {

// sinh(g l) / sinh(g tau) without overflow; l / tau in the limit g -> 0.
double sinh_ratio(double g, double l, double tau) {
  if (g * tau < 1e-12) return l / tau;
  return std::exp(g * (l - tau)) * std::expm1(-2.0 * g * l) / std::expm1(-2.0 * g * tau);
}

constexpr double kXgk[8] = {0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
                            0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
                            0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
                            0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
                            0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
                            0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
                            0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
                           0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

template <class F>
double gauss_kronrod(const F& f, double a, double b, double tol, int depth) {
  const double c = 0.5 * (a + b), hw = 0.5 * (b - a);
  const double fc = f(c);
  double kr = kWgk[7] * fc, ga = kWg[3] * fc;
  for (int i = 0; i < 7; ++i) {
    const double x = hw * kXgk[i];
    const double s = f(c - x) + f(c + x);
    kr += kWgk[i] * s;
    if (i % 2 == 1) ga += kWg[i / 2] * s;
  }
  kr *= hw;
  ga *= hw;
  if (std::abs(kr - ga) <= tol || depth >= 40) return kr;
  return gauss_kronrod(f, a, c, 0.5 * tol, depth + 1) + gauss_kronrod(f, c, b, 0.5 * tol, depth + 1);
}

void check_j(int j) {
  if (j < 1 || j > 4) throw std::invalid_argument("kernel index j must be in 1..4");
}

// (e^{-a tau} - e^{-b tau}) / (b - a) given ea = e^{-a tau}, eb = e^{-b tau}.
double exp_divided_difference(double a, double b, double ea, double eb, double tau) {
  const double x = (b - a) * tau;
  if (std::abs(x) > 1e-4) return (ea - eb) / (b - a);
  // Series of tau e^{-a tau} (1 - e^{-x}) / x.
  return tau * ea * (1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0);
}

}  // namespace

double kernel_Z(int j, double tau, const std::array<double, 4>& g, double tol) {
  check_j(j);
  if (tau < 0.0) throw std::invalid_argument("kernel_Z needs tau >= 0");
  if (tau == 0.0) return 0.0;
  const auto f = [&](double l) {
    double v = std::exp(-g[std::size_t(j - 1)] * (tau - l));
    for (int n = 0; n < 4; ++n)
      if (n != j - 1) v *= sinh_ratio(g[std::size_t(n)], l, tau);
    return v;
  };
  return gauss_kronrod(f, 0.0, tau, tol, 0);
}

double kernel_Z(int j, double tau, const std::array<Eigen::VectorXd, 4>& s, const DampingProfile& damping) {
  std::array<double, 4> g{};
  for (std::size_t n = 0; n < 4; ++n) g[n] = damping(s[n].squaredNorm());
  return kernel_Z(j, tau, g);
}

double kernel_Z_closed(int j, double tau, const std::array<double, 4>& g) {
  check_j(j);
  if (tau == 0.0) return 0.0;
  const double Gamma = g[0] + g[1] + g[2] + g[3];
  const double eG = std::exp(-Gamma * tau);
  std::array<int, 3> others{};
  for (int n = 0, k = 0; n < 4; ++n)
    if (n != j - 1) others[std::size_t(k++)] = n;
  double num = 0.0, den = 1.0;
  std::array<double, 3> q{};
  for (std::size_t k = 0; k < 3; ++k) {
    q[k] = std::exp(-2.0 * g[std::size_t(others[k])] * tau);
    den *= -std::expm1(-2.0 * g[std::size_t(others[k])] * tau);
  }
  for (unsigned S = 0; S < 8; ++S) {
    double a = 0.0, ea = 1.0;
    for (std::size_t k = 0; k < 3; ++k)
      if (S >> k & 1u) {
        a += 2.0 * g[std::size_t(others[k])];
        ea *= q[k];
      }
    num += (std::popcount(S) % 2 ? -1.0 : 1.0) * exp_divided_difference(a, Gamma, ea, eG, tau);
  }
  return num / den;
}

std::array<double, 4> kernel_Z_all(double tau, const std::array<double, 4>& g) {
  std::array<double, 4> out{};
  if (tau == 0.0) return out;
  const double gmin = std::min({g[0], g[1], g[2], g[3]});
  const bool closed = 2.0 * gmin * tau >= 0.02;
  if (!closed) {
    for (int j = 1; j <= 4; ++j) out[std::size_t(j - 1)] = kernel_Z(j, tau, g, 1e-12);
    return out;
  }
  // Shared exponentials for the four closed forms.
  const double Gamma = g[0] + g[1] + g[2] + g[3];
  std::array<double, 4> q{}, one_minus{};
  for (std::size_t n = 0; n < 4; ++n) {
    q[n] = std::exp(-2.0 * g[n] * tau);
    one_minus[n] = 1.0 - q[n];
  }
  const double eG = std::sqrt(q[0] * q[1] * q[2] * q[3]);
  for (std::size_t j = 0; j < 4; ++j) {
    double num = 0.0;
    double den = 1.0;
    for (std::size_t n = 0; n < 4; ++n)
      if (n != j) den *= one_minus[n];
    for (unsigned S = 0; S < 16; ++S) {
      if (S >> j & 1u) continue;
      double a = 0.0, ea = 1.0;
      for (std::size_t n = 0; n < 4; ++n)
        if (S >> n & 1u) {
          a += 2.0 * g[n];
          ea *= q[n];
        }
      num += (std::popcount(S) % 2 ? -1.0 : 1.0) * exp_divided_difference(a, Gamma, ea, eG, tau);
    }
    out[j] = num / den;
  }
  return out;
}

double m0_exact(double gamma, double b, double tau) {
  if (tau < 0.0) throw std::invalid_argument("m0_exact needs tau >= 0");
  // (b^2 / gamma)(1 - e^{-2 gamma tau}) = 2 b^2 tau phi1(2 gamma tau), finite at gamma = 0.
  return 2.0 * b * b * tau * phi1(2.0 * gamma * tau);
}

double m0_exact(double s_radius, double tau, const DampingProfile& damping, const ForcingProfile& forcing) {
  const double s2 = s_radius * s_radius;
  return m0_exact(damping(s2), forcing(s2), tau);
}

GaussRule GaussRule::legendre(int n, double a, double b) {
  if (n < 1) throw std::invalid_argument("Gauss rule needs n >= 1");
  GaussRule r;
  r.x.resize(std::size_t(n));
  r.w.resize(std::size_t(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    const double hw = 0.5 * (b - a), c = 0.5 * (a + b);
    r.x[std::size_t(i)] = c - hw * x;
    r.x[std::size_t(n - 1 - i)] = c + hw * x;
    r.w[std::size_t(i)] = r.w[std::size_t(n - 1 - i)] = hw * w;
  }
  return r;
}

std::size_t QuadricQuadrature::nodes(int d) const {
  return d == 2 ? std::size_t(n_u) * std::size_t(n_theta) * std::size_t(n_v)
                : std::size_t(n_u) * std::size_t(n_theta) * std::size_t(n_v) * std::size_t(n_psi);
}

WkeGrid WkeGrid::radial(int d, double cutoff, int nr, int nangle) {
  if (d != 2 && d != 3) throw std::invalid_argument("the WKE quadric quadrature is implemented for d = 2 and 3");
  if (!(cutoff > 0.0)) throw std::invalid_argument("WKE cutoff must be positive");
  if (nr < 2 || nangle < 2) throw std::invalid_argument("WKE grid needs nr >= 2 and nangle >= 2");
  WkeGrid g;
  g.d = d;
  g.cutoff = cutoff;
  for (int i = 0; i < nr; ++i) g.radii.push_back(cutoff * i / (nr - 1));
  const int nrad = std::max(2, (4 * nangle + 2) / 3);
  g.quadrature = {nrad, nangle, nrad, nangle};
  return g;
}

WkeGrid WkeGrid::parse(const std::string& text, int d, double cutoff) {
  static const std::regex re(R"(\s*radial\s*:\s*(\d+)\s*,\s*(\d+)\s*(,\s*truncated\s*)?)");
  std::smatch m;
  if (!std::regex_match(text, m, re))
    throw std::invalid_argument("WKE grid must read radial:nr,nangle[,truncated] (got '" + text + "')");
  WkeGrid g = radial(d, cutoff, std::stoi(m[1]), std::stoi(m[2]));
  g.truncated = m[3].matched;
  return g;
}

WkeGrid WkeGrid::doubled_quadrature() const {
  WkeGrid g = *this;
  g.quadrature = quadrature.doubled();
  return g;
}

double WkeGrid::interpolate(const Eigen::VectorXd& m, double r) const {
  if (r > cutoff || r < 0.0) return 0.0;
  const double step = radii[1] - radii[0];
  const double x = r / step;
  const std::size_t i = std::min(std::size_t(x), radii.size() - 2);
  const double t = x - double(i);
  return (1.0 - t) * m[Eigen::Index(i)] + t * m[Eigen::Index(i + 1)];
}

KineticConstant KineticConstant::configured(int d) { return configured(d, 1.0 + std::pow(2.0, 1.0 - d)); }

KineticConstant KineticConstant::configured(int d, double value) {
  const double hi = 1.0 + std::pow(2.0, 2.0 - d);
  if (!(value > 1.0 && value < hi))
    throw std::invalid_argument("C_d = " + std::to_string(value) + " outside (1, " + std::to_string(hi) + ")");
  KineticConstant c;
  c.value = value;
  c.ci_low = c.ci_high = value;
  return c;
}

std::string KineticConstant::provenance_name() const {
  return provenance == Provenance::Configured ? "configured" : "estimated-from-lattice";
}

KineticConstant extrapolate_Cd(int d, const std::vector<int>& L, const std::vector<double>& ratio) {
  if (L.size() != ratio.size() || L.size() < 2) throw std::invalid_argument("C_d extrapolation needs >= 2 values of L");
  double C = 0.0, half = 0.0;
  const std::size_t last = std::size_t(std::max_element(L.begin(), L.end()) - L.begin());
  if (L.size() == 2) {
    const double L1 = L[0], L2 = L[1];
    C = (L2 * ratio[1] - L1 * ratio[0]) / (L2 - L1);
    half = std::abs(C - ratio[last]);
  } else {
    // r = C + a x, x = 1 / L; intercept and its standard error.
    const double n = double(L.size());
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < L.size(); ++i) {
      sx += 1.0 / L[i];
      sy += ratio[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < L.size(); ++i) {
      sxx += (1.0 / L[i] - mx) * (1.0 / L[i] - mx);
      sxy += (1.0 / L[i] - mx) * (ratio[i] - my);
    }
    const double a = sxy / sxx;
    C = my - a * mx;
    double rss = 0.0;
    for (std::size_t i = 0; i < L.size(); ++i) rss += std::pow(ratio[i] - C - a / L[i], 2);
    const double s2 = n > 2 ? rss / (n - 2) : 0.0;
    half = 1.96 * std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
  }
  const double hi = 1.0 + std::pow(2.0, 2.0 - d);
  KineticConstant k;
  k.ci_low = C - half;
  k.ci_high = C + half;
  std::ostringstream note;
  note << "lattice estimate " << C << " [" << k.ci_low << ", " << k.ci_high << "]";
  if (k.ci_low > 1.0 && k.ci_high < hi) {
    k.value = C;
    k.provenance = KineticConstant::Provenance::EstimatedFromLattice;
  } else {
    k.value = KineticConstant::configured(d).value;
    k.fallback = true;
    note << " leaves (1, " << hi << "); configured value kept";
  }
  k.note = note.str();
  return k;
}

CdEstimate estimate_Cd_from_lattice(int d, const std::vector<int>& L_list, double radius) {
  CdEstimate out;
  const double I = gaussian_quadric_integral(d);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2 * d);
  for (int L : L_list) {
    const auto s = quadric_sum(SchwartzWeight::gaussian(1.0), d, L, zero, radius);
    out.L.push_back(L);
    out.ratio.push_back(s.sum / (std::pow(double(L), 2.0 * (d - 1)) * I));
  }
  out.constant = extrapolate_Cd(d, out.L, out.ratio);
  return out;
}

WkeCoefficients WkeCoefficients::make(const WkeGrid& grid, const DampingProfile& damping,
                                      const ForcingProfile& forcing) {
  WkeCoefficients c{damping, forcing, {}, {}, {}, 0.0};
  c.gamma.resize(Eigen::Index(grid.size()));
  c.b.resize(Eigen::Index(grid.size()));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double s2 = grid.radii[i] * grid.radii[i];
    c.gamma[Eigen::Index(i)] = damping(s2);
    c.b[Eigen::Index(i)] = forcing(s2);
  }
  // Quadric nodes reach |s| + |u| + |v| <= 5 cutoff.
  const double x_max = 25.0 * grid.cutoff * grid.cutoff;
  const std::size_t n = std::size_t(1) << 18;
  c.table_step = x_max / double(n - 1);
  c.gamma_table.resize(n);
  for (std::size_t i = 0; i < n; ++i) c.gamma_table[i] = damping(c.table_step * double(i));
  return c;
}

double WkeCoefficients::gamma_at_r2(double r2) const {
  const double x = r2 / table_step;
  const std::size_t i = std::size_t(x);
  if (i < 1 || i + 2 >= gamma_table.size()) return damping(r2);
  // Catmull-Rom cubic through the four neighbouring entries.
  const double t = x - double(i);
  const double p0 = gamma_table[i - 1], p1 = gamma_table[i], p2 = gamma_table[i + 1], p3 = gamma_table[i + 2];
  return p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
}

namespace {

double collision(const std::array<double, 4>& Z, double y1, double y2, double y3, double y4) {
  return Z[3] * y1 * y2 * y3 + Z[2] * y1 * y2 * y4 - Z[1] * y1 * y3 * y4 - Z[0] * y2 * y3 * y4;
}

}  // namespace

double kinetic_integral_at(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                           const Eigen::VectorXd& m, double tau, double sigma) {
  if (m.size() != Eigen::Index(grid.size())) throw std::invalid_argument("spectrum size does not match the WKE grid");
  if (tau == 0.0) return 0.0;
  const double R = grid.cutoff;
  // Outside this box every term of the integrand has a factor beyond the cutoff.
  const double Ruv = grid.truncated ? 2.0 * R : std::max(sigma + R, 2.0 * R);
  if (grid.truncated && sigma > R) return 0.0;
  const auto& q = grid.quadrature;
  const GaussRule ru = GaussRule::legendre(q.n_u, 0.0, Ruv);
  const double sigma2 = sigma * sigma;
  const double g4 = coeff.gamma_at_r2(sigma2);
  const double y4 = grid.interpolate(m, sigma);
  auto y_at = [&](double r2) { return r2 > R * R ? 0.0 : grid.interpolate(m, std::sqrt(std::max(0.0, r2))); };
  double acc = 0.0;

  if (grid.d == 3) {
    const GaussRule ct = GaussRule::legendre(q.n_theta, -1.0, 1.0);
    const GaussRule rv = GaussRule::legendre(q.n_v, 0.0, Ruv);
    std::vector<double> cpsi(std::size_t(q.n_psi)), spsi(std::size_t(q.n_psi));
    for (int k = 0; k < q.n_psi; ++k) {
      // Only cos(psi) enters, so the midpoint rule on [0, pi] covers the circle.
      const double psi = (k + 0.5) * M_PI / q.n_psi;
      cpsi[std::size_t(k)] = std::cos(psi);
      spsi[std::size_t(k)] = std::sin(psi);
    }
    const double wpsi = 2.0 * M_PI / q.n_psi;
    for (int iu = 0; iu < q.n_u; ++iu) {
      const double r = ru.x[std::size_t(iu)];
      for (int it = 0; it < q.n_theta; ++it) {
        const double c = ct.x[std::size_t(it)], st = std::sqrt(std::max(0.0, 1.0 - c * c));
        const double r1sq = sigma2 + r * r + 2.0 * sigma * r * c;
        if (grid.truncated && r1sq > R * R) continue;
        const double y1 = y_at(r1sq);
        const double g1 = coeff.gamma_at_r2(r1sq);
        // Azimuth of u integrated out (2 pi); |u|^{-1} r^2 dr = r dr.
        const double wu = 2.0 * M_PI * r * ru.w[std::size_t(iu)] * ct.w[std::size_t(it)];
        for (int iv = 0; iv < q.n_v; ++iv) {
          const double rho = rv.x[std::size_t(iv)];
          const double wuv = wu * rho * rv.w[std::size_t(iv)] * wpsi;
          for (int k = 0; k < q.n_psi; ++k) {
            const double vz = -rho * cpsi[std::size_t(k)] * st;
            const double r2sq = sigma2 + rho * rho + 2.0 * sigma * vz;
            const double r3sq = sigma2 + r * r + rho * rho + 2.0 * sigma * (r * c + vz);
            if (grid.truncated && (r2sq > R * R || r3sq > R * R)) continue;
            const double y2 = y_at(r2sq), y3 = y_at(r3sq);
            if (y1 * y2 == 0.0 && y1 * y3 == 0.0 && y2 * y3 == 0.0) continue;
            const auto Z = kernel_Z_all(tau, {g1, coeff.gamma_at_r2(r2sq), coeff.gamma_at_r2(r3sq), g4});
            acc += wuv * collision(Z, y1, y2, y3, y4);
          }
        }
      }
    }
  } else {
    const GaussRule rt = GaussRule::legendre(q.n_v, -Ruv, Ruv);
    const double wth = 2.0 * M_PI / q.n_theta;
    for (int iu = 0; iu < q.n_u; ++iu) {
      const double r = ru.x[std::size_t(iu)];
      for (int it = 0; it < q.n_theta; ++it) {
        // Reflection about the s axis maps theta -> -theta, t -> -t.
        const double th = (it + 0.5) * M_PI / q.n_theta;
        const double c = std::cos(th), sn = std::sin(th);
        const double r1sq = sigma2 + r * r + 2.0 * sigma * r * c;
        if (grid.truncated && r1sq > R * R) continue;
        const double y1 = y_at(r1sq);
        const double g1 = coeff.gamma_at_r2(r1sq);
        const double wu = ru.w[std::size_t(iu)] * wth;
        for (int iv = 0; iv < q.n_v; ++iv) {
          const double t = rt.x[std::size_t(iv)];
          const double r2sq = sigma2 + t * t - 2.0 * sigma * t * sn;
          const double r3sq = sigma2 + r * r + t * t + 2.0 * sigma * (r * c - t * sn);
          if (grid.truncated && (r2sq > R * R || r3sq > R * R)) continue;
          const double y2 = y_at(r2sq), y3 = y_at(r3sq);
          if (y1 * y2 == 0.0 && y1 * y3 == 0.0 && y2 * y3 == 0.0) continue;
          const auto Z = kernel_Z_all(tau, {g1, coeff.gamma_at_r2(r2sq), coeff.gamma_at_r2(r3sq), g4});
          acc += wu * rt.w[std::size_t(iv)] * collision(Z, y1, y2, y3, y4);
        }
      }
    }
  }
  return 4.0 * Cd.value * acc;
}

Eigen::VectorXd kinetic_integral(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                                 const Eigen::VectorXd& m, double tau) {
  Eigen::VectorXd K(Eigen::Index(grid.size()));
  parallel_blocks(grid.size(), [&](std::size_t i) {
    K[Eigen::Index(i)] = kinetic_integral_at(grid, coeff, Cd, m, tau, grid.radii[i]);
  });
  return K;
}

QuadratureCheck kinetic_convergence(const WkeGrid& grid, const WkeCoefficients& coeff, const KineticConstant& Cd,
                                    const Eigen::VectorXd& m, double tau, double s_radius) {
  QuadratureCheck c;
  c.value = kinetic_integral_at(grid, coeff, Cd, m, tau, s_radius);
  c.doubled = kinetic_integral_at(grid.doubled_quadrature(), coeff, Cd, m, tau, s_radius);
  const double scale = std::max(std::abs(c.value), std::abs(c.doubled));
  c.relative_change = scale > 0.0 ? std::abs(c.doubled - c.value) / scale : 0.0;
  c.converged = c.relative_change <= 0.05;
  return c;
}

double WkeSolution::value(double radius, int step, const WkeCoefficients& coeff) const {
  const double tau = time.time(step);
  const double exact = m0_exact(radius, tau, coeff.damping, coeff.forcing);
  if (radius > radii.back()) return exact;
  const double h = radii[1] - radii[0];
  const double x = radius / h;
  const std::size_t i = std::min(std::size_t(x), radii.size() - 2);
  const double t = x - double(i);
  const auto d = [&](std::size_t k) { return m(Eigen::Index(k), step) - m0(Eigen::Index(k), step); };
  return exact + (1.0 - t) * d(i) + t * d(i + 1);
}

Eigen::VectorXd WkeSolution::remainder(int step) const {
  if (epsilon == 0.0) throw std::invalid_argument("remainder needs eps != 0");
  return (m.col(step) - m0.col(step)) / (epsilon * epsilon);
}

WkeSolution solve_wke(const WkeGrid& grid, double eps, const DampingProfile& damping, const ForcingProfile& forcing,
                      const KineticConstant& Cd, const TimeGrid& time, const WkeOptions& options) {
  const WkeCoefficients coeff = WkeCoefficients::make(grid, damping, forcing);
  const Eigen::Index n = Eigen::Index(grid.size());
  const double h = time.h;
  WkeSolution sol;
  sol.radii = grid.radii;
  sol.time = time;
  sol.epsilon = eps;
  sol.m = Eigen::MatrixXd::Zero(n, time.steps + 1);
  sol.m0 = Eigen::MatrixXd::Zero(n, time.steps + 1);
  Eigen::VectorXd E(n), phi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    E[i] = std::exp(-2.0 * coeff.gamma[i] * h);
    phi[i] = h * phi1(2.0 * coeff.gamma[i] * h);
  }
  const Eigen::VectorXd source = 2.0 * coeff.b.array().square().matrix();
  const double eps2 = eps * eps;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < time.steps; ++k) {
    const double tau = time.time(k);
    Eigen::VectorXd next = E.cwiseProduct(m) + phi.cwiseProduct(source);
    if (eps2 != 0.0) {
      const Eigen::VectorXd N0 = eps2 * kinetic_integral(grid, coeff, Cd, m, tau);
      const Eigen::VectorXd pred = next + phi.cwiseProduct(N0);
      const Eigen::VectorXd N1 = eps2 * kinetic_integral(grid, coeff, Cd, pred, tau + h);
      next += 0.5 * h * (E.cwiseProduct(N0) + N1);
    }
    m = next;
    if (!m.allFinite()) throw WkeNegativityError(NAN, time.time(k + 1));
    const double lo = m.minCoeff(), hi = std::max(m.maxCoeff(), 0.0);
    if (lo < -options.negativity_tol * hi) throw WkeNegativityError(lo, time.time(k + 1));
    sol.m.col(k + 1) = m;
  }
  for (int k = 0; k <= time.steps; ++k)
    for (Eigen::Index i = 0; i < n; ++i) sol.m0(i, k) = m0_exact(coeff.gamma[i], coeff.b[i], time.time(k));
  return sol;
}

}  // namespace wtl
