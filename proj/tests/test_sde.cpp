#include "doctest.h"
#include "oracles.hpp"

#include "wtlab/sde.hpp"

#include <cmath>
#include <memory>

using namespace wtl;

namespace {

EffectiveModel small_model(int d, int L, double K, double eps, double r_star = 2.5,
                           bool damping = true, bool forcing = true) {
  auto spec = std::make_shared<const LatticeSpec>(d, L, K);
  auto table = std::make_shared<const ResonanceTable>(build_resonance_table(*spec));
  return EffectiveModel::make(spec, table,
                              damping ? DampingProfile::power_law(r_star) : DampingProfile::disabled(),
                              forcing ? ForcingProfile::gaussian() : ForcingProfile::disabled(),
                              ScalingSpec::with_epsilon(d, L, eps));
}

Field random_field(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Field f(n);
  for (auto& x : f) x = rng.complex_normal();
  return f;
}

// Smooth data e^{-|s|^2} times random phases, normalised to unit l2 norm.
Field smooth_field(const LatticeSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  Field f(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i)
    f[i] = std::exp(-spec.radius2(i)) * std::polar(1.0, 2.0 * M_PI * rng.uniform());
  return f / f.norm();
}

double weighted_norm2(const LatticeSpec& spec, const Field& a, bool by_s2) {
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) acc += (by_s2 ? spec.radius2(i) : 1.0) * std::norm(a[i]);
  return acc;
}

}  // namespace

TEST_CASE("profiles and scaling") {
  const auto g = DampingProfile::power_law(2.5);
  CHECK(g(0.0) == 1.0);
  CHECK(g(3.0) == doctest::Approx(32.0));
  CHECK_THROWS(DampingProfile::power_law(0.0));
  CHECK_THROWS(DampingProfile::custom([](double) { return 0.5; }).on(LatticeSpec(2, 1, 1.0)));
  CHECK_THROWS(DampingProfile::custom([](double y) { return 10.0 - y; }).on(LatticeSpec(2, 2, 2.0)));
  const auto b = ForcingProfile::gaussian();
  CHECK(b(1.0) == doctest::Approx(std::exp(-1.0)));
  CHECK(b.edge_ratio(6.0) < 1e-12);

  const auto sc = ScalingSpec::from_alpha(3, 4, 0.5);
  CHECK(sc.epsilon == doctest::Approx(0.5));
  CHECK(sc.prefactor == doctest::Approx(1.0 / 16.0));
  CHECK_THROWS(ScalingSpec::from_alpha(3, 4, 0.6));
  CHECK_THROWS(ScalingSpec::from_alpha(3, 4, 0.0));
  CHECK_THROWS(ScalingSpec::from_alpha(2, 4, 0.2));
  const auto sc2 = ScalingSpec::from_alpha(2, 4, 1.0 / 6.0);
  CHECK(sc2.prefactor == doctest::Approx(1.0 / (4.0 * std::sqrt(std::log(4.0)))));
  CHECK(ScalingSpec::from_alpha(2, 4, 0.1, false).prefactor == doctest::Approx(0.25));
}

TEST_CASE("time grid") {
  const auto g = TimeGrid::uniform(0.01, 1.0);
  CHECK(g.steps == 100);
  CHECK(g.index_of(0.25) == 25);
  CHECK_THROWS(g.index_of(0.255));
  CHECK_THROWS(g.index_of(1.5));
  CHECK_THROWS(TimeGrid::uniform(0.3, 1.0));
}

TEST_CASE("phi functions") {
  for (double x : {1e-9, 1e-4, 1e-2, 0.5, 3.0, 40.0}) {
    CHECK(phi1(x) == doctest::Approx(-std::expm1(-x) / x).epsilon(1e-12));
    const double ref = x < 1e-2 ? 0.5 - x / 6.0 + x * x / 24.0 : (x - 1.0 + std::exp(-x)) / (x * x);
    CHECK(phi2(x) == doctest::Approx(ref).epsilon(1e-10));
  }
  CHECK(phi1(0.0) == 1.0);
  CHECK(phi2(0.0) == 0.5);
}

TEST_CASE("ou step") {
  Eigen::VectorXd gamma(2), b(2);
  gamma << 1.0, 3.0;
  b << 1.0, 0.5;
  Field a(2);
  a << Complex(1.0, 2.0), Complex(-0.5, 0.1);
  const Field a0 = a;
  Rng rng(1);
  ou_exact_step(a, LinearPropagator::make(gamma, b, 0.0), rng);
  CHECK((a - a0).norm() == 0.0);

  // One-time variance and two-time covariance of the OU chain.
  Eigen::VectorXd g1(1), b1(1);
  g1 << 1.0;
  b1 << 1.0;
  const auto grid = TimeGrid::uniform(0.05, 2.0);
  const auto prop = LinearPropagator::make(g1, b1, grid.h);
  const int N = 10000;
  RunningStat var1, cov_re, cov_im;
  for (int n = 0; n < N; ++n) {
    Rng r(7, Stage::Noise, n);
    const auto traj = ou_trajectory(prop, NoisePath::draw(1, grid, r));
    const Complex x1 = traj(0, grid.index_of(1.0)), x2 = traj(0, grid.index_of(2.0));
    var1.push(std::norm(x1));
    const Complex c = x1 * std::conj(x2);
    cov_re.push(c.real());
    cov_im.push(c.imag());
  }
  CHECK(std::abs(var1.mean - (1.0 - std::exp(-2.0))) < 5 * var1.stderr_mean());
  const double expect = std::exp(-1.0) - std::exp(-3.0);
  CHECK(ou_covariance(1.0, 1.0, 1.0, 2.0) == doctest::Approx(expect));
  CHECK(std::abs(cov_re.mean - expect) < 5 * cov_re.stderr_mean());
  CHECK(std::abs(cov_im.mean) < 5 * cov_im.stderr_mean());
  CHECK(ou_variance(0.0, 1.0, 2.0) == doctest::Approx(4.0));
}

TEST_CASE("nonlinearity Y") {
  const auto m = small_model(3, 2, 2.0, 0.1);
  const auto& spec = *m.lattice;
  const auto& table = *m.table;
  const double pref = m.scaling.prefactor;
  const Field zero = Field::Zero(spec.size());
  CHECK(nonlinearity_Y(table, pref, zero, zero, zero).norm() == 0.0);

  Field e = zero;
  const std::size_t s0 = 17;
  e[s0] = 1.0;
  const Field ye = nonlinearity_Y(table, pref, e, e, e);
  CHECK(ye[s0] == Complex(-0.25, 0.0));
  CHECK((ye - ye[s0] * e).norm() == 0.0);

  const Field v1 = random_field(spec.size(), 1), v2 = random_field(spec.size(), 2),
              v3 = random_field(spec.size(), 3);
  const Field fast = nonlinearity_Y(table, pref, v1, v2, v3);
  const Field slow = oracle::Y(spec, pref, v1, v2, v3);
  CHECK((fast - slow).norm() <= 1e-12 * slow.norm());
  const Field swapped = nonlinearity_Y(table, pref, v2, v1, v3);
  CHECK((fast - swapped).norm() <= 1e-13 * fast.norm());
  CHECK(nonlinearity_Y_row(table, pref, 5, v1, v2, v3) == fast[5]);
  CHECK_THROWS(nonlinearity_Y(table, pref, v1.head(3), v2, v3));
}

TEST_CASE("integrate_effective at eps = 0 is the OU chain") {
  const auto m = small_model(3, 2, 1.0, 0.0);
  const auto grid = TimeGrid::uniform(0.01, 0.5);
  Rng rng(3);
  const auto noise = NoisePath::draw(m.modes(), grid, rng);
  const auto traj = integrate_effective(m, noise, Field());
  const auto ou = ou_trajectory(LinearPropagator::make(m.gamma, m.forcing, grid.h), noise);
  CHECK((traj - ou).norm() == 0.0);
  CHECK(traj.col(0).norm() == 0.0);
}

TEST_CASE("stiffness guard and non-finite detection") {
  const auto m = small_model(3, 2, 1.5, 0.1);
  CHECK_NOTHROW(integrate_effective(small_model(3, 2, 1.5, 0.0), TimeGrid::uniform(0.1, 1.0), 1, 0));
  CHECK_THROWS_AS(integrate_effective(m, TimeGrid::uniform(0.1, 1.0), 1, 0), StiffnessError);
  IntegrateOptions loose;
  loose.enforce_stiffness_guard = false;
  CHECK_NOTHROW(integrate_effective(m, TimeGrid::uniform(0.1, 1.0), 1, 0, loose));

  auto hot = small_model(3, 2, 1.5, 50.0, 2.5, false, false);
  const auto grid = TimeGrid::uniform(0.01, 10.0);
  Rng rng(0);
  const auto noise = NoisePath::draw(hot.modes(), grid, rng);
  const Field init = 10.0 * random_field(hot.modes(), 9);
  CHECK_THROWS_AS(integrate_effective(hot, noise, init), NonFiniteError);
}

TEST_CASE("conservation with damping and forcing disabled") {
  const auto m = small_model(3, 2, 1.5, 0.1, 2.5, false, false);
  const auto grid = TimeGrid::uniform(1e-3, 1.0);
  Rng rng(0);
  const auto noise = NoisePath::draw(m.modes(), grid, rng);
  const Field init = smooth_field(*m.lattice, 42);
  const auto traj = integrate_effective(m, noise, init);
  const Field end = traj.col(grid.steps);
  for (bool by_s2 : {false, true}) {
    const double q0 = weighted_norm2(*m.lattice, init, by_s2);
    const double q1 = weighted_norm2(*m.lattice, end, by_s2);
    CHECK(std::abs(q1 - q0) / q0 < 1e-6);
  }
  // The flow is not trivial.
  CHECK((end - init).norm() > 1e-4);
}

TEST_CASE("determinism and first-order convergence") {
  const auto forced = small_model(3, 2, 1.5, 0.5, 1.0);
  const auto a = integrate_effective(forced, TimeGrid::uniform(0.01, 0.5), 11, 4);
  const auto b = integrate_effective(forced, TimeGrid::uniform(0.01, 0.5), 11, 4);
  CHECK((a.values - b.values).norm() == 0.0);
  CHECK(a.values.norm() > 0.0);
  const auto c = integrate_effective(forced, TimeGrid::uniform(0.01, 0.5), 11, 5);
  CHECK((a.values - c.values).norm() > 0.0);

  const auto m = small_model(3, 2, 1.5, 0.5, 1.0, true, false);

  const Field init = 3.0 * smooth_field(*m.lattice, 5);
  std::vector<Field> ends;
  for (double h : {0.02, 0.01, 0.005, 0.0025}) {
    const auto grid = TimeGrid::uniform(h, 1.0);
    NoisePath quiet;
    quiet.grid = grid;
    quiet.zeta = Eigen::MatrixXcd::Zero(Eigen::Index(m.modes()), grid.steps);
    ends.push_back(integrate_effective(m, quiet, init).col(grid.steps));
  }
  const double e1 = (ends[0] - ends[1]).norm(), e2 = (ends[1] - ends[2]).norm(),
               e3 = (ends[2] - ends[3]).norm();
  const double slope = std::log2(e2 / e3);
  CHECK(e1 > 0.0);
  CHECK(slope >= 0.8);
  CHECK(slope <= 1.2);
}

TEST_CASE("spectrum estimate") {
  const auto grid = TimeGrid::uniform(0.1, 1.0);
  std::vector<FieldTrajectory> zero(3);
  for (auto& t : zero) {
    t.grid = grid;
    t.values = TrajectoryData::Zero(4, grid.steps + 1);
  }
  const auto e = estimate_spectrum(zero, {0.5, 1.0});
  CHECK(e.mean.norm() == 0.0);
  CHECK(e.stderr.norm() == 0.0);
  CHECK(e.samples == 3);
  CHECK_THROWS(estimate_spectrum(std::span<const FieldTrajectory>(zero.data(), 1), {0.5}));

  // eps = 0 ensemble against the closed form, every mode.
  const auto m = small_model(3, 2, 1.5, 0.0);
  const auto g = TimeGrid::uniform(0.01, 1.0);
  SpectrumAccumulator acc(m.modes(), g, {0.25, 1.0});
  for (int n = 0; n < 2000; ++n) acc.push(integrate_effective(m, g, 99, n).values);
  const auto est = acc.estimate();
  for (std::size_t s = 0; s < m.modes(); ++s)
    for (int j = 0; j < 2; ++j) {
      const double expect = ou_variance(m.gamma[s], m.forcing[s], est.times[j]);
      CHECK(std::abs(est.mean(s, j) - expect) < 5.0 * est.stderr(s, j));
    }
}
