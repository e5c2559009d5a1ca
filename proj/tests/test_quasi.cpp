#include "doctest.h"
#include "oracles.hpp"

#include "wtlab/quasi.hpp"

#include <cmath>
#include <memory>

using namespace wtl;

namespace {

EffectiveModel model_for(double eps, double K = 1.0, int L = 2) {
  auto spec = std::make_shared<const LatticeSpec>(3, L, K);
  auto table = std::make_shared<const ResonanceTable>(build_resonance_table(*spec));
  return EffectiveModel::make(spec, table, DampingProfile::power_law(2.5), ForcingProfile::gaussian(),
                              ScalingSpec::with_epsilon(3, L, eps));
}

NoisePath noise_for(const EffectiveModel& m, const TimeGrid& g, std::uint64_t seed) {
  Rng rng(seed, Stage::Noise, 0);
  return NoisePath::draw(m.modes(), g, rng);
}

double sup_abs(const TrajectoryData& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace

TEST_CASE("duhamel quadrature") {
  Eigen::VectorXd gamma(1);
  gamma << 1.0;
  SUBCASE("zero input") {
    const auto out = duhamel(DuhamelWeights::make(gamma, 0.1), TrajectoryData::Zero(1, 11));
    CHECK(sup_abs(out) == 0.0);
  }
  SUBCASE("constant input") {
    const double h = 0.05;
    const TrajectoryData f = TrajectoryData::Constant(1, 41, Complex(2.0, -1.0));
    const auto out = duhamel(DuhamelWeights::make(gamma, h), f);
    for (int k = 0; k <= 40; ++k) {
      const Complex expect = Complex(2.0, -1.0) * (1.0 - std::exp(-k * h));
      CHECK(std::abs(out(0, k) - expect) < h * h);
    }
  }
  SUBCASE("second order") {
    // int_0^2 e^{-(2-l)} cos(3l) dl = (cos 6 + 3 sin 6 - e^{-2}) / 10.
    const double exact = (std::cos(6.0) + 3.0 * std::sin(6.0) - std::exp(-2.0)) / 10.0;
    std::vector<double> err;
    for (int n : {40, 80, 160}) {
      const double h = 2.0 / n;
      TrajectoryData f(1, n + 1);
      for (int k = 0; k <= n; ++k) f(0, k) = std::cos(3.0 * k * h);
      err.push_back(std::abs(duhamel(DuhamelWeights::make(gamma, h), f)(0, n).real() - exact));
    }
    CHECK(err[0] / err[1] == doctest::Approx(4.0).epsilon(0.1));
    CHECK(err[1] / err[2] == doctest::Approx(4.0).epsilon(0.1));
  }
  CHECK_THROWS_AS(duhamel(DuhamelWeights::make(gamma, 0.1), TrajectoryData::Zero(2, 5)), GridMismatchError);
}

TEST_CASE("tree and composition counts") {
  CHECK(tree_count(0) == 1);
  CHECK(tree_count(1) == 1);
  CHECK(tree_count(2) == 3);
  CHECK(tree_count(3) == 12);
  CHECK(tree_count(4) == 55);
  // Closed form for ternary trees: C(3m, m) / (2m + 1).
  CHECK(tree_count(10) == 1430715);
  for (int m = 1; m <= 4; ++m) CHECK(compositions3(m - 1).size() == std::size_t((m + 1) * m / 2));
  CHECK(remainder_triples(0).size() == 1);
  CHECK(remainder_triples(2).size() == 23);
  CHECK_THROWS(tree_count(-1));
  CHECK_THROWS_AS(tree_count(60), std::overflow_error);
}

TEST_CASE("quasisolution construction") {
  const auto m = model_for(0.25);
  const auto g = TimeGrid::uniform(0.01, 0.5);
  const auto noise = noise_for(m, g, 1);

  const auto set0 = build_quasisolutions(m, noise, 0);
  REQUIRE(set0.orders.size() == 1);
  CHECK(sup_abs(set0.orders[0] - ou_trajectory(LinearPropagator::make(m.gamma, m.forcing, g.h), noise)) == 0.0);

  const auto set = build_quasisolutions(m, noise, 3);
  REQUIRE(set.M() == 3);
  for (const auto& a : set.orders) CHECK(a.col(0).norm() == 0.0);

  // a^(1) against a brute-force Y.
  const auto& a0 = set.orders[0];
  TrajectoryData y(a0.rows(), a0.cols());
  for (Eigen::Index k = 0; k < a0.cols(); ++k)
    y.col(k) = oracle::Y(*m.lattice, m.scaling.prefactor, a0.col(k), a0.col(k), a0.col(k));
  const TrajectoryData a1 = Complex(0.0, 1.0) * duhamel(DuhamelWeights::make(m.gamma, g.h), y);
  CHECK(sup_abs(a1 - set.orders[1]) <= 1e-12 * sup_abs(a1));

  // Row-restricted first order.
  const std::vector<std::size_t> rows{0, 5, 2};
  const TrajectoryData part = first_order_rows(m, g.h, a0, rows);
  for (std::size_t r = 0; r < rows.size(); ++r)
    CHECK(sup_abs(part.row(Eigen::Index(r)) - set.orders[1].row(Eigen::Index(rows[r]))) <= 1e-13 * sup_abs(a1));
  const std::vector<std::size_t> bad{m.modes()};
  CHECK_THROWS(first_order_rows(m, g.h, a0, bad));

  // Homogeneity: scaling the noise by lambda scales a^(m) by lambda^{2m+1}.
  const double lambda = 1.7;
  const auto scaled = build_quasisolutions(m, noise.scaled(lambda), 3);
  for (int k = 0; k <= 3; ++k) {
    const TrajectoryData expect = std::pow(lambda, 2 * k + 1) * set.orders[k];
    CHECK(sup_abs(scaled.orders[k] - expect) <= 1e-12 * sup_abs(expect));
  }

  // The a^(m) do not depend on eps.
  const auto other = build_quasisolutions(model_for(0.5), noise, 3);
  for (int k = 0; k <= 3; ++k) CHECK(sup_abs(other.orders[k] - set.orders[k]) == 0.0);

  // R^0 = Y(a^(0)).
  CHECK(sup_abs(remainder_RM(m, set0, 0.3) - nonlinearity_Y(m, a0, a0, a0)) == 0.0);
}

TEST_CASE("xr norm") {
  const LatticeSpec spec(3, 2, 1.0);
  const auto m = model_for(0.25);
  const auto g = TimeGrid::uniform(0.01, 0.2);
  const auto set = build_quasisolutions(m, noise_for(m, g, 2), 1);
  const auto& u = set.orders[0];
  const auto& v = set.orders[1];
  CHECK(xr_norm(spec, TrajectoryData::Zero(u.rows(), u.cols()), 2.0).value == 0.0);
  CHECK(xr_norm(spec, u, 2.0).value > 0.0);
  CHECK(xr_norm(spec, -2.5 * u, 1.0).value == doctest::Approx(2.5 * xr_norm(spec, u, 1.0).value));
  CHECK(xr_norm(spec, u + v, 1.0).value <= xr_norm(spec, u, 1.0).value + xr_norm(spec, v, 1.0).value);
  // A single unit entry at s = 0 gives L^{-d}.
  TrajectoryData e = TrajectoryData::Zero(u.rows(), u.cols());
  e(0, 3) = 1.0;
  CHECK(xr_norm(spec, e, 5.0).value == doctest::Approx(1.0 / 8.0));
}

TEST_CASE("linearized operator") {
  const auto m = model_for(0.25);
  const auto g = TimeGrid::uniform(0.01, 0.3);
  const auto set = build_quasisolutions(m, noise_for(m, g, 3), 2);
  const TrajectoryData A = set.combined(0.25);
  const TrajectoryData zero = TrajectoryData::Zero(A.rows(), A.cols());
  CHECK(sup_abs(apply_linearized(m, g.h, zero, A)) == 0.0);
  CHECK(sup_abs(apply_linearized(m, g.h, A, zero)) == 0.0);
  const TrajectoryData y1 = set.orders[1], y2 = set.orders[2];
  const double alpha = -0.7;
  const TrajectoryData lhs = apply_linearized(m, g.h, alpha * y1 + y2, A);
  const TrajectoryData rhs = alpha * apply_linearized(m, g.h, y1, A) + apply_linearized(m, g.h, y2, A);
  CHECK(sup_abs(lhs - rhs) <= 1e-12 * sup_abs(rhs));
}

TEST_CASE("disparity identity and its eps scaling") {
  const auto m = model_for(0.5);
  const auto g = TimeGrid::uniform(0.01, 0.5);
  const auto noise = noise_for(m, g, 4);
  const auto set = build_quasisolutions(m, noise, 2);
  std::vector<double> res;
  for (double eps : {0.5, 0.25}) {
    const auto rep = disparity_residual(m, noise, set, eps);
    CHECK(rep.identity_error <= 1e-12 * std::max(1.0, sup_abs(set.orders[0])));
    res.push_back(rep.sup_residual);
  }
  const double slope = std::log(res[0] / res[1]) / std::log(2.0);
  CHECK(std::abs(slope - 3.0) <= 0.5);
}

TEST_CASE("w solvers") {
  const double eps = 0.25;
  const auto m = model_for(eps);
  const auto g = TimeGrid::uniform(0.01, 1.0);
  const auto noise = noise_for(m, g, 5);

  SUBCASE("eps = 0 gives w = 0") {
    const auto set = build_quasisolutions(m, noise, 2);
    CHECK(sup_abs(solve_w_forward(m, set, 0.0)) == 0.0);
  }
  SUBCASE("A + w reproduces the exact solution") {
    const auto set = build_quasisolutions(m, noise, 3);
    const auto w = solve_w_forward(m, set, eps);
    const auto exact = integrate_effective(m, noise, Field());
    CHECK(sup_abs(set.combined(eps) + w - exact) <= 10.0 * g.h);
  }
  SUBCASE("w shrinks with M") {
    const auto set = build_quasisolutions(m, noise, 4);
    std::vector<double> norms;
    for (int M = 2; M <= 4; ++M) {
      QuasisolutionSet sub = set;
      sub.orders.resize(M + 1);
      norms.push_back(xr_norm(*m.lattice, solve_w_forward(m, sub, eps), 0.0).value);
    }
    CHECK(norms[1] < norms[0]);
    CHECK(norms[2] < norms[1]);
  }
  SUBCASE("fixed point agrees with forward solver") {
    const auto set = build_quasisolutions(m, noise, 3);
    const auto fp = solve_w_fixed_point(m, set, eps);
    const auto fw = solve_w_forward(m, set, eps);
    const double scale = sup_abs(fw);
    CHECK(scale > 0.0);
    CHECK(sup_abs(fp.w - fw) <= 10.0 * g.h * scale);
    CHECK(sup_abs(fixed_point_residual(m, set, eps, fp.w)) <= 1e-10 * scale);
    CHECK(fp.contraction < 1.0);
  }
  SUBCASE("zero forcing gives w = 0 in one iteration") {
    NoisePath quiet = noise.scaled(0.0);
    const auto set = build_quasisolutions(m, quiet, 3);
    const auto fp = solve_w_fixed_point(m, set, eps);
    CHECK(fp.iterations == 1);
    CHECK(sup_abs(fp.w) == 0.0);
  }
  SUBCASE("non-contraction is reported") {
    const auto set = build_quasisolutions(m, noise.scaled(40.0), 1);
    FixedPointOptions opt;
    opt.max_iter = 50;
    CHECK_THROWS_AS(solve_w_fixed_point(m, set, 4.0, opt), NonContractionError);
  }
}

TEST_CASE("paper thresholds") {
  const auto t = paper_thresholds(3, 0.5, 3, 3);
  CHECK(t.rho_min == doctest::Approx(22.0));
  CHECK(t.M_min == doctest::Approx(48.0));
  CHECK(t.N == 13);
  CHECK_FALSE(t.satisfied);
  CHECK(paper_thresholds(3, 0.5, 48, 13).satisfied);
}
