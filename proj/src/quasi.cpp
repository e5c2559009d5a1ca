#include "wtlab/quasi.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace wtl {

namespace {

void require_shape(const TrajectoryData& a, const TrajectoryData& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw GridMismatchError(std::string(what) + ": trajectories live on different grids");
}

double bracket(double r2) { return std::max(1.0, std::sqrt(r2)); }

const Complex I(0.0, 1.0);

}  // namespace

XrNorm xr_norm(const LatticeSpec& lattice, const TrajectoryData& v, double r) {
  if (std::size_t(v.rows()) != lattice.size())
    throw GridMismatchError("xr_norm: trajectory does not match the lattice");
  double acc = 0.0;
  for (Eigen::Index s = 0; s < v.rows(); ++s) {
    const double sup = v.cols() ? v.row(s).cwiseAbs().maxCoeff() : 0.0;
    acc += std::pow(bracket(lattice.radius2(std::size_t(s))), r) * sup;
  }
  return {r, acc * std::pow(double(lattice.L()), -lattice.d())};
}

TrajectoryData nonlinearity_Y(const EffectiveModel& model, const TrajectoryData& v1,
                              const TrajectoryData& v2, const TrajectoryData& v3) {
  require_shape(v1, v2, "nonlinearity_Y");
  require_shape(v1, v3, "nonlinearity_Y");
  TrajectoryData out(v1.rows(), v1.cols());
  for (Eigen::Index k = 0; k < v1.cols(); ++k)
    nonlinearity_Y(*model.table, model.scaling.prefactor, v1.col(k), v2.col(k), v3.col(k), out.col(k));
  return out;
}

DuhamelWeights DuhamelWeights::make(const Eigen::VectorXd& gamma, double h) {
  DuhamelWeights w;
  const auto n = gamma.size();
  w.decay.resize(n);
  w.w0.resize(n);
  w.w1.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = gamma[i] * h;
    w.decay[i] = std::exp(-x);
    w.w1[i] = h * phi2(x);
    w.w0[i] = h * (phi1(x) - phi2(x));
  }
  return w;
}

TrajectoryData duhamel(const DuhamelWeights& wt, const TrajectoryData& f) {
  if (f.rows() != wt.decay.size()) throw GridMismatchError("duhamel: mode count mismatch");
  TrajectoryData out(f.rows(), f.cols());
  if (f.cols() == 0) return out;
  out.col(0).setZero();
  for (Eigen::Index k = 0; k + 1 < f.cols(); ++k)
    out.col(k + 1) = wt.decay.cwiseProduct(out.col(k)) + wt.w0.cwiseProduct(f.col(k)) +
                     wt.w1.cwiseProduct(f.col(k + 1));
  return out;
}

TrajectoryData duhamel_cY(const EffectiveModel& model, double h, const TrajectoryData& v1,
                          const TrajectoryData& v2, const TrajectoryData& v3) {
  return duhamel(DuhamelWeights::make(model.gamma, h), nonlinearity_Y(model, v1, v2, v3));
}

std::vector<std::array<int, 3>> compositions3(int n) {
  std::vector<std::array<int, 3>> out;
  for (int a = 0; a <= n; ++a)
    for (int b = 0; a + b <= n; ++b) out.push_back({a, b, n - a - b});
  return out;
}

std::uint64_t tree_count(int m) {
  if (m < 0) throw std::invalid_argument("tree_count needs m >= 0");
  std::vector<std::uint64_t> c{1};
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  auto mul = [&](std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > kMax / a) throw std::overflow_error("tree_count overflows uint64");
    return a * b;
  };
  for (int n = 1; n <= m; ++n) {
    std::uint64_t acc = 0;
    for (const auto& t : compositions3(n - 1)) {
      const std::uint64_t term = mul(mul(c[t[0]], c[t[1]]), c[t[2]]);
      if (acc > kMax - term) throw std::overflow_error("tree_count overflows uint64");
      acc += term;
    }
    c.push_back(acc);
  }
  return c[m];
}

std::vector<std::array<int, 3>> remainder_triples(int M) {
  if (M < 0) throw std::invalid_argument("M must be non-negative");
  std::vector<std::array<int, 3>> out;
  for (int a = 0; a <= M; ++a)
    for (int b = 0; b <= M; ++b)
      for (int c = 0; c <= M; ++c)
        if (a + b + c >= M) out.push_back({a, b, c});
  return out;
}

TrajectoryData QuasisolutionSet::combined(double eps) const {
  TrajectoryData A = orders.at(0);
  double p = 1.0;
  for (std::size_t m = 1; m < orders.size(); ++m) {
    p *= eps;
    A += p * orders[m];
  }
  return A;
}

QuasisolutionSet build_quasisolutions(const EffectiveModel& model, const NoisePath& noise, int M) {
  if (M < 0) throw std::invalid_argument("M must be non-negative");
  if (std::size_t(noise.zeta.rows()) != model.modes())
    throw GridMismatchError("build_quasisolutions: noise does not match the lattice");
  QuasisolutionSet set;
  set.grid = noise.grid;
  set.orders.push_back(ou_trajectory(LinearPropagator::make(model.gamma, model.forcing, noise.grid.h), noise));
  const DuhamelWeights wt = DuhamelWeights::make(model.gamma, noise.grid.h);
  for (int m = 1; m <= M; ++m) {
    // C is linear, so the Y values are summed before a single Duhamel pass.
    TrajectoryData y = TrajectoryData::Zero(set.orders[0].rows(), set.orders[0].cols());
    for (const auto& t : compositions3(m - 1))
      y += nonlinearity_Y(model, set.orders[t[0]], set.orders[t[1]], set.orders[t[2]]);
    set.orders.push_back(I * duhamel(wt, y));
  }
  return set;
}

TrajectoryData first_order_rows(const EffectiveModel& model, double h, const TrajectoryData& a0,
                                std::span<const std::size_t> rows) {
  if (std::size_t(a0.rows()) != model.modes()) throw GridMismatchError("first_order_rows: a0 does not match the lattice");
  TrajectoryData out(Eigen::Index(rows.size()), a0.cols());
  const double pref = model.scaling.prefactor;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t s = rows[r];
    if (s >= model.modes()) throw std::out_of_range("first_order_rows: mode index out of range");
    const double x = model.gamma[Eigen::Index(s)] * h;
    const double decay = std::exp(-x), w1 = h * phi2(x), w0 = h * (phi1(x) - phi2(x));
    Complex prev_y = nonlinearity_Y_row(*model.table, pref, s, a0.col(0), a0.col(0), a0.col(0));
    Complex c = 0.0;
    out(Eigen::Index(r), 0) = 0.0;
    for (Eigen::Index k = 0; k + 1 < a0.cols(); ++k) {
      const Complex y = nonlinearity_Y_row(*model.table, pref, s, a0.col(k + 1), a0.col(k + 1), a0.col(k + 1));
      c = decay * c + w0 * prev_y + w1 * y;
      out(Eigen::Index(r), k + 1) = I * c;
      prev_y = y;
    }
  }
  return out;
}

TrajectoryData remainder_RM(const EffectiveModel& model, const QuasisolutionSet& set, double eps) {
  const int M = set.M();
  TrajectoryData R = TrajectoryData::Zero(set.orders[0].rows(), set.orders[0].cols());
  for (const auto& t : remainder_triples(M)) {
    const double w = std::pow(eps, t[0] + t[1] + t[2] - M);
    R += w * nonlinearity_Y(model, set.orders[t[0]], set.orders[t[1]], set.orders[t[2]]);
  }
  return R;
}

namespace {

// Y^sym(y, A, A) = 2 Y(y, A, A) + Y(A, A, y) using the symmetry of Y in its first two slots.
TrajectoryData ysym_yAA(const EffectiveModel& model, const TrajectoryData& y, const TrajectoryData& A) {
  return 2.0 * nonlinearity_Y(model, y, A, A) + nonlinearity_Y(model, A, A, y);
}

// Y^sym(w, w, A) = Y(w, w, A) + 2 Y(A, w, w).
TrajectoryData ysym_wwA(const EffectiveModel& model, const TrajectoryData& w, const TrajectoryData& A) {
  return nonlinearity_Y(model, w, w, A) + 2.0 * nonlinearity_Y(model, A, w, w);
}

}  // namespace

TrajectoryData apply_linearized(const EffectiveModel& model, double h, const TrajectoryData& y,
                                const TrajectoryData& A) {
  require_shape(y, A, "apply_linearized");
  return I * duhamel(DuhamelWeights::make(model.gamma, h), ysym_yAA(model, y, A));
}

DisparityReport disparity_residual(const EffectiveModel& model, const NoisePath& noise,
                                   const QuasisolutionSet& set, double eps) {
  const TimeGrid& g = set.grid;
  if (!(noise.grid == g)) throw GridMismatchError("disparity_residual: noise on another grid");
  const TrajectoryData A = set.combined(eps);
  const TrajectoryData YA = nonlinearity_Y(model, A, A, A);
  const TrajectoryData R = remainder_RM(model, set, eps);
  const DuhamelWeights wt = DuhamelWeights::make(model.gamma, g.h);
  const LinearPropagator prop = LinearPropagator::make(model.gamma, model.forcing, g.h);
  const Complex ieps = I * eps;
  const Complex ieps_M1 = I * std::pow(eps, set.M() + 1);
  DisparityReport rep;
  for (int k = 0; k < g.steps; ++k) {
    const Field D = A.col(k + 1) - wt.decay.cwiseProduct(A.col(k)) -
                    prop.noise_scale.cwiseProduct(noise.zeta.col(k)) -
                    ieps * (wt.w0.cwiseProduct(YA.col(k)) + wt.w1.cwiseProduct(YA.col(k + 1)));
    const Field pred = ieps_M1 * (wt.w0.cwiseProduct(R.col(k)) + wt.w1.cwiseProduct(R.col(k + 1)));
    rep.sup_residual = std::max(rep.sup_residual, D.cwiseAbs().maxCoeff());
    rep.identity_error = std::max(rep.identity_error, (D + pred).cwiseAbs().maxCoeff());
  }
  return rep;
}

TrajectoryData solve_w_forward(const EffectiveModel& model, const QuasisolutionSet& set, double eps) {
  const TimeGrid& g = set.grid;
  const TrajectoryData A = set.combined(eps);
  const TrajectoryData R = remainder_RM(model, set, eps);
  const LinearPropagator prop = LinearPropagator::make(model.gamma, model.forcing, g.h);
  const auto n = A.rows();
  const double pref = model.scaling.prefactor;
  const ResonanceTable& table = *model.table;
  const double epsM = std::pow(eps, set.M());
  const Complex ieps = I * eps;
  TrajectoryData w(n, g.steps + 1);
  Field cur = Field::Zero(n), f(n), t1(n), t2(n);
  w.col(0) = cur;
  for (int k = 0; k < g.steps; ++k) {
    const auto a = A.col(k);
    f = epsM * R.col(k);
    nonlinearity_Y(table, pref, cur, a, a, t1);
    f += 2.0 * t1;
    nonlinearity_Y(table, pref, a, a, cur, t1);
    f += t1;
    nonlinearity_Y(table, pref, cur, cur, a, t1);
    f += t1;
    nonlinearity_Y(table, pref, a, cur, cur, t2);
    f += 2.0 * t2;
    nonlinearity_Y(table, pref, cur, cur, cur, t1);
    f += t1;
    cur = prop.decay.cwiseProduct(cur) + ieps * prop.phi1_h.cwiseProduct(f);
    for (Eigen::Index s = 0; s < n; ++s)
      if (!std::isfinite(cur[s].real()) || !std::isfinite(cur[s].imag()))
        throw NonFiniteError(g.time(k + 1), std::size_t(s));
    w.col(k + 1) = cur;
  }
  return w;
}

NonContractionError::NonContractionError(double growth, int it)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "fixed-point iteration does not contract: growth factor " << growth << " at iteration " << it;
        return os.str();
      }()),
      growth_factor(growth),
      iteration(it) {}

namespace {

struct FixedPointContext {
  const EffectiveModel& model;
  const LatticeSpec& lattice;
  double h;
  double eps;
  const TrajectoryData& A;
  const TrajectoryData& R;
  double epsM;

  TrajectoryData eL(const TrajectoryData& y) const { return eps * apply_linearized(model, h, y, A); }
  TrajectoryData eL_pow(TrajectoryData y, int n) const {
    for (int k = 0; k < n; ++k) y = eL(y);
    return y;
  }
  TrajectoryData rhs(const TrajectoryData& w) const {
    const TrajectoryData f = ysym_wwA(model, w, A) + nonlinearity_Y(model, w, w, w) + epsM * R;
    return (I * eps) * duhamel(DuhamelWeights::make(model.gamma, h), f);
  }
  double norm(const TrajectoryData& v) const { return xr_norm(lattice, v, 0.0).value; }
};

// Watches successive differences and throws once they keep growing.
struct DivergenceWatch {
  double factor;
  double prev = std::numeric_limits<double>::infinity();
  int growing = 0;
  double ratio = 0.0;

  void push(double diff, int it) {
    if (!std::isfinite(diff)) throw NonContractionError(std::numeric_limits<double>::infinity(), it);
    ratio = std::isfinite(prev) && prev > 0.0 ? diff / prev : 0.0;
    growing = (std::isfinite(prev) && diff > factor * prev) ? growing + 1 : 0;
    if (growing >= 3) throw NonContractionError(ratio, it);
    prev = diff;
  }
};

}  // namespace

FixedPointResult solve_w_fixed_point(const EffectiveModel& model, const QuasisolutionSet& set,
                                     double eps, const FixedPointOptions& options) {
  if (options.neumann_terms < 1) throw std::invalid_argument("neumann_terms must be >= 1");
  const TrajectoryData A = set.combined(eps);
  const TrajectoryData R = remainder_RM(model, set, eps);
  const FixedPointContext ctx{model, *model.lattice, set.grid.h, eps, A, R, std::pow(eps, set.M())};
  const int N = options.neumann_terms;

  FixedPointResult res;
  res.w = TrajectoryData::Zero(A.rows(), A.cols());
  DivergenceWatch outer{options.divergence_factor};
  for (int it = 1; it <= options.max_iter; ++it) {
    const TrajectoryData x = ctx.rhs(res.w);
    // z = (Id - (eps L)^N)^{-1} x by z <- x + (eps L)^N z.
    TrajectoryData z = x;
    DivergenceWatch inner{options.divergence_factor};
    for (int j = 1; j <= options.max_iter; ++j) {
      TrajectoryData next = x + ctx.eL_pow(z, N);
      const double diff = ctx.norm(next - z);
      z = std::move(next);
      ++res.inner_iterations;
      inner.push(diff, j);
      if (diff <= options.tol * std::max(1.0, ctx.norm(z))) break;
      if (j == options.max_iter) throw NonContractionError(inner.ratio, j);
    }
    // w = sum_{k<N} (eps L)^k z.
    TrajectoryData next = z, term = z;
    for (int k = 1; k < N; ++k) {
      term = ctx.eL(term);
      next += term;
    }
    const double diff = ctx.norm(next - res.w);
    res.w = std::move(next);
    res.iterations = it;
    res.last_update = diff;
    outer.push(diff, it);
    res.contraction = outer.ratio;
    if (diff <= options.tol * std::max(1.0, ctx.norm(res.w))) return res;
  }
  throw NonContractionError(res.contraction, res.iterations);
}

TrajectoryData fixed_point_residual(const EffectiveModel& model, const QuasisolutionSet& set,
                                    double eps, const TrajectoryData& w) {
  const TrajectoryData A = set.combined(eps);
  const TrajectoryData R = remainder_RM(model, set, eps);
  const FixedPointContext ctx{model, *model.lattice, set.grid.h, eps, A, R, std::pow(eps, set.M())};
  return w - ctx.eL(w) - ctx.rhs(w);
}

PaperThresholds paper_thresholds(int d, double alpha, int M, int N) {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be positive");
  PaperThresholds t;
  t.rho_min = (2.0 * d + 5.0) / alpha;
  t.M_min = (2.0 * d + 7.0) / alpha + t.rho_min;
  t.N = int(std::ceil((d + 3.0) / alpha)) + 1;
  t.satisfied = M >= t.M_min && N >= t.N;
  return t;
}

}  // namespace wtl
