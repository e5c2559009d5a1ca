#include "wtlab/sde.hpp"

#include <cmath>
#include <sstream>

namespace wtl {

DampingProfile DampingProfile::power_law(double r_star) {
  if (!(r_star > 0.0)) throw std::invalid_argument("r_star must be positive");
  DampingProfile p;
  p.r_star_ = r_star;
  p.gamma0_ = [r_star](double y) { return std::pow(1.0 + y, r_star); };
  return p;
}

DampingProfile DampingProfile::custom(std::function<double(double)> gamma0) {
  DampingProfile p;
  p.gamma0_ = std::move(gamma0);
  return p;
}

DampingProfile DampingProfile::disabled() {
  DampingProfile p;
  p.disabled_ = true;
  p.gamma0_ = [](double) { return 0.0; };
  return p;
}

double DampingProfile::operator()(double s2) const { return gamma0_(s2); }

Eigen::VectorXd DampingProfile::on(const LatticeSpec& lattice) const {
  Eigen::VectorXd g(lattice.size());
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    g[i] = gamma0_(lattice.radius2(i));
    if (!disabled_ && !(g[i] >= 1.0))
      throw std::invalid_argument("damping profile must satisfy gamma >= 1");
  }
  // Monotone in |s|: modes are sorted by radius.
  for (std::size_t i = 1; i < lattice.size(); ++i)
    if (g[i] < g[i - 1] - 1e-12 * std::abs(g[i - 1]))
      throw std::invalid_argument("damping profile must be non-decreasing in |s|");
  return g;
}

ForcingProfile ForcingProfile::gaussian(double scale, double amplitude) {
  if (!(scale > 0.0) || !(amplitude > 0.0))
    throw std::invalid_argument("forcing needs positive scale and amplitude");
  ForcingProfile f;
  f.scale_ = scale;
  f.amplitude_ = amplitude;
  return f;
}

ForcingProfile ForcingProfile::disabled() {
  ForcingProfile f;
  f.amplitude_ = 0.0;
  return f;
}

double ForcingProfile::operator()(double s2) const {
  return amplitude_ * std::exp(-s2 / (scale_ * scale_));
}

Eigen::VectorXd ForcingProfile::on(const LatticeSpec& lattice) const {
  Eigen::VectorXd b(lattice.size());
  for (std::size_t i = 0; i < lattice.size(); ++i) b[i] = (*this)(lattice.radius2(i));
  return b;
}

double ScalingSpec::lattice_prefactor(int d, int L, bool d2_log_correction) {
  double pref = std::pow(double(L), -(d - 1));
  if (d == 2 && d2_log_correction) {
    if (L < 2) throw std::invalid_argument("the d = 2 log correction needs L >= 2");
    pref /= std::sqrt(std::log(double(L)));
  }
  return pref;
}

ScalingSpec ScalingSpec::from_alpha(int d, int L, double alpha, bool d2_log_correction) {
  const double hi = d == 2 ? 1.0 / 6.0 : 0.5;
  if (!(alpha > 0.0) || alpha > hi + 1e-15) {
    std::ostringstream os;
    os << "alpha = " << alpha << " outside (0, " << hi << "] for d = " << d;
    throw std::invalid_argument(os.str());
  }
  if (L < 2) throw std::invalid_argument("eps = L^{-alpha} needs L >= 2");
  ScalingSpec s;
  s.alpha = alpha;
  s.epsilon = std::pow(double(L), -alpha);
  s.d2_log_correction = d == 2 && d2_log_correction;
  s.prefactor = lattice_prefactor(d, L, s.d2_log_correction);
  return s;
}

ScalingSpec ScalingSpec::with_epsilon(int d, int L, double epsilon, bool d2_log_correction) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("epsilon must be non-negative");
  ScalingSpec s;
  s.epsilon = epsilon;
  s.d2_log_correction = d == 2 && d2_log_correction;
  s.prefactor = lattice_prefactor(d, L, s.d2_log_correction);
  return s;
}

TimeGrid TimeGrid::uniform(double h, double T) {
  if (!(h > 0.0) || !(T >= 0.0)) throw std::invalid_argument("time grid needs h > 0, T >= 0");
  TimeGrid g;
  g.h = h;
  g.steps = static_cast<int>(std::llround(T / h));
  if (std::abs(g.steps * h - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("T must be a multiple of h");
  return g;
}

int TimeGrid::index_of(double tau) const {
  const long k = std::lround(tau / h);
  if (k < 0 || k > steps || std::abs(k * h - tau) > 1e-9 * std::max(1.0, tau))
    throw std::invalid_argument("time " + std::to_string(tau) + " is not on the grid");
  return int(k);
}

NoisePath NoisePath::draw(std::size_t modes, const TimeGrid& grid, Rng& rng) {
  NoisePath p;
  p.grid = grid;
  p.zeta.resize(Eigen::Index(modes), grid.steps);
  for (int k = 0; k < grid.steps; ++k)
    for (std::size_t s = 0; s < modes; ++s) p.zeta(Eigen::Index(s), k) = rng.complex_normal();
  return p;
}

NoisePath NoisePath::scaled(double lambda) const {
  NoisePath p = *this;
  p.zeta *= lambda;
  return p;
}

EffectiveModel EffectiveModel::make(std::shared_ptr<const LatticeSpec> lattice,
                                    std::shared_ptr<const ResonanceTable> table,
                                    const DampingProfile& damping, const ForcingProfile& forcing,
                                    const ScalingSpec& scaling) {
  if (table && table->num_modes() != lattice->size())
    throw std::invalid_argument("resonance table does not match the lattice");
  EffectiveModel m;
  m.gamma = damping.on(*lattice);
  m.forcing = forcing.on(*lattice);
  m.lattice = std::move(lattice);
  m.table = std::move(table);
  m.scaling = scaling;
  return m;
}

double phi1(double x) {
  if (std::abs(x) < 1e-5) return 1.0 - x / 2.0 + x * x / 6.0;
  return -std::expm1(-x) / x;
}

double phi2(double x) {
  if (std::abs(x) < 1e-3) return 0.5 - x / 6.0 + x * x / 24.0 - x * x * x / 120.0;
  return (x + std::expm1(-x)) / (x * x);
}

LinearPropagator LinearPropagator::make(const Eigen::VectorXd& gamma, const Eigen::VectorXd& forcing,
                                        double h) {
  LinearPropagator p;
  p.h = h;
  const auto n = gamma.size();
  p.decay.resize(n);
  p.noise_scale.resize(n);
  p.phi1_h.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = gamma[i] * h;
    p.decay[i] = std::exp(-x);
    p.phi1_h[i] = h * phi1(x);
    // (1 - e^{-2 gamma h}) / gamma = 2 h phi1(2 gamma h)
    p.noise_scale[i] = forcing[i] * std::sqrt(2.0 * h * phi1(2.0 * x));
  }
  return p;
}

void ou_exact_step(Field& a, const LinearPropagator& prop, const Eigen::Ref<const Eigen::VectorXcd>& zeta) {
  a = prop.decay.cwiseProduct(a) + prop.noise_scale.cwiseProduct(zeta);
}

void ou_exact_step(Field& a, const LinearPropagator& prop, Rng& rng) {
  Eigen::VectorXcd zeta(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) zeta[i] = rng.complex_normal();
  ou_exact_step(a, prop, zeta);
}

TrajectoryData ou_trajectory(const LinearPropagator& prop, const NoisePath& noise) {
  const auto n = noise.zeta.rows();
  TrajectoryData out(n, noise.grid.steps + 1);
  Field a = Field::Zero(n);
  out.col(0) = a;
  for (int k = 0; k < noise.grid.steps; ++k) {
    ou_exact_step(a, prop, noise.zeta.col(k));
    out.col(k + 1) = a;
  }
  return out;
}

namespace {

inline Complex row_sum(const ResonanceEntry* it, const ResonanceEntry* end, const Complex* p1,
                       const Complex* p2, const Complex* p3) {
  // Spelled out in reals: std::complex multiplication goes through the
  // NaN-checking library routine otherwise.
  double re = 0.0, im = 0.0;
  for (; it != end; ++it) {
    const double ar = p1[it->i1].real(), ai = p1[it->i1].imag();
    const double br = p2[it->i2].real(), bi = p2[it->i2].imag();
    const double cr = p3[it->i3].real(), ci = -p3[it->i3].imag();
    const double abr = ar * br - ai * bi, abi = ar * bi + ai * br;
    const double sg = double(it->sign);
    re += sg * (abr * cr - abi * ci);
    im += sg * (abr * ci + abi * cr);
  }
  return {re, im};
}

}  // namespace

void nonlinearity_Y(const ResonanceTable& table, double prefactor,
                    const Eigen::Ref<const Eigen::VectorXcd>& v1,
                    const Eigen::Ref<const Eigen::VectorXcd>& v2,
                    const Eigen::Ref<const Eigen::VectorXcd>& v3, Eigen::Ref<Eigen::VectorXcd> out) {
  const std::size_t n = table.num_modes();
  if (std::size_t(v1.size()) != n || std::size_t(v2.size()) != n || std::size_t(v3.size()) != n ||
      std::size_t(out.size()) != n)
    throw std::invalid_argument("nonlinearity_Y: vectors do not match the lattice");
  for (std::size_t s = 0; s < n; ++s)
    out[Eigen::Index(s)] = prefactor * row_sum(table.begin(s), table.end(s), v1.data(), v2.data(), v3.data());
}

Field nonlinearity_Y(const ResonanceTable& table, double prefactor,
                     const Eigen::Ref<const Eigen::VectorXcd>& v1,
                     const Eigen::Ref<const Eigen::VectorXcd>& v2,
                     const Eigen::Ref<const Eigen::VectorXcd>& v3) {
  Field out(v1.size());
  nonlinearity_Y(table, prefactor, v1, v2, v3, out);
  return out;
}

Complex nonlinearity_Y_row(const ResonanceTable& table, double prefactor, std::size_t s,
                           const Eigen::Ref<const Eigen::VectorXcd>& v1,
                           const Eigen::Ref<const Eigen::VectorXcd>& v2,
                           const Eigen::Ref<const Eigen::VectorXcd>& v3) {
  return prefactor * row_sum(table.begin(s), table.end(s), v1.data(), v2.data(), v3.data());
}

NonFiniteError::NonFiniteError(double t, std::size_t m)
    : std::runtime_error("non-finite field at time " + std::to_string(t) + ", mode " + std::to_string(m)),
      time(t),
      mode(m) {}

void check_stiffness(const Eigen::VectorXd& gamma, double h, const IntegrateOptions& options) {
  if (!options.enforce_stiffness_guard || gamma.size() == 0) return;
  const double gmax = gamma.maxCoeff();
  if (gmax > 0.0 && h > options.stiffness_guard / gmax * (1.0 + 1e-12)) {
    std::ostringstream os;
    os << "step h = " << h << " exceeds the stiffness guard " << options.stiffness_guard
       << " / max gamma = " << options.stiffness_guard / gmax;
    throw StiffnessError(os.str());
  }
}

TrajectoryData integrate_effective(const EffectiveModel& model, const NoisePath& noise,
                                   const Field& initial, const IntegrateOptions& options) {
  const TimeGrid& grid = noise.grid;
  // The linear part is exact for any h; the guard only concerns the explicit
  // nonlinear term.
  if (model.scaling.epsilon != 0.0) check_stiffness(model.gamma, grid.h, options);
  const auto n = Eigen::Index(model.modes());
  if (noise.zeta.rows() != n || (initial.size() != 0 && initial.size() != n))
    throw std::invalid_argument("integrate_effective: size mismatch");
  const LinearPropagator prop = LinearPropagator::make(model.gamma, model.forcing, grid.h);
  const double eps = model.scaling.epsilon;
  const Complex ieps(0.0, eps);
  TrajectoryData out(n, grid.steps + 1);
  Field a = initial.size() ? initial : Field::Zero(n);
  Field y(n);
  out.col(0) = a;
  for (int k = 0; k < grid.steps; ++k) {
    if (eps != 0.0) {
      nonlinearity_Y(*model.table, model.scaling.prefactor, a, a, a, y);
      a = prop.decay.cwiseProduct(a) + ieps * prop.phi1_h.cwiseProduct(y) +
          prop.noise_scale.cwiseProduct(noise.zeta.col(k));
    } else {
      ou_exact_step(a, prop, noise.zeta.col(k));
    }
    for (Eigen::Index s = 0; s < n; ++s)
      if (!std::isfinite(a[s].real()) || !std::isfinite(a[s].imag()))
        throw NonFiniteError(grid.time(k + 1), std::size_t(s));
    out.col(k + 1) = a;
  }
  return out;
}

FieldTrajectory integrate_effective(const EffectiveModel& model, const TimeGrid& grid,
                                    std::uint64_t master_seed, std::uint64_t sample_id,
                                    const IntegrateOptions& options) {
  Rng rng(master_seed, Stage::Noise, sample_id);
  const NoisePath noise = NoisePath::draw(model.modes(), grid, rng);
  FieldTrajectory t;
  t.grid = grid;
  t.seed = master_seed;
  t.sample_id = sample_id;
  t.values = integrate_effective(model, noise, Field(), options);
  return t;
}

SpectrumAccumulator::SpectrumAccumulator(std::size_t modes, const TimeGrid& grid,
                                         std::vector<double> times)
    : modes_(modes), times_(std::move(times)) {
  for (double t : times_) columns_.push_back(grid.index_of(t));
  stats_.resize(modes_ * times_.size());
}

SpectrumAccumulator::SpectrumAccumulator(std::vector<std::vector<std::size_t>> groups, const TimeGrid& grid,
                                         std::vector<double> times)
    : SpectrumAccumulator(groups.size(), grid, std::move(times)) {
  for (const auto& g : groups)
    if (g.empty()) throw std::invalid_argument("spectrum groups must be non-empty");
  groups_ = std::move(groups);
}

void SpectrumAccumulator::push(const TrajectoryData& trajectory) {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto col = trajectory.col(columns_[j]);
    for (std::size_t s = 0; s < modes_; ++s) {
      if (groups_.empty()) {
        stats_[j * modes_ + s].push(std::norm(col[Eigen::Index(s)]));
        continue;
      }
      double sum = 0.0;
      for (std::size_t m : groups_[s]) sum += std::norm(col[Eigen::Index(m)]);
      stats_[j * modes_ + s].push(sum / double(groups_[s].size()));
    }
  }
}

void SpectrumAccumulator::merge(const SpectrumAccumulator& other) {
  for (std::size_t i = 0; i < stats_.size(); ++i) stats_[i].merge(other.stats_[i]);
}

SpectrumEstimate SpectrumAccumulator::estimate() const {
  if (count() < 2) throw std::invalid_argument("spectrum estimate needs at least two samples");
  SpectrumEstimate e;
  e.times = times_;
  e.samples = count();
  e.mean.resize(Eigen::Index(modes_), Eigen::Index(times_.size()));
  e.stderr.resizeLike(e.mean);
  for (std::size_t j = 0; j < times_.size(); ++j)
    for (std::size_t s = 0; s < modes_; ++s) {
      const RunningStat& st = stats_[j * modes_ + s];
      e.mean(Eigen::Index(s), Eigen::Index(j)) = st.mean;
      e.stderr(Eigen::Index(s), Eigen::Index(j)) = st.stderr_mean();
    }
  return e;
}

SpectrumEstimate estimate_spectrum(std::span<const FieldTrajectory> ensemble,
                                   const std::vector<double>& times) {
  if (ensemble.size() < 2) throw std::invalid_argument("spectrum estimate needs at least two samples");
  SpectrumAccumulator acc(std::size_t(ensemble.front().values.rows()), ensemble.front().grid, times);
  for (const auto& t : ensemble) acc.push(t.values);
  return acc.estimate();
}

double ou_variance(double gamma, double b, double tau) {
  // (b^2/gamma)(1 - e^{-2 gamma tau}) = 2 tau b^2 phi1(2 gamma tau)
  return 2.0 * tau * b * b * phi1(2.0 * gamma * tau);
}

double ou_covariance(double gamma, double b, double t1, double t2) {
  const double lo = std::min(t1, t2);
  return std::exp(-gamma * std::abs(t1 - t2)) * ou_variance(gamma, b, lo);
}

}  // namespace wtl
