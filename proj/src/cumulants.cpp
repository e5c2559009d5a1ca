#include "wtlab/cumulants.hpp"

#include "wtlab/parallel.hpp"
#include "wtlab/stats.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <mutex>
#include <regex>
#include <sstream>

namespace wtl {

using cplx = std::complex<double>;

std::vector<std::vector<int>> Partition::blocks() const {
  std::vector<std::vector<int>> out;
  for (int b = 0; b < count; ++b) {
    std::vector<int> items;
    for (int i = 0; i < kMaxSize; ++i)
      if (masks[std::size_t(b)] >> i & 1u) items.push_back(i);
    out.push_back(std::move(items));
  }
  return out;
}

namespace {

std::vector<Partition> generate_partitions(int n) {
  std::vector<Partition> out;
  std::array<int, Partition::kMaxSize> rgs{};
  // Restricted growth strings in lexicographic order: rgs[0] = 0 and
  // rgs[i] <= 1 + max(rgs[0..i-1]).
  auto rec = [&](auto&& self, int i, int maxv) -> void {
    if (i == n) {
      Partition p;
      p.count = std::uint8_t(maxv + 1);
      for (int j = 0; j < n; ++j) p.masks[std::size_t(rgs[std::size_t(j)])] |= std::uint16_t(1u << j);
      out.push_back(p);
      return;
    }
    for (int v = 0; v <= maxv + 1; ++v) {
      rgs[std::size_t(i)] = v;
      self(self, i + 1, std::max(maxv, v));
    }
  };
  rgs[0] = 0;
  rec(rec, 1, 0);
  return out;
}

void guard(int n) {
  if (n < 1 || n > Partition::kMaxSize)
    throw CombinatoricsGuardError("partition size " + std::to_string(n) + " outside [1, 12]");
}

// Spreads the bits of a compact mask over the set bits of `support`.
std::uint32_t deposit(std::uint32_t compact, std::uint32_t support) {
  std::uint32_t out = 0;
  for (int i = 0; support; ++i) {
    const std::uint32_t low = support & (~support + 1u);
    if (compact >> i & 1u) out |= low;
    support &= support - 1u;
  }
  return out;
}

double factorial(int n) {
  double f = 1.0;
  for (int i = 2; i <= n; ++i) f *= i;
  return f;
}

}  // namespace

const std::vector<Partition>& partitions(int n) {
  guard(n);
  static std::mutex mu;
  static std::array<std::vector<Partition>, Partition::kMaxSize + 1> memo;
  static std::array<bool, Partition::kMaxSize + 1> ready{};
  std::lock_guard<std::mutex> lock(mu);
  if (!ready[std::size_t(n)]) {
    memo[std::size_t(n)] = generate_partitions(n);
    ready[std::size_t(n)] = true;
  }
  return memo[std::size_t(n)];
}

std::vector<Partition> partitions_p2(int x_size, int y_size) {
  if (x_size < 0 || y_size < 0) throw std::invalid_argument("sizes must be non-negative");
  const int n = x_size + y_size;
  if (n > Partition::kMaxSize) guard(n);
  std::vector<Partition> out;
  if (y_size == 0 || n == 0) return out;
  const std::uint32_t ymask = ((1u << y_size) - 1u) << x_size;
  for (const Partition& p : partitions(n)) {
    bool ok = true;
    for (int b = 0; b < p.size() && ok; ++b) ok = (p.block(b) & ymask) != 0;
    if (ok) out.push_back(p);
  }
  return out;
}

cplx cumulant_of_subset(const SubsetFunction& moment, std::uint32_t mask) {
  const int k = std::popcount(mask);
  guard(k);
  cplx acc = 0.0;
  for (const Partition& p : partitions(k)) {
    cplx prod = 1.0;
    for (int b = 0; b < p.size(); ++b) prod *= moment(deposit(p.block(b), mask));
    const int m = p.size();
    acc += ((m - 1) % 2 ? -1.0 : 1.0) * factorial(m - 1) * prod;
  }
  return acc;
}

cplx cumulant_from_moments(const SubsetFunction& moment, int n) {
  guard(n);
  return cumulant_of_subset(moment, (1u << n) - 1u);
}

cplx moments_from_cumulants(const SubsetFunction& cumulant, int n) {
  guard(n);
  cplx acc = 0.0;
  for (const Partition& p : partitions(n)) {
    cplx prod = 1.0;
    for (int b = 0; b < p.size(); ++b) prod *= cumulant(p.block(b));
    acc += prod;
  }
  return acc;
}

cplx DiscreteLaw::moment(std::uint32_t mask) const {
  cplx acc = 0.0;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    cplx prod = 1.0;
    for (int i = 0; i < dimension(); ++i)
      if (mask >> i & 1u) prod *= atoms[a][i];
    acc += probabilities[a] * prod;
  }
  return acc;
}

DiscreteLaw DiscreteLaw::empirical(const Eigen::MatrixXcd& samples) {
  DiscreteLaw law;
  const double w = 1.0 / double(samples.rows());
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    law.atoms.push_back(samples.row(r).transpose());
    law.probabilities.push_back(w);
  }
  return law;
}

double malyshev_check(int v_size, int w_size, const DiscreteLaw& law) {
  if (v_size < 0 || w_size < 1) throw std::invalid_argument("malyshev_check needs |W| >= 1");
  const int n = v_size + w_size;
  if (n > 8) throw CombinatoricsGuardError("malyshev_check is limited to |V ⊔ W| <= 8");
  if (law.dimension() != n) throw std::invalid_argument("law dimension does not match |V| + |W|");
  const std::uint32_t vmask = (1u << v_size) - 1u;
  const std::uint32_t wmask = ((1u << w_size) - 1u) << v_size;
  // Left side: the law of (V, prod W) has moments M(A) for A without the
  // product slot and M(A ∪ W) with it.
  const int reduced = v_size + 1;
  const SubsetFunction reduced_moment = [&](std::uint32_t m) {
    std::uint32_t full = m & vmask;
    if (m >> v_size & 1u) full |= wmask;
    return law.moment(full);
  };
  const cplx lhs = cumulant_from_moments(reduced_moment, reduced);
  const SubsetFunction moment = [&](std::uint32_t m) { return law.moment(m); };
  cplx rhs = 0.0;
  for (const Partition& p : partitions_p2(v_size, w_size)) {
    cplx prod = 1.0;
    for (int b = 0; b < p.size(); ++b) prod *= cumulant_of_subset(moment, p.block(b));
    rhs += prod;
  }
  return std::abs(lhs - rhs);
}

int CumulantRequest::p() const {
  int n = 0;
  for (const auto& e : entries) n += e.conjugated ? 0 : 1;
  return n;
}

int CumulantRequest::degree() const {
  int n = 0;
  for (const auto& e : entries) n += e.order;
  return n;
}

int CumulantRequest::max_order() const {
  int n = 0;
  for (const auto& e : entries) n = std::max(n, e.order);
  return n;
}

bool CumulantRequest::balanced(const LatticeSpec& lattice) const {
  IntVec plus = IntVec::Zero(), minus = IntVec::Zero();
  int np = 0, nm = 0;
  for (const auto& e : entries) {
    if (e.conjugated) {
      minus += lattice.mode(e.mode);
      ++nm;
    } else {
      plus += lattice.mode(e.mode);
      ++np;
    }
  }
  return np == nm && plus == minus;
}

bool CumulantRequest::energy_balanced(const LatticeSpec& lattice) const {
  std::int64_t plus = 0, minus = 0;
  for (const auto& e : entries) (e.conjugated ? minus : plus) += norm2(lattice.mode(e.mode));
  return plus == minus;
}

CumulantRequest CumulantRequest::parse(const std::string& text, const LatticeSpec& lattice) {
  static const std::regex entry_re(
      R"(\s*a\s*:\s*(\d+)\s*:\s*([+-])\s*:\s*\(([^)]*)\)\s*@\s*([0-9.eE+-]+)\s*)");
  CumulantRequest req;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    // Coordinates contain commas: re-join until the parentheses close.
    while (item.find('(') != std::string::npos && item.find(')') == std::string::npos) {
      std::string more;
      if (!std::getline(ss, more, ',')) break;
      item += "," + more;
    }
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::smatch m;
    if (!std::regex_match(item, m, entry_re)) throw std::invalid_argument("bad cumulant entry '" + item + "'");
    CumulantEntry e;
    e.order = std::stoi(m[1]);
    e.conjugated = m[2] == "-";
    e.time = std::stod(m[4]);
    std::stringstream cs(m[3]);
    std::string c;
    IntVec z = IntVec::Zero();
    int k = 0;
    while (std::getline(cs, c, ',')) {
      if (k >= lattice.d()) throw std::invalid_argument("too many coordinates in '" + item + "'");
      const double zc = std::stod(c) * lattice.L();
      const long r = std::lround(zc);
      if (std::abs(zc - double(r)) > 1e-9) throw std::invalid_argument("mode in '" + item + "' is not on the lattice");
      z[k++] = int(r);
    }
    if (k != lattice.d()) throw std::invalid_argument("wrong number of coordinates in '" + item + "'");
    const int idx = lattice.index_of(z);
    if (idx < 0) throw std::invalid_argument("mode in '" + item + "' is outside the truncation");
    e.mode = std::size_t(idx);
    req.entries.push_back(e);
  }
  if (req.entries.empty()) throw std::invalid_argument("empty cumulant request");
  return req;
}

std::string CumulantRequest::to_string(const LatticeSpec& lattice) const {
  std::ostringstream os;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto s = lattice.coords(e.mode);
    if (i) os << ", ";
    os << "a:" << e.order << ":" << (e.conjugated ? '-' : '+') << ":(";
    for (int k = 0; k < lattice.d(); ++k) os << (k ? "," : "") << s[k];
    os << ")@" << e.time;
  }
  return os.str();
}

std::string CumulantEstimate::to_json() const {
  nlohmann::json j;
  j["value_re"] = value.real();
  j["value_im"] = value.imag();
  j["stderr"] = stderr;
  j["p"] = p;
  j["degJ"] = degree;
  j["balanced"] = balanced;
  j["samples"] = samples;
  return j.dump();
}

namespace {

// Per-block sums of all subset products for several column groups.
struct BlockMoments {
  std::size_t blocks = 0;
  std::vector<std::size_t> block_count;
  // [group][block][mask]
  std::vector<std::vector<std::vector<cplx>>> sums;
  std::vector<std::vector<cplx>> totals;  // [group][mask]
  std::size_t samples = 0;
};

BlockMoments block_moments(const Eigen::MatrixXcd& X, const std::vector<std::vector<int>>& groups,
                           std::size_t blocks) {
  BlockMoments bm;
  const std::size_t N = std::size_t(X.rows());
  bm.samples = N;
  bm.blocks = std::max<std::size_t>(1, std::min(blocks, N));
  bm.block_count.assign(bm.blocks, 0);
  bm.sums.resize(groups.size());
  bm.totals.resize(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t k = groups[g].size();
    if (k == 0 || k > 8) throw CombinatoricsGuardError("cumulant requests hold 1 to 8 entries");
    bm.sums[g].assign(bm.blocks, std::vector<cplx>(std::size_t(1) << k, 0.0));
    bm.totals[g].assign(std::size_t(1) << k, 0.0);
  }
  std::vector<cplx> prod;
  for (std::size_t r = 0; r < N; ++r) {
    // Contiguous blocks whose sizes differ by at most one.
    const std::size_t b = r * bm.blocks / N;
    ++bm.block_count[b];
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const std::size_t k = groups[g].size();
      prod.assign(std::size_t(1) << k, 1.0);
      for (std::size_t m = 1; m < prod.size(); ++m) {
        const int low = std::countr_zero(m);
        prod[m] = prod[m & (m - 1)] * X(Eigen::Index(r), groups[g][std::size_t(low)]);
      }
      auto& s = bm.sums[g][b];
      for (std::size_t m = 1; m < prod.size(); ++m) s[m] += prod[m];
    }
  }
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (std::size_t b = 0; b < bm.blocks; ++b)
      for (std::size_t m = 0; m < bm.totals[g].size(); ++m) bm.totals[g][m] += bm.sums[g][b][m];
  return bm;
}

// Family mean of the cumulants given block weights (number of copies of each block).
cplx family_value(const BlockMoments& bm, const std::vector<std::vector<int>>& groups,
                  const std::vector<double>& weight) {
  double n = 0.0;
  for (std::size_t b = 0; b < bm.blocks; ++b) n += weight[b] * double(bm.block_count[b]);
  cplx acc = 0.0;
  std::vector<cplx> mom;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t size = bm.totals[g].size();
    mom.assign(size, 0.0);
    for (std::size_t b = 0; b < bm.blocks; ++b)
      if (weight[b] != 0.0)
        for (std::size_t m = 1; m < size; ++m) mom[m] += weight[b] * bm.sums[g][b][m];
    for (auto& x : mom) x /= n;
    const SubsetFunction moment = [&](std::uint32_t m) { return mom[m]; };
    acc += cumulant_from_moments(moment, int(groups[g].size()));
  }
  return acc / double(groups.size());
}

}  // namespace

CumulantEstimate estimate_cumulant_family(const Eigen::MatrixXcd& samples,
                                          const std::vector<std::vector<int>>& groups,
                                          const EstimatorOptions& options) {
  if (samples.rows() < 2) throw std::invalid_argument("cumulant estimate needs at least two samples");
  if (groups.empty()) throw std::invalid_argument("empty request family");
  const BlockMoments bm = block_moments(samples, groups, options.groups);
  CumulantEstimate est;
  est.samples = bm.samples;
  std::vector<double> ones(bm.blocks, 1.0);
  est.value = family_value(bm, groups, ones);
  std::vector<cplx> reps;
  if (options.method == ErrorMethod::Jackknife) {
    for (std::size_t b = 0; b < bm.blocks; ++b) {
      std::vector<double> w = ones;
      w[b] = 0.0;
      reps.push_back(family_value(bm, groups, w));
    }
    est.stderr = jackknife_stderr(reps);
  } else {
    Rng rng(options.bootstrap_seed, Stage::Auxiliary, 0);
    RunningStat re, im;
    for (std::size_t r = 0; r < options.bootstrap_replicates; ++r) {
      std::vector<double> w(bm.blocks, 0.0);
      for (std::size_t b = 0; b < bm.blocks; ++b)
        w[std::min(bm.blocks - 1, std::size_t(rng.uniform() * double(bm.blocks)))] += 1.0;
      const cplx v = family_value(bm, groups, w);
      re.push(v.real());
      im.push(v.imag());
    }
    est.stderr = std::sqrt(re.variance() + im.variance());
  }
  return est;
}

CumulantEstimate estimate_cumulant(const Eigen::MatrixXcd& samples, const EstimatorOptions& options) {
  std::vector<int> all(std::size_t(samples.cols()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = int(i);
  return estimate_cumulant_family(samples, {all}, options);
}

Eigen::VectorXcd request_values(const QuasisolutionSet& set, const std::vector<CumulantEntry>& entries) {
  Eigen::VectorXcd out(Eigen::Index(entries.size()));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (e.order > set.M())
      throw std::invalid_argument("request needs order " + std::to_string(e.order) + " but the ensemble has M = " +
                                  std::to_string(set.M()));
    const cplx v = set.orders[std::size_t(e.order)](Eigen::Index(e.mode), set.grid.index_of(e.time));
    out[Eigen::Index(i)] = e.conjugated ? std::conj(v) : v;
  }
  return out;
}

QuasisolutionSet QuasiEnsemble::sample(std::size_t i) const {
  Rng rng(seed, Stage::Noise, i);
  return build_quasisolutions(*model, NoisePath::draw(model->modes(), grid, rng), M);
}

Eigen::MatrixXcd QuasiEnsemble::gather(const std::vector<CumulantEntry>& entries) const {
  for (const auto& e : entries)
    if (e.order > M) throw std::invalid_argument("request order exceeds the ensemble's M");
  Eigen::MatrixXcd X(Eigen::Index(samples), Eigen::Index(entries.size()));
  constexpr std::size_t chunk = 64;
  int top = 0;
  std::vector<std::size_t> rows;
  for (const auto& e : entries) {
    top = std::max(top, e.order);
    if (e.order == 1 && std::find(rows.begin(), rows.end(), e.mode) == rows.end()) rows.push_back(e.mode);
  }
  if (top <= 1) {
    // Orders 0 and 1 only: a^(1) is needed on the requested rows alone.
    const LinearPropagator prop = LinearPropagator::make(model->gamma, model->forcing, grid.h);
    parallel_blocks((samples + chunk - 1) / chunk, [&](std::size_t b) {
      for (std::size_t i = b * chunk; i < std::min(samples, (b + 1) * chunk); ++i) {
        Rng rng(seed, Stage::Noise, i);
        const TrajectoryData a0 = ou_trajectory(prop, NoisePath::draw(model->modes(), grid, rng));
        const TrajectoryData a1 = rows.empty() ? TrajectoryData() : first_order_rows(*model, grid.h, a0, rows);
        for (std::size_t c = 0; c < entries.size(); ++c) {
          const auto& e = entries[c];
          const Eigen::Index k = grid.index_of(e.time);
          Complex v;
          if (e.order == 0) {
            v = a0(Eigen::Index(e.mode), k);
          } else {
            const auto r = std::find(rows.begin(), rows.end(), e.mode) - rows.begin();
            v = a1(Eigen::Index(r), k);
          }
          X(Eigen::Index(i), Eigen::Index(c)) = e.conjugated ? std::conj(v) : v;
        }
      }
    });
    return X;
  }
  const std::size_t blocks = (samples + chunk - 1) / chunk;
  parallel_blocks(blocks, [&](std::size_t b) {
    for (std::size_t i = b * chunk; i < std::min(samples, (b + 1) * chunk); ++i)
      X.row(Eigen::Index(i)) = request_values(sample(i), entries).transpose();
  });
  return X;
}

namespace {

void validate_request(const CumulantRequest& request, std::size_t samples, int M) {
  if (samples < 100) throw std::invalid_argument("empirical cumulants need at least 100 samples");
  if (request.size() == 0 || request.size() > 8) throw CombinatoricsGuardError("requests hold 1 to 8 entries");
  if (request.max_order() > M)
    throw std::invalid_argument("request references order " + std::to_string(request.max_order()) +
                                " beyond the ensemble's M = " + std::to_string(M));
}

CumulantEstimate tag(CumulantEstimate est, const CumulantRequest& request, const LatticeSpec& lattice) {
  est.p = request.p();
  est.degree = request.degree();
  est.balanced = request.balanced(lattice);
  return est;
}

}  // namespace

CumulantEstimate empirical_cumulant(std::span<const QuasisolutionSet> ensemble, const LatticeSpec& lattice,
                                    const CumulantRequest& request, const EstimatorOptions& options) {
  validate_request(request, ensemble.size(), ensemble.empty() ? 0 : ensemble.front().M());
  Eigen::MatrixXcd X(Eigen::Index(ensemble.size()), Eigen::Index(request.size()));
  for (std::size_t i = 0; i < ensemble.size(); ++i)
    X.row(Eigen::Index(i)) = request_values(ensemble[i], request.entries).transpose();
  return tag(estimate_cumulant(X, options), request, lattice);
}

CumulantEstimate empirical_cumulant(const QuasiEnsemble& ensemble, const CumulantRequest& request,
                                    const EstimatorOptions& options) {
  validate_request(request, ensemble.samples, ensemble.M);
  return tag(estimate_cumulant(ensemble.gather(request.entries), options), request, *ensemble.model->lattice);
}

SelectionScanReport selection_rule_scan(const QuasiEnsemble& ensemble, const SelectionScanOptions& options,
                                        const EstimatorOptions& estimator) {
  const LatticeSpec& lattice = *ensemble.model->lattice;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < lattice.size(); ++i)
    if (lattice.radius(i) <= options.mode_radius + 1e-12) pool.push_back(i);
  if (pool.empty()) throw std::invalid_argument("no modes inside the scan radius");
  const std::vector<double> times = options.times.empty() ? std::vector<double>{ensemble.grid.T()} : options.times;
  Rng rng(options.seed, Stage::Scan, 0);
  auto pick = [&](std::size_t n) { return std::min(n - 1, std::size_t(rng.uniform() * double(n))); };
  auto random_entry = [&](bool conj) {
    CumulantEntry e;
    e.order = int(pick(std::size_t(ensemble.M) + 1));
    e.mode = pool[pick(pool.size())];
    e.conjugated = conj;
    e.time = times[pick(times.size())];
    return e;
  };

  std::vector<CumulantRequest> unbalanced, balanced;
  while (int(unbalanced.size()) < options.draws) {
    CumulantRequest r;
    const std::size_t k = 1 + pick(std::size_t(options.max_size));
    for (std::size_t j = 0; j < k; ++j) r.entries.push_back(random_entry(rng.uniform() < 0.5));
    if (!r.balanced(lattice)) unbalanced.push_back(r);
  }
  int guard_tries = 0;
  while (int(balanced.size()) < options.balanced_draws && guard_tries++ < 100000) {
    CumulantRequest r;
    const int p = 1 + int(pick(std::size_t(std::max(1, options.max_size / 2))));
    IntVec plus = IntVec::Zero(), minus = IntVec::Zero();
    for (int j = 0; j < p; ++j) {
      r.entries.push_back(random_entry(false));
      plus += lattice.mode(r.entries.back().mode);
    }
    for (int j = 0; j + 1 < p; ++j) {
      r.entries.push_back(random_entry(true));
      minus += lattice.mode(r.entries.back().mode);
    }
    const int last = lattice.index_of(plus - minus);
    if (last < 0) continue;
    CumulantEntry e = random_entry(true);
    e.mode = std::size_t(last);
    r.entries.push_back(e);
    balanced.push_back(r);
  }

  // One pass over the ensemble for every entry of every request.
  std::vector<CumulantEntry> columns;
  std::vector<std::vector<int>> u_groups, b_groups;
  auto add = [&](const CumulantRequest& r, std::vector<std::vector<int>>& groups) {
    std::vector<int> g;
    for (const auto& e : r.entries) {
      g.push_back(int(columns.size()));
      columns.push_back(e);
    }
    groups.push_back(g);
  };
  for (const auto& r : unbalanced) add(r, u_groups);
  for (const auto& r : balanced) add(r, b_groups);
  const Eigen::MatrixXcd X = ensemble.gather(columns);

  SelectionScanReport rep;
  auto run = [&](const std::vector<CumulantRequest>& reqs, const std::vector<std::vector<int>>& groups,
                 std::vector<SelectionScanRow>& rows) {
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      SelectionScanRow row;
      row.request = reqs[i];
      row.estimate = tag(estimate_cumulant_family(X, {groups[i]}, estimator), reqs[i], lattice);
      row.ratio = row.estimate.stderr > 0.0 ? std::abs(row.estimate.value) / row.estimate.stderr
                                            : (std::abs(row.estimate.value) > 0.0 ? INFINITY : 0.0);
      row.energy_balanced = reqs[i].energy_balanced(lattice);
      rows.push_back(row);
    }
  };
  run(unbalanced, u_groups, rep.unbalanced);
  run(balanced, b_groups, rep.balanced);
  for (const auto& r : rep.unbalanced) rep.max_unbalanced_ratio = std::max(rep.max_unbalanced_ratio, r.ratio);
  return rep;
}

ScalingFit scaling_fit(const std::vector<ScalingPoint>& points, int d, int p) {
  if (points.size() < 3) throw std::invalid_argument("scaling_fit needs at least three values of L");
  std::vector<double> x, y, s;
  bool weighted = true;
  for (const auto& pt : points) {
    if (!(std::abs(pt.value) > 0.0)) throw std::invalid_argument("scaling_fit: zero cumulant at L = " + std::to_string(pt.L));
    x.push_back(std::log(double(pt.L)));
    y.push_back(std::log(std::abs(pt.value)));
    s.push_back(pt.stderr / std::abs(pt.value));
    weighted = weighted && pt.stderr > 0.0;
  }
  const LineFit fit = weighted ? fit_line(x, y, s) : fit_line(x, y);
  ScalingFit out;
  out.slope = fit.slope;
  out.slope_stderr = fit.slope_stderr;
  out.ci_low = fit.slope - 1.96 * fit.slope_stderr;
  out.ci_high = fit.slope + 1.96 * fit.slope_stderr;
  out.expected = -double((d - 1) * (p - 1));
  return out;
}

}  // namespace wtl
