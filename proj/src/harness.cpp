#include "wtlab/harness.hpp"

#include "wtlab/parallel.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace wtl {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
  if (pos != v.size() || !std::isfinite(x)) throw ConfigError(key + ": not a number: '" + v + "'");
  return x;
}

long long to_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key + ": not an integer: '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

std::string num(double x) { return format_number(x); }

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

const std::vector<std::string> kStages = {"simulate", "quasisolution", "cumulants", "wke", "compare"};

}  // namespace

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "d",           "L",          "K",           "alpha",          "epsilon",       "d2_log_correction",
      "r_star",      "b_scale",    "b_amplitude", "h",              "T",             "samples",
      "seed",        "times",      "orbit_average", "compare_radius", "store_samples", "M",
      "quasi_samples", "cumulant_request", "cumulant_method", "wke_grid", "wke_h",  "cd_mode",
      "cd_value",    "cd_L",       "stages"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "d") {
    const auto x = to_int(key, v);
    require(x == 2 || x == 3, key, "must be 2 or 3");
    d = int(x);
  } else if (key == "L") {
    const auto x = to_int(key, v);
    require(x >= 2 && x <= 256, key, "must lie in [2, 256]");
    L = int(x);
  } else if (key == "K") {
    K = to_double(key, v);
    require(K > 0.0 && K <= 64.0, key, "must lie in (0, 64]");
  } else if (key == "alpha") {
    alpha = to_double(key, v);
    require(alpha > 0.0 && alpha <= 0.5, key, "must lie in (0, 1/2]");
  } else if (key == "epsilon") {
    epsilon = to_double(key, v);
    require(*epsilon >= 0.0 && *epsilon <= 1.0, key, "must lie in [0, 1]");
  } else if (key == "d2_log_correction") {
    d2_log_correction = to_bool(key, v);
  } else if (key == "r_star") {
    r_star = to_double(key, v);
    require(r_star > 0.0 && r_star <= 50.0, key, "must lie in (0, 50]");
  } else if (key == "b_scale") {
    b_scale = to_double(key, v);
    require(b_scale > 0.0 && b_scale <= 100.0, key, "must lie in (0, 100]");
  } else if (key == "b_amplitude") {
    b_amplitude = to_double(key, v);
    require(b_amplitude >= 0.0 && b_amplitude <= 1e6, key, "must lie in [0, 1e6]");
  } else if (key == "h") {
    h = to_double(key, v);
    require(h > 0.0 && h <= 1.0, key, "must lie in (0, 1]");
  } else if (key == "T") {
    T = to_double(key, v);
    require(T > 0.0 && T <= 1000.0, key, "must lie in (0, 1000]");
  } else if (key == "samples") {
    const auto x = to_int(key, v);
    require(x >= 2 && x <= 1'000'000'000, key, "must lie in [2, 1e9]");
    samples = std::size_t(x);
  } else if (key == "seed") {
    require(!v.empty() && v.find_first_not_of("0123456789") == std::string::npos, key,
            "must be a non-negative integer");
    try {
      seed = std::stoull(v);
    } catch (const std::exception&) {
      throw ConfigError("seed: out of range");
    }
  } else if (key == "times") {
    times.clear();
    for (const auto& t : split(v, ',')) times.push_back(to_double(key, t));
    require(!times.empty(), key, "needs at least one time");
  } else if (key == "orbit_average") {
    orbit_average = to_bool(key, v);
  } else if (key == "compare_radius") {
    compare_radius = to_double(key, v);
    require(compare_radius > 0.0, key, "must be positive");
  } else if (key == "store_samples") {
    const auto x = to_int(key, v);
    require(x >= 0, key, "must be non-negative");
    store_samples = std::size_t(x);
  } else if (key == "M") {
    const auto x = to_int(key, v);
    require(x >= 0 && x <= 6, key, "must lie in [0, 6]");
    M = int(x);
  } else if (key == "quasi_samples") {
    const auto x = to_int(key, v);
    require(x == 0 || (x >= 2 && x <= 100'000'000), key, "must be 0 or lie in [2, 1e8]");
    quasi_samples = std::size_t(x);
  } else if (key == "cumulant_request") {
    cumulant_request = v;
  } else if (key == "cumulant_method") {
    require(v == "jackknife" || v == "bootstrap", key, "must be jackknife or bootstrap");
    cumulant_method = v == "jackknife" ? ErrorMethod::Jackknife : ErrorMethod::Bootstrap;
  } else if (key == "wke_grid") {
    wke_grid = v;
  } else if (key == "wke_h") {
    wke_h = to_double(key, v);
    require(wke_h > 0.0 && wke_h <= 1.0, key, "must lie in (0, 1]");
  } else if (key == "cd_mode") {
    require(v == "configured" || v == "estimated", key, "must be configured or estimated");
    cd_mode = v;
  } else if (key == "cd_value") {
    cd_value = to_double(key, v);
  } else if (key == "cd_L") {
    cd_L.clear();
    for (const auto& t : split(v, ',')) {
      const auto x = to_int(key, t);
      require(x >= 2 && x <= 64, key, "entries must lie in [2, 64]");
      cd_L.push_back(int(x));
    }
    require(cd_L.size() >= 2, key, "needs at least two sizes");
  } else if (key == "stages") {
    stages.clear();
    for (const auto& t : split(v, ',')) {
      require(std::find(kStages.begin(), kStages.end(), t) != kStages.end(), key, "unknown stage '" + t + "'");
      stages.push_back(t);
    }
    require(!stages.empty(), key, "needs at least one stage");
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    try {
      c.set(key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (seen.count("alpha") && seen.count("epsilon")) throw ConfigError("give either alpha or epsilon, not both");
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ScalingSpec RunConfig::scaling() const {
  return epsilon ? ScalingSpec::with_epsilon(d, L, *epsilon, d2_log_correction)
                 : ScalingSpec::from_alpha(d, L, alpha, d2_log_correction);
}

DampingProfile RunConfig::damping() const { return DampingProfile::power_law(r_star); }

ForcingProfile RunConfig::forcing() const {
  return b_amplitude == 0.0 ? ForcingProfile::disabled() : ForcingProfile::gaussian(b_scale, b_amplitude);
}

TimeGrid RunConfig::grid() const { return TimeGrid::uniform(h, T); }

std::vector<double> RunConfig::spectrum_times() const { return times.empty() ? std::vector<double>{T} : times; }

bool RunConfig::has_stage(const std::string& stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void RunConfig::validate() const {
  if (!epsilon) {
    const double hi = d == 2 ? 1.0 / 6.0 : 0.5;
    require(alpha > 0.0 && alpha <= hi + 1e-15, "alpha", "must lie in (0, " + num(hi) + "] for d = " + std::to_string(d));
  }
  require(r_star > d - 1, "r_star", "must exceed d - 1 = " + std::to_string(d - 1));
  TimeGrid g;
  try {
    g = grid();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("T, h: ") + e.what());
  }
  const double eps = scaling().epsilon;
  if (eps != 0.0) {
    // Largest rate on the lattice is at the truncation radius.
    const double gmax = damping()(K * K);
    require(h <= 0.1 / gmax, "h", "stiffness guard h <= 0.1 / max gamma = " + num(0.1 / gmax));
  }
  for (double t : spectrum_times()) {
    require(t > 0.0 && t <= T + 1e-12, "times", "must lie in (0, T]");
    try {
      g.index_of(t);
    } catch (const std::invalid_argument&) {
      throw ConfigError("times: " + num(t) + " is not a multiple of h");
    }
  }
  require(store_samples <= samples, "store_samples", "must not exceed samples");
  const std::vector<std::string> order = kStages;
  for (std::size_t i = 0; i < stages.size(); ++i)
    for (std::size_t j = i + 1; j < stages.size(); ++j)
      require(stages[i] != stages[j], "stages", "duplicate stage '" + stages[i] + "'");
  if (has_stage("quasisolution")) require(quasi_samples >= 2, "quasi_samples", "quasisolution stage needs >= 2 samples");
  if (has_stage("cumulants")) {
    require(!cumulant_request.empty(), "cumulant_request", "cumulants stage needs a request");
    require(quasi_samples >= 100, "quasi_samples", "cumulants stage needs >= 100 samples");
    try {
      const LatticeSpec lattice(d, L, K);
      const auto req = CumulantRequest::parse(cumulant_request, lattice);
      require(req.max_order() <= M, "cumulant_request", "orders must not exceed M");
      for (const auto& e : req.entries) {
        require(e.time <= T + 1e-12, "cumulant_request", "times must not exceed T");
        g.index_of(e.time);
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(std::string("cumulant_request: ") + e.what());
    }
  }
  if (has_stage("compare")) {
    require(has_stage("simulate") && has_stage("wke"), "stages", "compare needs simulate and wke");
  }
  if (has_stage("wke") || has_stage("compare")) {
    try {
      WkeGrid::parse(wke_grid, d, K);
      TimeGrid::uniform(wke_h, T);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("wke_grid, wke_h: ") + e.what());
    }
    for (double t : spectrum_times()) {
      const double k = t / wke_h;
      require(std::abs(k - std::round(k)) < 1e-9, "wke_h", "spectrum times must be multiples of wke_h");
    }
  }
  if (cd_value) {
    try {
      KineticConstant::configured(d, *cd_value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("cd_value: ") + e.what());
    }
  }
}

std::string RunConfig::canonical(const std::string& stage) const {
  static const std::map<std::string, std::vector<std::string>> subsets = {
      {"simulate",
       {"d", "L", "K", "alpha", "epsilon", "d2_log_correction", "r_star", "b_scale", "b_amplitude", "h", "T",
        "samples", "seed", "times", "orbit_average", "store_samples"}},
      {"quasisolution",
       {"d", "L", "K", "alpha", "epsilon", "d2_log_correction", "r_star", "b_scale", "b_amplitude", "h", "T", "M",
        "quasi_samples", "seed", "times", "orbit_average"}},
      {"cumulants",
       {"d", "L", "K", "d2_log_correction", "r_star", "b_scale", "b_amplitude", "h", "T", "M", "quasi_samples",
        "seed", "cumulant_request", "cumulant_method"}},
      {"wke",
       {"d", "L", "K", "alpha", "epsilon", "d2_log_correction", "r_star", "b_scale", "b_amplitude", "T", "wke_h",
        "wke_grid", "cd_mode", "cd_value", "cd_L"}},
      {"compare", {"compare_radius"}},
  };
  std::vector<std::string> selected;
  if (stage == "all") {
    selected = keys();
  } else {
    const auto it = subsets.find(stage);
    if (it == subsets.end()) throw std::invalid_argument("unknown stage " + stage);
    selected = it->second;
  }
  std::sort(selected.begin(), selected.end());
  std::map<std::string, std::string> v;
  v["d"] = std::to_string(d);
  v["L"] = std::to_string(L);
  v["K"] = num(K);
  v["alpha"] = epsilon ? "-" : num(alpha);
  v["epsilon"] = epsilon ? num(*epsilon) : "-";
  v["d2_log_correction"] = d2_log_correction ? "true" : "false";
  v["r_star"] = num(r_star);
  v["b_scale"] = num(b_scale);
  v["b_amplitude"] = num(b_amplitude);
  v["h"] = num(h);
  v["T"] = num(T);
  v["samples"] = std::to_string(samples);
  v["seed"] = std::to_string(seed);
  v["times"] = join<double>(spectrum_times(), num);
  v["orbit_average"] = orbit_average ? "true" : "false";
  v["compare_radius"] = num(compare_radius);
  v["store_samples"] = std::to_string(store_samples);
  v["M"] = std::to_string(M);
  v["quasi_samples"] = std::to_string(quasi_samples);
  v["cumulant_request"] = cumulant_request;
  v["cumulant_method"] = cumulant_method == ErrorMethod::Jackknife ? "jackknife" : "bootstrap";
  v["wke_grid"] = wke_grid;
  v["wke_h"] = num(wke_h);
  v["cd_mode"] = cd_mode;
  v["cd_value"] = cd_value ? num(*cd_value) : "-";
  v["cd_L"] = join<int>(cd_L, [](const int& x) { return std::to_string(x); });
  v["stages"] = join<std::string>(stages, [](const std::string& s) { return s; });
  std::string out;
  // Unset optional keys are left out, so the text parses back to the same config.
  for (const auto& k : selected)
    if (v.at(k) != "-") out += k + " = " + v.at(k) + "\n";
  return out;
}

// ---------------------------------------------------------------- hashing

std::string content_hash(const std::string& bytes) {
  const std::string blob = "blob " + std::to_string(bytes.size()) + std::string(1, '\0') + bytes;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("SHA-1 digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return content_hash(ss.str());
}

// ---------------------------------------------------------------- groups

ModeGroups ModeGroups::singletons(const LatticeSpec& lattice) {
  ModeGroups g;
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    g.members.push_back({i});
    g.representative.push_back(lattice.mode(i));
    g.radius.push_back(lattice.radius(i));
  }
  return g;
}

ModeGroups ModeGroups::orbits(const LatticeSpec& lattice) {
  // Canonical key: sorted absolute coordinates, largest first.
  std::map<std::array<int, 3>, std::size_t> index;
  ModeGroups g;
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    const IntVec& z = lattice.mode(i);
    std::array<int, 3> key = {std::abs(z[0]), std::abs(z[1]), std::abs(z[2])};
    std::sort(key.begin(), key.end(), std::greater<>());
    auto [it, fresh] = index.emplace(key, g.members.size());
    if (fresh) {
      g.members.emplace_back();
      g.representative.push_back(IntVec(key[0], key[1], key[2]));
      g.radius.push_back(lattice.radius(i));
    }
    g.members[it->second].push_back(i);
  }
  return g;
}

// ---------------------------------------------------------------- store

TrajectoryStore::TrajectoryStore(const fs::path& path, std::uint64_t run_id)
    : file_(path, std::ios::binary | std::ios::trunc), run_id_(run_id) {
  if (!file_) throw std::runtime_error("cannot open trajectory store " + path.string());
}

void TrajectoryStore::write(std::uint64_t sample_id, const TrajectoryData& values) {
  for (Eigen::Index k = 0; k < values.cols(); ++k)
    for (Eigen::Index s = 0; s < values.rows(); ++s) {
      const std::uint32_t t = std::uint32_t(k), m = std::uint32_t(s);
      const double re = values(s, k).real(), im = values(s, k).imag();
      file_.write(reinterpret_cast<const char*>(&run_id_), 8);
      file_.write(reinterpret_cast<const char*>(&sample_id), 8);
      file_.write(reinterpret_cast<const char*>(&t), 4);
      file_.write(reinterpret_cast<const char*>(&m), 4);
      file_.write(reinterpret_cast<const char*>(&re), 8);
      file_.write(reinterpret_cast<const char*>(&im), 8);
      ++records_;
    }
  file_.flush();
  if (!file_) throw std::runtime_error("trajectory store write failed");
}

std::vector<StoredRecord> read_trajectory_store(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read trajectory store " + path.string());
  std::vector<StoredRecord> out;
  StoredRecord r{};
  while (in.read(reinterpret_cast<char*>(&r.run_id), 8)) {
    in.read(reinterpret_cast<char*>(&r.sample_id), 8);
    in.read(reinterpret_cast<char*>(&r.time_index), 4);
    in.read(reinterpret_cast<char*>(&r.mode_index), 4);
    in.read(reinterpret_cast<char*>(&r.re), 8);
    in.read(reinterpret_cast<char*>(&r.im), 8);
    if (!in) throw std::runtime_error("truncated trajectory store " + path.string());
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------- ensembles

namespace {
constexpr std::size_t kChunk = 64;
}

EnsembleSpectra simulate_spectra(const EffectiveModel& model, const TimeGrid& grid, std::uint64_t seed,
                                 std::size_t samples, const std::vector<double>& times, const ModeGroups& groups,
                                 TrajectoryStore* store, std::size_t store_samples) {
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<SpectrumAccumulator> modes(chunks, SpectrumAccumulator(model.modes(), grid, times));
  std::vector<SpectrumAccumulator> grouped(chunks, SpectrumAccumulator(groups.members, grid, times));
  std::vector<std::vector<TrajectoryData>> kept(chunks);
  parallel_blocks(chunks, [&](std::size_t c) {
    for (std::size_t i = c * kChunk; i < std::min(samples, (c + 1) * kChunk); ++i) {
      TrajectoryData a = integrate_effective(model, grid, seed, i).values;
      modes[c].push(a);
      grouped[c].push(a);
      if (store && i < store_samples) kept[c].push_back(std::move(a));
    }
  });
  for (std::size_t c = 1; c < chunks; ++c) {
    modes[0].merge(modes[c]);
    grouped[0].merge(grouped[c]);
  }
  if (store) {
    std::uint64_t id = 0;
    for (const auto& chunk : kept)
      for (const auto& a : chunk) store->write(id++, a);
  }
  return {modes[0].estimate(), grouped[0].estimate()};
}

std::vector<SpectrumEstimate> quasi_spectra(const QuasiEnsemble& ensemble, const std::vector<double>& times,
                                            const ModeGroups& groups) {
  const std::size_t chunks = (ensemble.samples + kChunk - 1) / kChunk;
  const std::size_t orders = std::size_t(ensemble.M) + 1;
  const double eps = ensemble.model->scaling.epsilon;
  std::vector<std::vector<SpectrumAccumulator>> acc(
      chunks, std::vector<SpectrumAccumulator>(orders, SpectrumAccumulator(groups.members, ensemble.grid, times)));
  parallel_blocks(chunks, [&](std::size_t c) {
    for (std::size_t i = c * kChunk; i < std::min(ensemble.samples, (c + 1) * kChunk); ++i) {
      const QuasisolutionSet set = ensemble.sample(i);
      TrajectoryData A = set.orders[0];
      acc[c][0].push(A);
      double power = 1.0;
      for (std::size_t m = 1; m < orders; ++m) {
        power *= eps;
        A += power * set.orders[m];
        acc[c][m].push(A);
      }
    }
  });
  std::vector<SpectrumEstimate> out;
  for (std::size_t m = 0; m < orders; ++m) {
    for (std::size_t c = 1; c < chunks; ++c) acc[0][m].merge(acc[c][m]);
    out.push_back(acc[0][m].estimate());
  }
  return out;
}

// ---------------------------------------------------------------- comparison

const ComparisonRow& ComparisonReport::worst(double tau, double radius) const {
  const ComparisonRow* best = nullptr;
  for (const auto& r : rows) {
    if (std::abs(r.tau - tau) > 1e-12 || r.radius > radius + 1e-12) continue;
    if (!best || r.normalized > best->normalized) best = &r;
  }
  if (!best) throw std::invalid_argument("comparison has no rows at tau = " + num(tau) + " within |s| <= " + num(radius));
  return *best;
}

ComparisonReport compare_spectra(const SpectrumEstimate& mc, const ModeGroups& groups, int L,
                                 const WkeSolution& wke, const WkeCoefficients& coeff,
                                 const std::vector<SpectrumEstimate>& quasi, double eps) {
  if (std::size_t(mc.mean.rows()) != groups.size())
    throw std::invalid_argument("spectrum rows do not match the mode groups");
  for (const auto& q : quasi)
    if (q.mean.rows() != mc.mean.rows() || q.times != mc.times)
      throw std::invalid_argument("quasisolution spectra must share groups and times with the MC spectrum");
  ComparisonReport rep;
  rep.L = L;
  rep.epsilon = eps;
  const double e3 = eps * eps * eps;
  for (std::size_t j = 0; j < mc.times.size(); ++j) {
    const double tau = mc.times[j];
    int step = 0;
    try {
      step = wke.time.index_of(tau);
    } catch (const std::invalid_argument&) {
      throw InterpolationDomainError("time " + num(tau) + " is not on the WKE time grid");
    }
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups.radius[g] > wke.radii.back() + 1e-12)
        throw InterpolationDomainError("mode radius " + num(groups.radius[g]) + " beyond the WKE grid cutoff " +
                                       num(wke.radii.back()));
      ComparisonRow r;
      r.group = g;
      r.representative = groups.representative[g];
      r.radius = groups.radius[g];
      r.tau = tau;
      r.n = mc.mean(Eigen::Index(g), Eigen::Index(j));
      r.n_stderr = mc.stderr(Eigen::Index(g), Eigen::Index(j));
      r.m = wke.value(r.radius, step, coeff);
      r.deviation = r.n - r.m;
      // No eps^3 scale at eps = 0; the raw deviation and its SE still apply.
      r.normalized = e3 > 0.0 ? std::abs(r.deviation) / e3 : NAN;
      r.normalized_stderr = e3 > 0.0 ? r.n_stderr / e3 : NAN;
      for (const auto& q : quasi) {
        r.quasi.push_back(q.mean(Eigen::Index(g), Eigen::Index(j)));
        r.quasi_stderr.push_back(q.stderr(Eigen::Index(g), Eigen::Index(j)));
      }
      rep.rows.push_back(std::move(r));
    }
  }
  return rep;
}

TrendCheck trend_check(const ComparisonReport& small, const ComparisonReport& large, double tau, double radius) {
  const ComparisonRow& a = small.worst(tau, radius);
  const ComparisonRow& b = large.worst(tau, radius);
  TrendCheck t;
  t.L_small = small.L;
  t.L_large = large.L;
  t.worst_small = a.normalized;
  t.stderr_small = a.normalized_stderr;
  t.worst_large = b.normalized;
  t.stderr_large = b.normalized_stderr;
  t.increase = b.normalized - a.normalized;
  t.combined_stderr = std::hypot(a.normalized_stderr, b.normalized_stderr);
  t.passes = t.increase <= t.combined_stderr;
  return t;
}

// ---------------------------------------------------------------- files

namespace {

const char* kPlotHeader = "L,radius,tau,quantity,value,error,error_kind\n";

void plot_row(std::ostream& os, int L, double radius, const std::string& tau, const std::string& quantity,
              double value, double error, const std::string& kind) {
  os << L << ',' << num(radius) << ',' << tau << ',' << quantity << ',' << num(value) << ',' << num(error) << ','
     << kind << '\n';
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<fs::path> emit_plots_data(const PlotsData& data, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<fs::path> paths = {dir / "spectrum_vs_wke.csv", dir / "cumulant_scaling.csv",
                                 dir / "quadric_ratios.csv"};
  {
    auto os = open_out(paths[0]);
    os << kPlotHeader;
    for (const auto& rep : data.comparisons)
      for (const auto& r : rep.rows) {
        const std::string tau = num(r.tau);
        plot_row(os, rep.L, r.radius, tau, "n_mc", r.n, r.n_stderr, "se");
        plot_row(os, rep.L, r.radius, tau, "m_wke", r.m, 0.0, "exact");
        plot_row(os, rep.L, r.radius, tau, "deviation_over_eps3", r.normalized, r.normalized_stderr, "se");
        for (std::size_t m = 0; m < r.quasi.size(); ++m)
          plot_row(os, rep.L, r.radius, tau, "N_quasi_M" + std::to_string(m), r.quasi[m], r.quasi_stderr[m], "se");
      }
  }
  {
    auto os = open_out(paths[1]);
    os << kPlotHeader;
    for (const auto& p : data.scaling) plot_row(os, p.L, 0.0, "", "abs_kappa", std::abs(p.value), p.stderr, "se");
    if (data.scaling_fit) {
      const auto& f = *data.scaling_fit;
      plot_row(os, 0, 0.0, "", "slope", f.slope, f.slope_stderr, "se");
      plot_row(os, 0, 0.0, "", "expected_slope", f.expected, 0.0, "exact");
    }
  }
  {
    auto os = open_out(paths[2]);
    os << kPlotHeader;
    for (const auto& r : data.quadric) {
      plot_row(os, r.L, r.shift_norm, "", "sum", r.sum, r.tail_bound, "tail_bound");
      plot_row(os, r.L, r.shift_norm, "", "ratio", r.ratio, r.sum != 0.0 ? r.tail_bound * r.ratio / r.sum : 0.0,
               "tail_bound");
    }
  }
  return paths;
}

void write_spectrum_csv(const fs::path& path, const LatticeSpec& lattice, const SpectrumEstimate& spectrum) {
  auto os = open_out(path);
  os << "|s|,sx,sy,sz,tau,mean,stderr,n\n";
  for (std::size_t j = 0; j < spectrum.times.size(); ++j)
    for (std::size_t s = 0; s < lattice.size(); ++s) {
      const auto c = lattice.coords(s);
      os << num(lattice.radius(s)) << ',' << num(c[0]) << ',' << num(c[1]) << ',' << num(c[2]) << ','
         << num(spectrum.times[j]) << ',' << num(spectrum.mean(Eigen::Index(s), Eigen::Index(j))) << ','
         << num(spectrum.stderr(Eigen::Index(s), Eigen::Index(j))) << ',' << spectrum.samples << '\n';
    }
}

void write_wke_csv(const fs::path& path, const WkeSolution& solution) {
  auto os = open_out(path);
  os << "|s|,tau,m,m0\n";
  for (int k = 0; k <= solution.time.steps; ++k)
    for (std::size_t i = 0; i < solution.radii.size(); ++i)
      os << num(solution.radii[i]) << ',' << num(solution.time.time(k)) << ','
         << num(solution.m(Eigen::Index(i), k)) << ',' << num(solution.m0(Eigen::Index(i), k)) << '\n';
}

namespace {

// Group spectrum: group, rx, ry, rz, |s|, size, tau, mean, stderr, n.
void write_group_csv(const fs::path& path, const ModeGroups& groups, int L, const SpectrumEstimate& e) {
  auto os = open_out(path);
  os << "group,rx,ry,rz,|s|,size,tau,mean,stderr,n\n";
  for (std::size_t j = 0; j < e.times.size(); ++j)
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const IntVec& z = groups.representative[g];
      os << g << ',' << num(double(z[0]) / L) << ',' << num(double(z[1]) / L) << ',' << num(double(z[2]) / L) << ','
         << num(groups.radius[g]) << ',' << groups.members[g].size() << ',' << num(e.times[j]) << ','
         << num(e.mean(Eigen::Index(g), Eigen::Index(j))) << ',' << num(e.stderr(Eigen::Index(g), Eigen::Index(j)))
         << ',' << e.samples << '\n';
    }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(split(line, ','));
  return rows;
}

SpectrumEstimate read_group_csv(const fs::path& path, std::size_t groups) {
  const auto rows = read_csv(path);
  SpectrumEstimate e;
  if (groups == 0 || rows.size() % groups != 0) throw std::runtime_error("malformed group spectrum " + path.string());
  const std::size_t nt = rows.size() / groups;
  e.mean.resize(Eigen::Index(groups), Eigen::Index(nt));
  e.stderr.resizeLike(e.mean);
  for (std::size_t j = 0; j < nt; ++j) {
    e.times.push_back(std::stod(rows[j * groups][6]));
    for (std::size_t g = 0; g < groups; ++g) {
      const auto& r = rows[j * groups + g];
      e.mean(Eigen::Index(g), Eigen::Index(j)) = std::stod(r[7]);
      e.stderr(Eigen::Index(g), Eigen::Index(j)) = std::stod(r[8]);
      e.samples = std::stoull(r[9]);
    }
  }
  return e;
}

WkeSolution read_wke_csv(const fs::path& path, const TimeGrid& time, double eps) {
  const auto rows = read_csv(path);
  const std::size_t nt = std::size_t(time.steps) + 1;
  if (rows.empty() || rows.size() % nt != 0) throw std::runtime_error("malformed WKE file " + path.string());
  const std::size_t nr = rows.size() / nt;
  WkeSolution s;
  s.time = time;
  s.epsilon = eps;
  s.m.resize(Eigen::Index(nr), Eigen::Index(nt));
  s.m0.resizeLike(s.m);
  for (std::size_t i = 0; i < nr; ++i) s.radii.push_back(std::stod(rows[i][0]));
  for (std::size_t k = 0; k < nt; ++k)
    for (std::size_t i = 0; i < nr; ++i) {
      s.m(Eigen::Index(i), Eigen::Index(k)) = std::stod(rows[k * nr + i][2]);
      s.m0(Eigen::Index(i), Eigen::Index(k)) = std::stod(rows[k * nr + i][3]);
    }
  return s;
}

void write_comparison_csv(const fs::path& path, const ComparisonReport& rep) {
  auto os = open_out(path);
  os << "L,eps,rx,ry,rz,|s|,tau,n,n_stderr,m,deviation,deviation_over_eps3,deviation_over_eps3_stderr";
  const std::size_t M = rep.rows.empty() ? 0 : rep.rows.front().quasi.size();
  for (std::size_t m = 0; m < M; ++m) os << ",N" << m << ",N" << m << "_stderr";
  os << '\n';
  for (const auto& r : rep.rows) {
    os << rep.L << ',' << num(rep.epsilon) << ',' << num(double(r.representative[0]) / rep.L) << ','
       << num(double(r.representative[1]) / rep.L) << ',' << num(double(r.representative[2]) / rep.L) << ','
       << num(r.radius) << ',' << num(r.tau) << ',' << num(r.n) << ',' << num(r.n_stderr) << ',' << num(r.m) << ','
       << num(r.deviation) << ',' << num(r.normalized) << ',' << num(r.normalized_stderr);
    for (std::size_t m = 0; m < r.quasi.size(); ++m) os << ',' << num(r.quasi[m]) << ',' << num(r.quasi_stderr[m]);
    os << '\n';
  }
}

void write_json(const fs::path& path, const json& j) {
  auto os = open_out(path);
  os << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

struct Pipeline {
  const RunConfig& cfg;
  fs::path out;
  std::map<std::string, std::string> keys;
  std::map<std::string, bool> ok;
  std::shared_ptr<const LatticeSpec> lattice;
  std::shared_ptr<const ResonanceTable> table;
  std::optional<EffectiveModel> model;
  std::optional<ModeGroups> groups;

  fs::path stage_dir(const std::string& stage) const { return out / "cache" / (stage + "-" + keys.at(stage)); }

  const EffectiveModel& effective_model() {
    if (!model) {
      lattice = std::make_shared<const LatticeSpec>(cfg.d, cfg.L, cfg.K);
      table = std::make_shared<const ResonanceTable>(cached_resonance_table(*lattice, out / "cache" / "tables"));
      model = EffectiveModel::make(lattice, table, cfg.damping(), cfg.forcing(), cfg.scaling());
    }
    return *model;
  }

  const ModeGroups& mode_groups() {
    if (!groups) {
      const LatticeSpec& l = *effective_model().lattice;
      groups = cfg.orbit_average ? ModeGroups::orbits(l) : ModeGroups::singletons(l);
    }
    return *groups;
  }

  void simulate(const fs::path& dir) {
    const EffectiveModel& m = effective_model();
    std::unique_ptr<TrajectoryStore> store;
    std::uint64_t run_id = std::stoull(keys.at("simulate").substr(0, 16), nullptr, 16);
    if (cfg.store_samples > 0) store = std::make_unique<TrajectoryStore>(dir / "trajectories.bin", run_id);
    const auto spectra = simulate_spectra(m, cfg.grid(), cfg.seed, cfg.samples, cfg.spectrum_times(), mode_groups(),
                                          store.get(), cfg.store_samples);
    write_spectrum_csv(dir / "spectrum.csv", *m.lattice, spectra.modes);
    write_group_csv(dir / "group_spectrum.csv", mode_groups(), cfg.L, spectra.groups);
    json j;
    j["run_id"] = run_id;
    j["modes"] = m.modes();
    j["groups"] = mode_groups().size();
    j["samples"] = cfg.samples;
    j["epsilon"] = m.scaling.epsilon;
    j["tail_truncation"] = {{"K", cfg.K},
                            {"forcing_edge_ratio", cfg.forcing().edge_ratio(cfg.K)},
                            {"gamma_edge", cfg.damping()(cfg.K * cfg.K)}};
    j["stored_records"] = store ? store->records() : 0;
    write_json(dir / "simulate.json", j);
  }

  void quasisolution(const fs::path& dir) {
    const EffectiveModel& m = effective_model();
    QuasiEnsemble ens{&m, cfg.grid(), cfg.M, cfg.seed, cfg.quasi_samples};
    const auto spectra = quasi_spectra(ens, cfg.spectrum_times(), mode_groups());
    for (std::size_t k = 0; k < spectra.size(); ++k)
      write_group_csv(dir / ("quasi_M" + std::to_string(k) + ".csv"), mode_groups(), cfg.L, spectra[k]);
    const double eps = m.scaling.epsilon;
    auto os = open_out(dir / "w_norm.csv");
    os << "M,r,XrNorm,eps,eps^rho_reference\n";
    if (cfg.M >= 1) {
      const QuasisolutionSet set = ens.sample(0);
      const TrajectoryData w = solve_w_forward(m, set, eps);
      for (double r : {0.0, 1.0, 2.0})
        os << cfg.M << ',' << num(r) << ',' << num(xr_norm(*m.lattice, w, r).value) << ',' << num(eps) << ','
           << num(std::pow(eps, cfg.M + 1)) << '\n';
    }
  }

  void cumulants(const fs::path& dir) {
    const EffectiveModel& m = effective_model();
    QuasiEnsemble ens{&m, cfg.grid(), cfg.M, cfg.seed, cfg.quasi_samples};
    const auto req = CumulantRequest::parse(cfg.cumulant_request, *m.lattice);
    EstimatorOptions opt;
    opt.method = cfg.cumulant_method;
    opt.bootstrap_seed = cfg.seed;
    const auto est = empirical_cumulant(ens, req, opt);
    json j = json::parse(est.to_json());
    j["request"] = req.to_string(*m.lattice);
    write_json(dir / "cumulants.json", j);
  }

  void wke(const fs::path& dir) {
    WkeGrid grid = WkeGrid::parse(cfg.wke_grid, cfg.d, cfg.K);
    KineticConstant Cd = cfg.cd_value ? KineticConstant::configured(cfg.d, *cfg.cd_value)
                                      : KineticConstant::configured(cfg.d);
    if (cfg.cd_mode == "estimated") Cd = estimate_Cd_from_lattice(cfg.d, cfg.cd_L).constant;
    const double eps = cfg.scaling().epsilon;
    const TimeGrid time = TimeGrid::uniform(cfg.wke_h, cfg.T);
    const WkeSolution sol = solve_wke(grid, eps, cfg.damping(), cfg.forcing(), Cd, time);
    write_wke_csv(dir / "wke.csv", sol);
    const auto coeff = WkeCoefficients::make(grid, cfg.damping(), cfg.forcing());
    const Eigen::VectorXd mT = sol.m.col(time.steps);
    json checks = json::array();
    for (double s : {0.0, 0.5 * cfg.K}) {
      const auto c = kinetic_convergence(grid, coeff, Cd, mT, cfg.T, s);
      checks.push_back({{"radius", s}, {"value", c.value}, {"doubled", c.doubled},
                        {"relative_change", c.relative_change}, {"converged", c.converged}});
    }
    json j;
    j["C_d"] = {{"value", Cd.value}, {"provenance", Cd.provenance_name()}, {"ci_low", Cd.ci_low},
                {"ci_high", Cd.ci_high}, {"fallback", Cd.fallback}, {"note", Cd.note}};
    j["epsilon"] = eps;
    j["grid"] = cfg.wke_grid;
    j["truncated"] = grid.truncated;
    j["quadrature_convergence"] = checks;
    write_json(dir / "wke.json", j);
  }

  ComparisonReport compare(const fs::path& dir) {
    const EffectiveModel& m = effective_model();
    const ModeGroups& g = mode_groups();
    const SpectrumEstimate mc = read_group_csv(stage_dir("simulate") / "group_spectrum.csv", g.size());
    std::vector<SpectrumEstimate> quasi;
    if (cfg.has_stage("quasisolution"))
      for (int k = 0; k <= cfg.M; ++k)
        quasi.push_back(read_group_csv(stage_dir("quasisolution") / ("quasi_M" + std::to_string(k) + ".csv"), g.size()));
    const WkeGrid grid = WkeGrid::parse(cfg.wke_grid, cfg.d, cfg.K);
    const double eps = m.scaling.epsilon;
    const WkeSolution sol = read_wke_csv(stage_dir("wke") / "wke.csv", TimeGrid::uniform(cfg.wke_h, cfg.T), eps);
    const auto coeff = WkeCoefficients::make(grid, cfg.damping(), cfg.forcing());
    ComparisonReport rep = compare_spectra(mc, g, cfg.L, sol, coeff, quasi, eps);
    write_comparison_csv(dir / "comparison.csv", rep);
    const auto& w = rep.worst(cfg.spectrum_times().back(), cfg.compare_radius);
    write_json(dir / "compare.json", {{"worst_radius", w.radius},
                                      {"worst_deviation_over_eps3", w.normalized},
                                      {"worst_stderr", w.normalized_stderr},
                                      {"tau", w.tau}});
    emit_plots_data(PlotsData{{rep}, {}, {}, {}}, dir / "plots");
    return rep;
  }
};

std::vector<std::string> list_files(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != ".done") files.push_back(fs::relative(e.path(), dir).string());
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

RunResult run_experiment(const RunConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir / "cache");
  Pipeline p{config, out_dir, {}, {}, {}, {}, {}, {}};
  const std::map<std::string, std::vector<std::string>> upstream = {
      {"simulate", {}}, {"quasisolution", {}}, {"cumulants", {}}, {"wke", {}},
      {"compare", {"simulate", "quasisolution", "wke"}}};
  RunResult result;
  json stages = json::array();
  for (const auto& stage : kStages) {
    if (!config.has_stage(stage)) continue;
    StageRecord rec;
    rec.name = stage;
    std::string basis = config.canonical(stage);
    bool deps_ok = true;
    for (const auto& up : upstream.at(stage)) {
      if (!config.has_stage(up)) continue;
      basis += up + ":" + p.keys[up] + "\n";
      deps_ok = deps_ok && p.ok[up];
    }
    rec.key = content_hash(stage + "\n" + basis);
    p.keys[stage] = rec.key;
    const fs::path dir = p.stage_dir(stage);
    if (!deps_ok) {
      rec.status = "skipped";
      rec.error = "upstream stage failed";
      p.ok[stage] = false;
      result.ok = false;
    } else if (fs::exists(dir / ".done")) {
      rec.status = "cached";
      p.ok[stage] = true;
      if (stage == "compare") {
        try {
          result.comparison = p.compare(dir);
        } catch (const std::exception& e) {
          rec.status = "failed";
          rec.error = e.what();
          p.ok[stage] = false;
          result.ok = false;
        }
      }
    } else {
      fs::create_directories(dir);
      try {
        if (stage == "simulate") p.simulate(dir);
        if (stage == "quasisolution") p.quasisolution(dir);
        if (stage == "cumulants") p.cumulants(dir);
        if (stage == "wke") p.wke(dir);
        if (stage == "compare") result.comparison = p.compare(dir);
        std::ofstream(dir / ".done") << rec.key << '\n';
        rec.status = "ok";
        p.ok[stage] = true;
      } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
        p.ok[stage] = false;
        result.ok = false;
      }
    }
    json artifacts = json::array();
    if (fs::exists(dir))
      for (const auto& f : list_files(dir)) {
        rec.artifacts.push_back(f);
        artifacts.push_back({{"path", (fs::path("cache") / dir.filename() / f).string()}, {"sha1", file_hash(dir / f)}});
      }
    json s = {{"name", stage}, {"key", rec.key}, {"status", rec.status}, {"artifacts", artifacts}};
    if (!rec.error.empty()) s["error"] = rec.error;
    stages.push_back(s);
    result.stages.push_back(std::move(rec));
  }
  json cfg = json::object();
  for (const auto& line : split(config.canonical(), '\n')) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    cfg[line.substr(0, eq)] = line.substr(eq + 3);
  }
  json manifest = {{"schema", kManifestSchema}, {"config", cfg}, {"stages", stages}, {"ok", result.ok}};
  if (p.ok.count("wke") && p.ok["wke"]) manifest["wke"] = read_json(p.stage_dir("wke") / "wke.json");
  result.manifest = out_dir / "manifest.json";
  write_json(result.manifest, manifest);
  return result;
}

}  // namespace wtl
