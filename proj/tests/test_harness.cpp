#include "doctest.h"

#include "wtlab/harness.hpp"

#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

using namespace wtl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("wtlab_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every regular file below dir with its bytes, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

const char* kSmallRun = R"(
# small pipeline
d = 3
L = 2
K = 1
alpha = 0.5
r_star = 2.5
h = 0.0125
T = 1
samples = 400
seed = 11
times = 0.5, 1
wke_grid = radial:11,6
wke_h = 0.05
)";

// Number of distinct signed permutations of z, the orbit size under the cube group.
std::size_t orbit_size(const IntVec& z) {
  std::set<std::array<int, 3>> seen;
  std::array<int, 3> p = {0, 1, 2};
  do
    for (int s = 0; s < 8; ++s)
      seen.insert({(s & 1 ? -1 : 1) * z[p[0]], (s & 2 ? -1 : 1) * z[p[1]], (s & 4 ? -1 : 1) * z[p[2]]});
  while (std::next_permutation(p.begin(), p.end()));
  return seen.size();
}

}  // namespace

TEST_CASE("config parsing and total validation") {
  const RunConfig c = RunConfig::parse(kSmallRun);
  CHECK(c.L == 2);
  CHECK(c.times == std::vector<double>{0.5, 1.0});
  CHECK(c.scaling().epsilon == doctest::Approx(std::pow(2.0, -0.5)));
  CHECK(c.stages == std::vector<std::string>{"simulate", "wke", "compare"});

  auto rejects = [](const std::string& extra) {
    CHECK_THROWS_AS(RunConfig::parse(std::string(kSmallRun) + extra), ConfigError);
  };
  rejects("alphaa = 0.5\n");   // typo
  rejects("L = 3\n");          // duplicate
  rejects("epsilon = 0.1\n");  // alongside alpha
  rejects("times = 0.33\n");   // off grid, and duplicate
  rejects("no equals sign\n");

  auto invalid = [](const std::string& key, const std::string& value) {
    RunConfig c;
    bool thrown = false;
    try {
      c.set(key, value);
      c.validate();
    } catch (const ConfigError&) {
      thrown = true;
    }
    CHECK_MESSAGE(thrown, key << " = " << value);
  };
  invalid("alpha", "0.6");
  invalid("r_star", "2");  // d - 1
  invalid("d", "4");
  invalid("L", "1");
  invalid("K", "-1");
  invalid("h", "0.5");  // stiffness guard at K = 1
  invalid("samples", "1");
  invalid("seed", "-3");
  invalid("cd_value", "1.6");
  invalid("cd_L", "8");
  invalid("stages", "simulate,plot");
  invalid("stages", "compare");
  invalid("stages", "simulate,cumulants");  // no request
  invalid("wke_grid", "polar:3,3");
  invalid("cumulant_method", "bootstrp");
  invalid("orbit_average", "maybe");
  // Every documented key accepts some value and rejects a garbage one.
  for (const auto& key : RunConfig::keys()) {
    if (key == "cumulant_request" || key == "wke_grid") continue;  // free text, checked in validate
    RunConfig c;
    CHECK_THROWS_AS(c.set(key, "#?"), ConfigError);
  }

  SUBCASE("d = 2 range") {
    RunConfig c;
    c.set("d", "2");
    c.set("r_star", "1.5");
    c.set("alpha", "0.16");
    CHECK_NOTHROW(c.validate());
    c.set("alpha", "0.2");
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("eps = 0 lifts the stiffness guard") {
    RunConfig c;
    c.set("epsilon", "0");
    c.set("h", "0.5");
    CHECK_NOTHROW(c.validate());
  }
}

TEST_CASE("canonical subsets key the caches") {
  RunConfig a = RunConfig::parse(kSmallRun);
  RunConfig b = a;
  b.set("wke_grid", "radial:21,6");
  CHECK(a.canonical("simulate") == b.canonical("simulate"));
  CHECK(a.canonical("wke") != b.canonical("wke"));
  b = a;
  b.set("samples", "500");
  CHECK(a.canonical("simulate") != b.canonical("simulate"));
  CHECK(a.canonical("wke") == b.canonical("wke"));
  CHECK(a.canonical() == RunConfig::parse(a.canonical()).canonical());
}

TEST_CASE("content hash is git's blob hash") {
  // git hash-object of "hello\n" and of the empty file.
  CHECK(content_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(content_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("symmetry orbits") {
  for (double K : {1.0, 1.5, 2.0}) {
    const LatticeSpec lattice(3, 2, K);
    const ModeGroups g = ModeGroups::orbits(lattice);
    std::size_t total = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      total += g.members[k].size();
      CHECK(g.members[k].size() == orbit_size(g.representative[k]));
      for (std::size_t i : g.members[k]) CHECK(lattice.radius(i) == doctest::Approx(g.radius[k]).epsilon(1e-14));
    }
    CHECK(total == lattice.size());
    CHECK(ModeGroups::singletons(lattice).size() == lattice.size());
  }
}

TEST_CASE("grouped spectrum accumulator") {
  const TimeGrid grid = TimeGrid::uniform(0.5, 1.0);
  SpectrumAccumulator modes(3, grid, {1.0});
  SpectrumAccumulator pairs({{0, 2}, {1}}, grid, {1.0});
  Rng rng(3);
  std::vector<double> avg;
  for (int n = 0; n < 50; ++n) {
    TrajectoryData a(3, 3);
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = rng.complex_normal();
    modes.push(a);
    pairs.push(a);
    avg.push_back(0.5 * (std::norm(a(0, 2)) + std::norm(a(2, 2))));
  }
  const auto em = modes.estimate(), ep = pairs.estimate();
  double mean = 0.0;
  for (double x : avg) mean += x / double(avg.size());
  CHECK(ep.mean(0, 0) == doctest::Approx(mean).epsilon(1e-13));
  CHECK(ep.mean(0, 0) == doctest::Approx(0.5 * (em.mean(0, 0) + em.mean(2, 0))).epsilon(1e-13));
  CHECK(ep.mean(1, 0) == em.mean(1, 0));
  CHECK(ep.stderr(1, 0) == em.stderr(1, 0));
  CHECK_THROWS(SpectrumAccumulator({{0}, {}}, grid, {1.0}));
}

TEST_CASE("trajectory store roundtrip") {
  const fs::path dir = scratch("store");
  fs::create_directories(dir);
  TrajectoryData a(2, 3);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = {double(i), -0.5 * double(i)};
  {
    TrajectoryStore store(dir / "t.bin", 42);
    store.write(7, a);
    CHECK(store.records() == 6);
  }
  CHECK(fs::file_size(dir / "t.bin") == 6 * 40);
  const auto recs = read_trajectory_store(dir / "t.bin");
  REQUIRE(recs.size() == 6);
  for (const auto& r : recs) {
    CHECK(r.run_id == 42);
    CHECK(r.sample_id == 7);
    CHECK(r.re == a(r.mode_index, r.time_index).real());
    CHECK(r.im == a(r.mode_index, r.time_index).imag());
  }
}

TEST_CASE("comparison at eps = 0 and quasisolution order zero") {
  auto spec = std::make_shared<const LatticeSpec>(3, 2, 1.0);
  auto table = std::make_shared<const ResonanceTable>(build_resonance_table(*spec));
  const auto damping = DampingProfile::power_law(2.5);
  const auto forcing = ForcingProfile::gaussian();
  const TimeGrid grid = TimeGrid::uniform(0.05, 1.0);
  const std::vector<double> times = {0.5, 1.0};
  const ModeGroups singles = ModeGroups::singletons(*spec);

  const auto free = EffectiveModel::make(spec, table, damping, forcing, ScalingSpec::with_epsilon(3, 2, 0.0));
  const auto mc = simulate_spectra(free, grid, 5, 2000, times, singles);
  WkeGrid wg = WkeGrid::radial(3, 1.0, 11, 6);
  const auto coeff = WkeCoefficients::make(wg, damping, forcing);
  const auto sol = solve_wke(wg, 0.0, damping, forcing, KineticConstant::configured(3), grid);
  const auto rep = compare_spectra(mc.groups, singles, 2, sol, coeff, {}, 0.0);
  CHECK(rep.rows.size() == spec->size() * times.size());
  for (const auto& r : rep.rows) {
    CHECK(std::abs(r.deviation) <= 5.0 * r.n_stderr);
    CHECK(std::isnan(r.normalized));
  }

  const auto model = EffectiveModel::make(spec, table, damping, forcing, ScalingSpec::with_epsilon(3, 2, 0.3));
  QuasiEnsemble ens{&model, grid, 2, 5, 400};
  const auto q = quasi_spectra(ens, times, singles);
  REQUIRE(q.size() == 3);
  const auto mc0 = simulate_spectra(free, grid, 5, 400, times, singles);
  for (Eigen::Index s = 0; s < q[0].mean.rows(); ++s)
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double se = std::hypot(q[0].stderr(s, j), mc0.modes.stderr(s, j));
      CHECK(std::abs(q[0].mean(s, j) - mc0.modes.mean(s, j)) <= 5.0 * se);
    }

  // Modes beyond the WKE grid, or times off its grid, are refused.
  WkeGrid narrow = WkeGrid::radial(3, 0.6, 7, 6);
  const auto sol_narrow = solve_wke(narrow, 0.0, damping, forcing, KineticConstant::configured(3), grid);
  CHECK_THROWS_AS(compare_spectra(mc.groups, singles, 2, sol_narrow, WkeCoefficients::make(narrow, damping, forcing),
                                  {}, 0.3),
                  InterpolationDomainError);
  const auto sol_short = solve_wke(wg, 0.0, damping, forcing, KineticConstant::configured(3), TimeGrid::uniform(0.05, 0.5));
  CHECK_THROWS_AS(compare_spectra(mc.groups, singles, 2, sol_short, coeff, {}, 0.3), InterpolationDomainError);
}

TEST_CASE("trend check") {
  ComparisonReport a, b;
  a.L = 3;
  b.L = 6;
  auto row = [](double radius, double normalized, double se) {
    ComparisonRow r;
    r.radius = radius;
    r.tau = 1.0;
    r.normalized = normalized;
    r.normalized_stderr = se;
    return r;
  };
  a.rows = {row(0.0, 0.5, 0.1), row(1.0, 0.8, 0.1), row(3.0, 9.0, 0.1)};
  b.rows = {row(0.0, 0.85, 0.1), row(0.5, 0.2, 0.1)};
  auto t = trend_check(a, b, 1.0, 2.0);
  CHECK(t.worst_small == 0.8);
  CHECK(t.worst_large == 0.85);
  CHECK(t.combined_stderr == doctest::Approx(std::sqrt(0.02)));
  CHECK(t.passes);
  b.rows[0].normalized = 1.0;
  CHECK_FALSE(trend_check(a, b, 1.0, 2.0).passes);
  CHECK_THROWS(trend_check(a, b, 0.5, 2.0));
}

TEST_CASE("plot data files") {
  const fs::path dir = scratch("plots");
  const auto paths = emit_plots_data({}, dir);
  REQUIRE(paths.size() == 3);
  CHECK(paths[0].filename() == "spectrum_vs_wke.csv");
  CHECK(paths[1].filename() == "cumulant_scaling.csv");
  CHECK(paths[2].filename() == "quadric_ratios.csv");
  for (const auto& p : paths) CHECK(slurp(p) == "L,radius,tau,quantity,value,error,error_kind\n");

  PlotsData data;
  data.scaling = {{2, {0.0, 1e-5}, 1e-7}, {3, {0.0, 4e-6}, 1e-7}};
  data.quadric = {{8, 0.0, 100.0, 1.3, 1e-12, false}};
  emit_plots_data(data, dir);
  std::istringstream rows(slurp(paths[1]));
  std::string line;
  int n = 0;
  while (std::getline(rows, line)) {
    if (n++ == 0) continue;
    // Every numeric value carries an error bar or an exact tag.
    CHECK((line.find(",se") != std::string::npos || line.find(",exact") != std::string::npos));
  }
  CHECK(n == 3);
}

TEST_CASE("run_experiment: artifacts, caching, determinism, failures") {
  const fs::path out = scratch("run");
  RunConfig cfg = RunConfig::parse(kSmallRun);
  auto first = run_experiment(cfg, out);
  REQUIRE(first.ok);
  REQUIRE(first.comparison);
  for (const auto& s : first.stages) CHECK(s.status == "ok");
  const auto files = tree(out);
  const auto manifest = nlohmann::json::parse(files.at("manifest.json"));
  CHECK(manifest["schema"] == kManifestSchema);
  CHECK(manifest["wke"]["C_d"]["provenance"] == "configured");
  CHECK(manifest["config"]["alpha"] == "0.5");
  bool has_spectrum = false, has_plots = false;
  for (const auto& [path, bytes] : files) {
    has_spectrum = has_spectrum || path.ends_with("spectrum.csv");
    has_plots = has_plots || path.ends_with("plots/spectrum_vs_wke.csv");
  }
  CHECK(has_spectrum);
  CHECK(has_plots);

  // Identical config: stages come from the cache, manifest unchanged apart from statuses.
  auto second = run_experiment(cfg, out);
  for (const auto& s : second.stages) CHECK(s.status == "cached");

  // Fresh directory: byte-identical tree.
  const fs::path again = scratch("run_again");
  run_experiment(cfg, again);
  CHECK(tree(again) == files);

  // Only the WKE grid changed: the ensemble is reused.
  cfg.set("wke_grid", "radial:13,6");
  auto third = run_experiment(cfg, out);
  REQUIRE(third.stages.size() == 3);
  CHECK(third.stages[0].status == "cached");
  CHECK(third.stages[1].status == "ok");
  CHECK(third.stages[2].status == "ok");

  // A failing stage is recorded by name; independent stages still run and
  // dependants are skipped.  Strong forcing at eps = 10^{-0.1} blows up the MC.
  RunConfig bad = RunConfig::parse(kSmallRun);
  bad.set("b_amplitude", "1e4");
  bad.set("alpha", "0.1");
  const fs::path out_bad = scratch("run_bad");
  auto failed = run_experiment(bad, out_bad);
  CHECK_FALSE(failed.ok);
  CHECK(failed.stages[0].status == "failed");
  CHECK(failed.stages[0].error.find("non-finite") != std::string::npos);
  CHECK(failed.stages[1].status != "skipped");
  CHECK(failed.stages[2].status == "skipped");
  const auto bad_manifest = nlohmann::json::parse(slurp(out_bad / "manifest.json"));
  CHECK(bad_manifest["stages"][0]["name"] == "simulate");
  CHECK(bad_manifest["stages"][0]["status"] == "failed");
  CHECK(bad_manifest["ok"] == false);
  // The failed stage is not marked done, so a rerun tries again.
  CHECK(run_experiment(bad, out_bad).stages[0].status == "failed");
}
