// Command-line front end.  Every subcommand that touches the pipeline builds a
// RunConfig (optional --config file, then named options, then --set key=value)
// and runs the matching stages through run_experiment.
#include "wtlab/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace wtl;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out = "wtlab_out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
}

RunConfig build_config(const Common& c, const std::vector<std::pair<std::string, std::string>>& named,
                       const std::string& stages) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& [k, v] : named)
    if (!v.empty()) cfg.set(k, v);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.set("stages", stages);
  return cfg;
}

int report(const RunResult& r) {
  for (const auto& s : r.stages) {
    std::printf("%-14s %-8s %s\n", s.name.c_str(), s.status.c_str(), s.key.substr(0, 12).c_str());
    if (!s.error.empty()) std::printf("  error: %s\n", s.error.c_str());
  }
  std::printf("manifest: %s\n", r.manifest.string().c_str());
  return r.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wtlab: effective-equation ensembles, quasisolutions, cumulants and the WKE"};
  app.require_subcommand(1);

  Common sim_c;
  auto* sim = app.add_subcommand("simulate", "Monte Carlo spectrum of the effective equation");
  add_common(sim, sim_c);

  Common quasi_c;
  std::string quasi_M, quasi_alpha;
  auto* quasi = app.add_subcommand("quasisolution", "quasisolution spectra N^m and the w-norm report");
  add_common(quasi, quasi_c);
  quasi->add_option("--M", quasi_M, "truncation order");
  quasi->add_option("--alpha", quasi_alpha, "scaling exponent");

  Common cum_c;
  std::string cum_request;
  bool cum_jackknife = false, cum_bootstrap = false;
  auto* cum = app.add_subcommand("cumulants", "cumulant estimate for one request");
  cum->add_option("--ensemble", cum_c.config, "config of the ensemble (regenerated from its seed)");
  cum->add_option("--set", cum_c.sets, "extra key=value override (repeatable)");
  cum->add_option("--out", cum_c.out, "output directory")->capture_default_str();
  cum->add_option("--request", cum_request, "e.g. \"a:1:+:(1,0,0)@0.5, a:1:-:(1,0,0)@0.5\"")->required();
  auto* jk = cum->add_flag("--jackknife", cum_jackknife, "block jackknife errors (default)");
  cum->add_flag("--bootstrap", cum_bootstrap, "bootstrap errors")->excludes(jk);

  Common wke_c;
  std::string wke_d, wke_alpha, wke_L, wke_grid, wke_T, wke_h;
  auto* wke = app.add_subcommand("wke", "solve the modified wave kinetic equation");
  wke->set_help_flag("--help", "Print this help message and exit");
  add_common(wke, wke_c);
  wke->add_option("--d", wke_d);
  wke->add_option("--alpha", wke_alpha);
  wke->add_option("--L", wke_L);
  wke->add_option("--grid", wke_grid, "radial:nr,nangle[,truncated]");
  wke->add_option("--T", wke_T);
  wke->add_option("--h", wke_h);

  std::vector<std::string> cmp_configs;
  std::vector<std::string> cmp_sets;
  std::string cmp_out = "wtlab_out";
  double cmp_tau = -1.0;
  auto* cmp = app.add_subcommand("compare", "MC vs WKE; two configs give the L trend check");
  cmp->add_option("--config", cmp_configs, "one or two config files")->required()->expected(1, 2);
  cmp->add_option("--set", cmp_sets, "override applied to every config");
  cmp->add_option("--out", cmp_out)->capture_default_str();
  cmp->add_option("--tau", cmp_tau, "comparison time (default T)");

  int q_d = 3;
  std::vector<int> q_L;
  double q_radius = 6.0;
  std::string q_weight = "gaussian:1";
  std::string q_shift;
  auto* quad = app.add_subcommand("quadric-sum", "lattice sums over the quadric u.v = 0");
  quad->add_option("--d", q_d)->capture_default_str();
  quad->add_option("--L", q_L, "one or more side lengths")->required();
  quad->add_option("--radius", q_radius)->capture_default_str();
  quad->add_option("--weight", q_weight, "gaussian:sigma | poly:mu | zero")->capture_default_str();
  quad->add_option("--shift", q_shift, "comma-separated z0 in R^{2d}");

  Common all_c;
  auto* all = app.add_subcommand("run-all", "every configured stage");
  add_common(all, all_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return report(run_experiment(build_config(sim_c, {}, "simulate"), sim_c.out));
    if (*quasi) {
      auto cfg = build_config(quasi_c, {{"M", quasi_M}, {"alpha", quasi_alpha}}, "quasisolution");
      if (cfg.quasi_samples == 0) cfg.quasi_samples = cfg.samples;
      return report(run_experiment(cfg, quasi_c.out));
    }
    if (*cum) {
      auto cfg = build_config(cum_c, {{"cumulant_request", cum_request},
                                      {"cumulant_method", cum_bootstrap ? "bootstrap" : "jackknife"}},
                              "cumulants");
      if (cfg.quasi_samples == 0) cfg.quasi_samples = cfg.samples;
      const auto r = run_experiment(cfg, cum_c.out);
      for (const auto& s : r.stages)
        if (s.name == "cumulants" && s.error.empty()) {
          std::ifstream in(fs::path(cum_c.out) / "cache" / ("cumulants-" + s.key) / "cumulants.json");
          std::cout << in.rdbuf() << '\n';
        }
      return report(r);
    }
    if (*wke) {
      const auto cfg = build_config(
          wke_c, {{"d", wke_d}, {"alpha", wke_alpha}, {"L", wke_L}, {"wke_grid", wke_grid}, {"T", wke_T}, {"wke_h", wke_h}},
          "wke");
      return report(run_experiment(cfg, wke_c.out));
    }
    if (*cmp) {
      std::vector<ComparisonReport> reps;
      int status = 0;
      for (std::size_t i = 0; i < cmp_configs.size(); ++i) {
        Common c{cmp_configs[i], cmp_sets, (fs::path(cmp_out) / ("run" + std::to_string(i))).string()};
        const auto cfg = build_config(c, {}, "simulate,wke,compare");
        const auto r = run_experiment(cfg, c.out);
        status |= report(r);
        if (r.comparison) reps.push_back(*r.comparison);
        if (cmp_tau < 0) cmp_tau = cfg.T;
      }
      if (reps.size() == 2) {
        const RunConfig first = RunConfig::load(cmp_configs[0]);
        const auto t = trend_check(reps[0], reps[1], cmp_tau, first.compare_radius);
        std::printf("trend L=%d -> L=%d: worst %s +- %s -> %s +- %s, increase %s, combined stderr %s: %s\n", t.L_small,
                    t.L_large, format_number(t.worst_small).c_str(), format_number(t.stderr_small).c_str(),
                    format_number(t.worst_large).c_str(), format_number(t.stderr_large).c_str(),
                    format_number(t.increase).c_str(), format_number(t.combined_stderr).c_str(),
                    t.passes ? "PASS" : "FAIL");
        if (!t.passes) status = 1;
        PlotsData plots;
        plots.comparisons = reps;
        emit_plots_data(plots, fs::path(cmp_out) / "plots");
      }
      return status;
    }
    if (*quad) {
      const auto f = SchwartzWeight::parse(q_weight);
      Eigen::VectorXd shift = Eigen::VectorXd::Zero(2 * q_d);
      if (!q_shift.empty()) {
        std::stringstream ss(q_shift);
        std::string tok;
        std::vector<double> xs;
        while (std::getline(ss, tok, ',')) xs.push_back(std::stod(tok));
        if (xs.size() != std::size_t(2 * q_d)) throw ConfigError("--shift needs 2d components");
        shift = Eigen::Map<Eigen::VectorXd>(xs.data(), Eigen::Index(xs.size()));
      }
      std::printf("L,z0_norm,sum,ratio,tail_bound\n");
      bool clean = true;
      for (int L : q_L) {
        const auto r = quadric_sum(f, q_d, L, shift, q_radius);
        const double ratio = r.sum / std::pow(double(L), 2 * (q_d - 1));
        std::printf("%d,%s,%s,%s,%s\n", L, format_number(shift.norm()).c_str(), format_number(r.sum).c_str(),
                    format_number(ratio).c_str(), format_number(r.tail_bound).c_str());
        if (r.tail_warning) {
          std::fprintf(stderr, "warning: L=%d tail bound %g exceeds 1e-9 of the sum; raise --radius\n", L, r.tail_bound);
          clean = false;
        }
      }
      return clean ? 0 : 1;
    }
    if (*all) {
      RunConfig cfg = all_c.config.empty() ? RunConfig{} : RunConfig::load(all_c.config);
      for (const auto& kv : all_c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      return report(run_experiment(cfg, all_c.out));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
