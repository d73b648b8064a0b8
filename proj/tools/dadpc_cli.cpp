// Command-line front end: closed-loop simulation, calibration, alpha sweeps,
// Monte Carlo and certificate verification of step logs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dadpc/dadpc.hpp"

namespace fs = std::filesystem;
using namespace dadpc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitCertificateFailure = 2;

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto out = csv::open_out(path.string());
  out << j.dump(2) << '\n';
}

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  require(!ec, ErrorCode::IoError, "cannot create output directory " + dir + ": " + ec.message());
  return p;
}

struct SimulateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> horizon;
  bool baseline_only = false;
};

int run_simulate(const SimulateArgs& a) {
  ScenarioConfig cfg = load_scenario(a.config);
  if (a.seed) cfg.run.seed = *a.seed;
  if (a.horizon) cfg.run.horizon_steps = *a.horizon;
  const fs::path out = prepare_out(a.out);

  RunResult r = run_closed_loop(cfg, {.baseline_only = a.baseline_only, .keep_trajectory = true,
                                      .keep_diagnostics = true});
  if (cfg.run.baseline && !a.baseline_only) {
    const double base = run_closed_loop(cfg, {.baseline_only = true}).kpi.energy_kwh;
    if (base > 0.0) r.kpi.relative_energy_pct = 100.0 * r.kpi.energy_kwh / base;
  }

  {
    auto f = csv::open_out((out / "steps.csv").string());
    write_step_log(f, r.log);
  }
  write_json(out / "steps.meta.json", to_json(r.meta));
  nlohmann::json kpi = to_json(r.kpi);
  kpi["rebuilds"] = r.rebuilds;
  kpi["rebuild_failures"] = r.rebuild_failures;
  write_json(out / "kpi.json", kpi);
  r.trajectory->save_csv((out / "trajectory.csv").string());
  if (r.initial_table) r.initial_table->save_csv((out / "quantiles.csv").string());
  if (r.initial_predictor) save_predictor(*r.initial_predictor, (out / "predictor.bin").string());
  {
    auto f = csv::open_out((out / "ocp_diag.jsonl").string());
    for (const auto& d : r.diagnostics) f << d.dump() << '\n';
  }

  std::cout << kpi.dump(2) << '\n';
  return kExitOk;
}

int run_calibrate(const std::string& config, const std::string& out_dir) {
  ScenarioConfig cfg = load_scenario(config);
  cfg.run.horizon_steps = 1;
  cfg.run.baseline = false;
  const fs::path out = prepare_out(out_dir);
  RunResult r = run_closed_loop(cfg);
  const QuantileTable& tab = *r.initial_table;
  const AffinePredictor& p = *r.initial_predictor;
  tab.save_csv((out / "quantiles.csv").string());
  save_predictor(p, (out / "predictor.bin").string());

  nlohmann::json hw = nlohmann::json::array();
  for (Index i = 0; i < tab.horizon(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Index j = 0; j < tab.n_y(); ++j) row.push_back(half_width(tab, i, j, cfg.controller.alpha));
    hw.push_back(row);
  }
  nlohmann::json summary{{"n_cal", tab.n_cal()},
                         {"horizon", tab.horizon()},
                         {"n_y", tab.n_y()},
                         {"sigma", cfg.controller.alpha},
                         {"half_width", hw},
                         {"bundle_stamp", p.bundle_stamp}};
  write_json(out / "calibration.json", summary);
  std::cout << "calibrated " << tab.n_cal() << " anchors, half width at sigma=" << csv::format(cfg.controller.alpha)
            << ": first step " << csv::format(hw.front().front().get<double>()) << ", last step "
            << csv::format(hw.back().front().get<double>()) << '\n';
  return kExitOk;
}

int run_sweep(const std::string& config, const std::vector<double>& alphas, const std::string& out_dir,
              std::size_t seeds, unsigned workers) {
  const ScenarioConfig cfg = load_scenario(config);
  const fs::path out = prepare_out(out_dir);
  SweepOptions opt;
  opt.seeds = seed_range(cfg.run.seed, seeds);
  opt.workers = workers;
  opt.with_baseline = cfg.run.baseline;
  const auto rows = sweep_alpha(cfg, alphas, opt);
  const auto summary = summarize(rows);
  {
    auto f = csv::open_out((out / "sweep.csv").string());
    write_sweep_csv(f, rows);
  }
  {
    auto f = csv::open_out((out / "summary.csv").string());
    write_summary_csv(f, summary);
  }
  write_summary_csv(std::cout, summary);
  return kExitOk;
}

int run_montecarlo(const std::string& config, std::size_t seeds, const std::string& out_dir, unsigned workers) {
  const ScenarioConfig cfg = load_scenario(config);
  std::vector<SweepRow> rows;
  const AlphaSummary s = monte_carlo(cfg, seeds, workers, &rows);
  if (!out_dir.empty()) {
    const fs::path out = prepare_out(out_dir);
    auto f = csv::open_out((out / "runs.csv").string());
    write_sweep_csv(f, rows);
    auto g = csv::open_out((out / "summary.csv").string());
    write_summary_csv(g, {s});
  }
  write_summary_csv(std::cout, {s});
  return kExitOk;
}

struct VerifyArgs {
  std::string log, meta;
  std::optional<double> alpha, alpha_0, eta, epsilon;
  std::optional<std::int64_t> delta_bar;
};

int run_verify(const VerifyArgs& a) {
  const auto log = load_step_log(a.log);
  std::string meta_path = a.meta;
  if (meta_path.empty()) {
    fs::path p(a.log);
    meta_path = (p.parent_path() / (p.stem().string() + ".meta.json")).string();
  }
  RunMeta m;
  if (fs::exists(meta_path)) {
    auto in = csv::open_in(meta_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedLog, meta_path + ": " + e.what());
    }
    m = meta_from_json(j);
  } else if (!a.meta.empty()) {
    throw Error(ErrorCode::IoError, "cannot open " + a.meta);
  } else {
    warn("no metadata next to the log; using defaults and command-line values");
  }
  if (a.alpha) m.alpha = *a.alpha;
  if (a.alpha_0) m.alpha_0 = *a.alpha_0;
  if (a.eta) m.eta = *a.eta;
  if (a.epsilon) m.epsilon = *a.epsilon;
  if (a.delta_bar) m.delta_bar = *a.delta_bar;

  const CertificateReport rep = verify_certificates(log, m);
  std::cout << to_json(rep).dump(2) << '\n';
  return rep.all_passed() ? kExitOk : kExitCertificateFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Data-driven adaptive predictive control with violation-rate supervision"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Offline collection, calibration and a supervised closed-loop run");
  simulate->add_option("--config", sim.config, "Scenario TOML")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Noise seed override");
  simulate->add_option("--horizon", sim.horizon, "Online steps override")->check(CLI::PositiveNumber);
  simulate->add_flag("--baseline-only", sim.baseline_only, "Apply the backup controller throughout");

  std::string cal_config, cal_out;
  auto* calibrate = app.add_subcommand("calibrate", "Build the predictor and the calibration table only");
  calibrate->add_option("--config", cal_config, "Scenario TOML")->required()->check(CLI::ExistingFile);
  calibrate->add_option("--out", cal_out, "Output directory")->required();

  std::string sw_config, sw_out;
  std::vector<double> sw_alphas;
  std::size_t sw_seeds = 1;
  unsigned workers = 0;
  auto* sweep = app.add_subcommand("sweep", "Closed-loop runs over a list of target violation rates");
  sweep->add_option("--config", sw_config, "Scenario TOML")->required()->check(CLI::ExistingFile);
  sweep->add_option("--alphas", sw_alphas, "Comma-separated alphas")->required()->delimiter(',');
  sweep->add_option("--out", sw_out, "Output directory")->required();
  sweep->add_option("--seeds", sw_seeds, "Seeds per alpha, counted up from the config seed")
      ->check(CLI::PositiveNumber);
  sweep->add_option("--workers", workers, "Worker threads (0 = hardware concurrency)");

  std::string mc_config, mc_out;
  std::size_t mc_seeds = 5;
  auto* mc = app.add_subcommand("montecarlo", "Seed-replicated runs of one scenario");
  mc->add_option("--config", mc_config, "Scenario TOML")->required()->check(CLI::ExistingFile);
  mc->add_option("--seeds", mc_seeds, "Number of seeds")->required()->check(CLI::PositiveNumber);
  mc->add_option("--out", mc_out, "Output directory for per-run and summary CSVs");
  mc->add_option("--workers", workers, "Worker threads (0 = hardware concurrency)");

  VerifyArgs ver;
  auto* verify = app.add_subcommand("verify", "Check a step log against the violation-rate certificates");
  verify->add_option("--log", ver.log, "Step log CSV")->required()->check(CLI::ExistingFile);
  verify->add_option("--meta", ver.meta, "Run metadata JSON (default: <log stem>.meta.json)");
  verify->add_option("--alpha", ver.alpha, "Target violation rate");
  verify->add_option("--alpha0", ver.alpha_0, "Initial alpha_t");
  verify->add_option("--eta", ver.eta, "Update rate");
  verify->add_option("--epsilon", ver.epsilon, "Backup contract margin");
  verify->add_option("--delta-bar", ver.delta_bar, "Backup contract horizon");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitError;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*calibrate) return run_calibrate(cal_config, cal_out);
    if (*sweep) return run_sweep(sw_config, sw_alphas, sw_out, sw_seeds, workers);
    if (*mc) return run_montecarlo(mc_config, mc_seeds, mc_out, workers);
    if (*verify) return run_verify(ver);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return kExitError;
}
