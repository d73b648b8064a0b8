#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dadpc/certificates.hpp"
#include "dadpc/closed_loop.hpp"
#include "dadpc/config.hpp"
#include "dadpc/experiments.hpp"
#include "test_support.hpp"

using namespace dadpc;
using namespace dadpc::testing;
namespace fs = std::filesystem;

namespace {

const std::string kConfigDir = DADPC_CONFIG_DIR;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string default_text() { return read_file(kConfigDir + "/default_winter.toml"); }

// Shorter horizon and less data so closed-loop runs take seconds.
ScenarioConfig small_config() {
  auto cfg = load_scenario(kConfigDir + "/default_winter.toml");
  cfg.controller.N = 24;
  cfg.controller.t_init = 6;
  cfg.controller.T = 336;
  cfg.controller.T_c = 336;
  cfg.run.horizon_steps = 192;
  return cfg;
}

std::optional<ErrorCode> parse_error(const std::string& text) {
  return error_code_of([&] { (void)parse_scenario(text); });
}

std::string replace(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  EXPECT_NE(pos, std::string::npos) << from;
  if (pos != std::string::npos) text.replace(pos, from.size(), to);
  return text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DADPC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dadpc_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, DefaultScenarioLoads) {
  const auto cfg = parse_scenario(default_text());
  EXPECT_EQ(cfg.controller.N, 96);
  EXPECT_EQ(cfg.controller.t_init, 12);
  EXPECT_EQ(cfg.controller.T, 672u);
  EXPECT_EQ(cfg.plant.n_x(), 2);
  EXPECT_EQ(cfg.backup.setpoint, 23.5);
  EXPECT_EQ(cfg.schedule.comfort_at(40).lb[0], 21.0);
  EXPECT_EQ(cfg.schedule.comfort_at(0).lb[0], 18.0);
  EXPECT_EQ(cfg.weather.synthetic.peak_minute, 900);
}

TEST(Config, ColdSnapScenarioLoads) {
  const auto cfg = load_scenario(kConfigDir + "/cold_snap.toml");
  EXPECT_EQ(cfg.weather.synthetic.snap_delta, -8.0);
  EXPECT_FALSE(cfg.weather.synthetic.snap_in_forecast);
  EXPECT_GT(cfg.backup.contract.epsilon, 0.0);
}

TEST(Config, RejectsUnknownKeysAndSections) {
  EXPECT_EQ(parse_error(replace(default_text(), "[run]", "[run]\nhorizon = 5")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(default_text() + "\n[extra]\nx = 1\n"), ErrorCode::ConfigError);
}

TEST(Config, RequiresPlantMatrices) {
  EXPECT_EQ(parse_error(replace(default_text(), "C = [[1.0, 0.0]]", "")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(replace(default_text(), "C = [[1.0, 0.0]]", "C = [[1.0]]")), ErrorCode::DimensionMismatch);
}

TEST(Config, RejectsInvalidValues) {
  EXPECT_EQ(parse_error(replace(default_text(), "alpha = 0.05", "alpha = 1.5")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(replace(default_text(), "epsilon = 0.0", "epsilon = 0.2")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(replace(default_text(), "start = \"08:00\"", "start = \"8am\"")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(replace(default_text(), "y_lim_lower = [15.0]", "y_lim_lower = [19.0]")),
            ErrorCode::ConfigError);
  EXPECT_EQ(parse_error(replace(default_text(), "T = 672", "T = 50")), ErrorCode::ConfigError);
  EXPECT_EQ(parse_error("[plant\n"), ErrorCode::ConfigError);
}

TEST(Config, UnstablePlantRejected) {
  EXPECT_EQ(parse_error(replace(default_text(), "[0.742901825186, 0.231613552762]", "[1.2, 0.231613552762]")),
            ErrorCode::ConfigError);
}

TEST(ClosedLoop, NominalLevelRunsUntightenedAfterWarmUp) {
  auto cfg = small_config();
  cfg.controller.alpha = 1.0;
  const auto r = run_closed_loop(cfg, RunOptions{.pair_nominal_timing = true});
  // With alpha = 1 the update never decreases alpha_t; two clean steps saturate alpha_bar.
  std::int64_t first_one = -1;
  for (const auto& s : r.log)
    if (s.alpha_bar == 1.0) {
      first_one = s.t;
      break;
    }
  ASSERT_GE(first_one, 0);
  EXPECT_LE(first_one, 10);
  for (std::size_t k = static_cast<std::size_t>(first_one); k < r.log.size(); ++k)
    ASSERT_EQ(r.log[k].alpha_bar, 1.0);
  for (const auto& p : r.timing)
    if (p.t >= first_one) EXPECT_EQ(p.sigma, 1.0);
}

TEST(ClosedLoop, CertificatesHoldOnRun) {
  QuietWarnings quiet;
  auto cfg = small_config();
  const auto r = run_closed_loop(cfg);
  const auto rep = verify_certificates(r.log, r.meta);
  for (const auto& c : rep.results)
    EXPECT_TRUE(!c.applicable || c.passed) << c.name << ": " << c.detail << " at " << c.first_failure_t;
  EXPECT_GT(r.kpi.dpc_steps, 0);
}

TEST(ClosedLoop, BaselineAndControlledShareDisturbances) {
  auto cfg = small_config();
  const auto base = run_closed_loop(cfg, RunOptions{.baseline_only = true});
  const auto ctrl = run_closed_loop(cfg);
  ASSERT_EQ(base.log.size(), ctrl.log.size());
  // Identical noise and weather streams: step 0 sees the same output and weather.
  EXPECT_EQ(base.log[0].y, ctrl.log[0].y);
  for (std::size_t k = 0; k < base.log.size(); ++k) ASSERT_EQ(base.log[k].w, ctrl.log[k].w);
}

TEST(ClosedLoop, Deterministic) {
  auto cfg = small_config();
  cfg.run.horizon_steps = 96;
  const auto a = run_closed_loop(cfg), b = run_closed_loop(cfg);
  std::ostringstream sa, sb;
  write_step_log(sa, a.log);
  write_step_log(sb, b.log);
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(Sweep, CsvIndependentOfWorkerCount) {
  auto cfg = small_config();
  cfg.run.horizon_steps = 96;
  SweepOptions one, two;
  one.seeds = two.seeds = seed_range(1, 2);
  one.workers = 1;
  two.workers = 2;
  std::ostringstream a, b;
  write_sweep_csv(a, sweep_alpha(cfg, {0.05, 0.2}, one));
  write_sweep_csv(b, sweep_alpha(cfg, {0.05, 0.2}, two));
  const std::string csv_a = a.str();
  EXPECT_EQ(csv_a, b.str());
  EXPECT_EQ(std::count(csv_a.begin(), csv_a.end(), '\n'), 5);
}

TEST(Sweep, SummaryStatistics) {
  std::vector<SweepRow> rows(3);
  for (int k = 0; k < 3; ++k) {
    rows[k].alpha = 0.1;
    rows[k].kpi.violation_ratio = 0.1 * (k + 1);
    rows[k].kpi.energy_kwh = 10.0 * (k + 1);
    rows[k].kpi.relative_energy_pct = 90.0;
    rows[k].final_average_violation = 0.1 * (k + 1);
  }
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].violation_ratio.mean, 0.2, 1e-12);
  EXPECT_NEAR(s[0].violation_ratio.std, 0.1, 1e-12);
  EXPECT_NEAR(s[0].energy_kwh.mean, 20.0, 1e-12);
  EXPECT_NEAR(s[0].median_final_violation, 0.2, 1e-12);
  EXPECT_EQ(s[0].runs, 3u);
}

TEST(Cli, SimulateThenVerify) {
  const auto dir = scratch("cli_sim");
  ASSERT_EQ(run_cli("simulate --config " + kConfigDir + "/default_winter.toml --out " + dir.string() +
                    " --horizon 48 --seed 3"),
            0);
  for (const char* f : {"steps.csv", "steps.meta.json", "kpi.json", "quantiles.csv", "predictor.bin"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_EQ(run_cli("verify --log " + (dir / "steps.csv").string()), 0);

  // Alter one alpha value; the verifier must reject the log.
  std::string log = read_file(dir / "steps.csv");
  std::istringstream in(log);
  auto rows = read_step_log(in);
  rows[20].alpha += 0.01;
  {
    std::ofstream out(dir / "bad.csv");
    write_step_log(out, rows);
  }
  fs::copy_file(dir / "steps.meta.json", dir / "bad.meta.json");
  EXPECT_EQ(run_cli("verify --log " + (dir / "bad.csv").string()), 2);
  fs::remove_all(dir);
}

TEST(Cli, ErrorsExitWithOne) {
  const auto dir = scratch("cli_err");
  EXPECT_EQ(run_cli("simulate --config " + (dir / "missing.toml").string() + " --out " + dir.string()), 1);
  EXPECT_EQ(run_cli("verify --log " + (dir / "missing.csv").string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("--help"), 0);
  fs::remove_all(dir);
}
