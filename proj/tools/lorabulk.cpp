// Command-line front end: single runs, experiment grids, the packet-length
// sweep and the trace auditor.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "lorabulk/experiment.hpp"

using namespace lorabulk;

namespace {

int cmd_run(const std::string& scenario, const std::vector<std::string>& sets,
            const std::string& csv_path) {
  const auto cfg = exp::parse_scenario(scenario, sets);
  const auto m = sim::run_scenario(cfg);
  const auto row = exp::aggregate(cfg, {m});
  std::ostream* os = &std::cout;
  std::ofstream f;
  if (!csv_path.empty()) {
    f.open(csv_path);
    if (!f) throw std::runtime_error("cannot open " + csv_path);
    os = &f;
  }
  *os << exp::csv_header() << '\n' << exp::csv_row(row) << '\n';
  std::cerr << "ddr " << m.ddr << ", energy " << m.total_energy_j << " J, lifetime "
            << m.mean_lifetime_years << " y, collection " << m.collection_time_s << " s, "
            << m.uplink_transmissions << " uplinks (" << m.collisions << " collisions, "
            << m.lost_uplink << " lost)\n";
  return 0;
}

int cmd_grid(const std::string& scenario, const std::vector<std::string>& sets,
             const std::string& schemes, const std::string& traffics, const std::string& alphas,
             const std::string& devices, const std::string& periods, const std::string& seeds,
             int workers, const std::string& csv_path) {
  exp::ExperimentGrid grid;
  grid.base = exp::parse_scenario(scenario, sets);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) out.push_back(tok);
    return out;
  };
  grid.schemes.clear();
  for (const auto& s : split(schemes)) grid.schemes.push_back(exp::parse_scheme(s));
  grid.traffics.clear();
  for (const auto& t : split(traffics)) grid.traffics.push_back(exp::parse_traffic(t));
  grid.alphas.clear();
  for (const auto& a : split(alphas)) grid.alphas.push_back(std::stoi(a));
  grid.device_counts.clear();
  for (const auto& d : split(devices)) grid.device_counts.push_back(std::stoi(d));
  grid.periods_h.clear();
  for (const auto& p : split(periods)) grid.periods_h.push_back(std::stod(p));
  if (!seeds.empty()) {
    grid.seeds.clear();
    for (const auto& s : split(seeds)) grid.seeds.push_back(std::stoull(s));
  }

  const auto out = exp::run_grid(grid, workers);
  std::ostream* os = &std::cout;
  std::ofstream f;
  if (!csv_path.empty()) {
    f.open(csv_path);
    if (!f) throw std::runtime_error("cannot open " + csv_path);
    os = &f;
  }
  *os << exp::csv_header() << '\n';
  for (const auto& row : out.rows) *os << exp::csv_row(row) << '\n';
  for (const auto& e : out.errors) std::cerr << "grid point failed: " << e << '\n';
  return out.failures == 0 ? 0 : 1;
}

int cmd_fig3(long long buffer, const std::string& csv_path) {
  sched::SchedulerConfig cfg;
  LinkBudget budget;
  const auto rows = exp::fig3_sweep(buffer, cfg, budget);
  std::ostream* os = &std::cout;
  std::ofstream f;
  if (!csv_path.empty()) {
    f.open(csv_path);
    if (!f) throw std::runtime_error("cannot open " + csv_path);
    os = &f;
  }
  *os << exp::fig3_csv(rows);
  return 0;
}

int cmd_audit(const std::string& trace_path) {
  std::ifstream in(trace_path);
  if (!in) throw std::runtime_error("cannot open trace: " + trace_path);
  const auto res = sim::audit_trace(in);
  std::cout << "records " << res.records << ", duty violations " << res.duty_violations
            << ", scheduled overlaps " << res.scheduled_overlaps << ", conservation failures "
            << res.conservation_failures << ", replayed energy " << res.energy_j << " J\n";
  for (const auto& p : res.problems) std::cout << "  " << p << '\n';
  return res.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bulk data collection simulator for LoRaWAN"};
  app.require_subcommand(1);

  std::string scenario, csv_path, trace_path;
  std::vector<std::string> sets;
  std::string schemes = "free", traffics = "unconfirmed", alphas = "0", devices = "100",
              periods = "24", seeds;
  long long fig3_buffer = 1500;
  int workers = 0;

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("scenario", scenario, "scenario file (key=value lines)");
  run->add_option("--set,-s", sets, "override, key=value (repeatable)");
  run->add_option("--csv,-o", csv_path, "write the metrics row to a file");

  auto* grid = app.add_subcommand("grid", "sweep scheme/traffic/size/period over seeds");
  grid->add_option("scenario", scenario, "base scenario file");
  grid->add_option("--set,-s", sets, "base override, key=value");
  grid->add_option("--schemes", schemes, "comma list: legacy,delayed,free");
  grid->add_option("--traffics", traffics, "comma list: unconfirmed,confirmed");
  grid->add_option("--alphas", alphas, "comma list of alpha values for the scheduled scheme");
  grid->add_option("--devices", devices, "comma list of network sizes");
  grid->add_option("--periods", periods, "comma list of collection periods [h]");
  grid->add_option("--seeds", seeds, "comma list of seeds (default 1..10)");
  grid->add_option("--workers,-j", workers, "worker threads (default: hardware)");
  grid->add_option("--csv,-o", csv_path, "write rows to a file");

  auto* fig3 = app.add_subcommand("fig3", "energy vs packet length sweep at the SNR limits");
  fig3->add_option("--buffer", fig3_buffer, "buffered bytes per device (default 1500)");
  fig3->add_option("--csv,-o", csv_path, "write rows to a file");

  auto* audit = app.add_subcommand("audit", "replay a trace log through the checker");
  audit->add_option("trace", trace_path, "trace file from run --set trace=...")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario, sets, csv_path);
    if (grid->parsed())
      return cmd_grid(scenario, sets, schemes, traffics, alphas, devices, periods, seeds, workers,
                      csv_path);
    if (fig3->parsed()) return cmd_fig3(fig3_buffer, csv_path);
    if (audit->parsed()) return cmd_audit(trace_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
