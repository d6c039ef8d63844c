#pragma once

// Scenario files, experiment grids and CSV emission. Config files are flat
// key=value lines ('#' comments); command-line overrides win. Grid points
// run on a bounded worker pool; output rows are assembled in a fixed order
// and formatted with shortest-round-trip decimals so reruns are bit-stable.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <limits>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lorabulk/sim/engine.hpp"

namespace lorabulk::exp {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline sim::Scheme parse_scheme(const std::string& v) {
  if (v == "legacy") return sim::Scheme::Legacy;
  if (v == "delayed") return sim::Scheme::Delayed;
  if (v == "free") return sim::Scheme::Free;
  throw ParseError("scheme must be legacy|delayed|free, got '" + v + "'");
}
inline sim::Traffic parse_traffic(const std::string& v) {
  if (v == "unconfirmed") return sim::Traffic::Unconfirmed;
  if (v == "confirmed") return sim::Traffic::Confirmed;
  throw ParseError("traffic must be unconfirmed|confirmed, got '" + v + "'");
}
inline sim::Placement parse_placement(const std::string& v) {
  if (v == "bimodal") return sim::Placement::Bimodal;
  if (v == "disk") return sim::Placement::Disk;
  if (v == "annulus") return sim::Placement::Annulus;
  throw ParseError("placement must be bimodal|disk|annulus, got '" + v + "'");
}

inline const char* scheme_name(sim::Scheme s) {
  switch (s) {
    case sim::Scheme::Legacy: return "legacy";
    case sim::Scheme::Delayed: return "delayed";
    default: return "free";
  }
}
inline const char* traffic_name(sim::Traffic t) {
  return t == sim::Traffic::Confirmed ? "confirmed" : "unconfirmed";
}

// Applies one key=value pair; throws on unknown keys or bad values.
inline void apply_key(sim::ScenarioConfig& c, const std::string& key, const std::string& val,
                      bool& scheme_set) {
  auto as_ll = [&](const std::string& v) {
    long long out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
      throw ParseError(key + ": integer expected, got '" + v + "'");
    return out;
  };
  auto as_d = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      double out = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ParseError(key + ": number expected, got '" + v + "'");
    }
  };

  if (key == "scheme") {
    c.scheme = parse_scheme(val);
    scheme_set = true;
  } else if (key == "traffic") c.traffic = parse_traffic(val);
  else if (key == "alpha") c.alpha = int(as_ll(val));
  else if (key == "devices") c.n_devices = int(as_ll(val));
  else if (key == "seed") c.seed = std::uint64_t(as_ll(val));
  else if (key == "period_h") c.collection_period_h = as_d(val);
  else if (key == "app_bytes") c.app_payload_bytes = as_d(val);
  else if (key == "app_interval_s") c.app_interval_mean_s = as_d(val);
  else if (key == "bandwidth_hz") c.bandwidth_hz = int(as_ll(val));
  else if (key == "coding_rate_denominator") c.coding_rate_denominator = int(as_ll(val));
  else if (key == "placement") c.placement = parse_placement(val);
  else if (key == "disk_radius_m") c.disk_radius_m = as_d(val);
  else if (key == "near_fraction") c.near_fraction = as_d(val);
  else if (key == "near_r0_m") c.near_r0_m = as_d(val);
  else if (key == "near_r1_m") c.near_r1_m = as_d(val);
  else if (key == "far_r0_m") c.far_r0_m = as_d(val);
  else if (key == "far_r1_m") c.far_r1_m = as_d(val);
  else if (key == "path_loss_ref_db") c.path_loss.ref_loss_db = as_d(val);
  else if (key == "path_loss_ref_m") c.path_loss.ref_distance_m = as_d(val);
  else if (key == "path_loss_exponent") c.path_loss.exponent = as_d(val);
  else if (key == "shadowing_sigma_db") c.path_loss.shadowing_sigma_db = as_d(val);
  else if (key == "noise_figure_db") c.budget.noise_figure_db = as_d(val);
  else if (key == "snr_limits") {
    std::istringstream is(val);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(is, tok, ',') && i < c.budget.snr_limit_db.size())
      c.budget.snr_limit_db[i++] = as_d(tok);
    if (i != c.budget.snr_limit_db.size())
      throw ParseError("snr_limits: six comma-separated values expected");
  } else if (key.rfind("interference_row_", 0) == 0) {
    const int sf = std::stoi(key.substr(17));
    auto& row = c.budget.interference_threshold_db[sf_index(sf)];
    std::istringstream is(val);
    std::string tok;
    std::size_t i = 0;
    while (std::getline(is, tok, ',') && i < row.size()) row[i++] = as_d(tok);
    if (i != row.size()) throw ParseError(key + ": six comma-separated values expected");
  }
  else if (key == "duty_cycle") c.duty_cycle = as_d(val);
  else if (key == "skew_rate") c.skew_rate = as_d(val);
  else if (key == "stage1_s") c.stage1_s = as_d(val);
  else if (key == "stage2_s") c.stage2_s = as_d(val);
  else if (key == "join_backoff_base_s") c.join_backoff_base_s = as_d(val);
  else if (key == "join_backoff_cap_s") c.join_backoff_cap_s = as_d(val);
  else if (key == "rx1_dr_offset") c.rx1_dr_offset = int(as_ll(val));
  else if (key == "max_attempts") c.max_attempts = int(as_ll(val));
  else if (key == "battery_mah") c.energy.battery_mah = as_d(val);
  else if (key == "voltage_v") c.energy.nominal_voltage_v = as_d(val);
  else if (key == "rx_mw") c.energy.rx_power_draw_mw = as_d(val);
  else if (key == "sleep_mw") c.energy.sleep_power_draw_mw = as_d(val);
  else if (key == "delayed_offset_max_ms") c.delayed_offset_max_ms = as_d(val);
  else if (key == "trace") c.trace_path = val;
  else throw ParseError("unknown key '" + key + "'");
}

// Parses a scenario file plus overrides ("key=value" strings). The scheme
// has no default and must be set somewhere.
inline sim::ScenarioConfig parse_scenario(const std::string& path,
                                          const std::vector<std::string>& overrides = {}) {
  sim::ScenarioConfig c;
  bool scheme_set = false;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scenario file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      lineno++;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      while (!line.empty() && std::isspace(unsigned(line.back()))) line.pop_back();
      std::size_t start = 0;
      while (start < line.size() && std::isspace(unsigned(line[start]))) start++;
      if (start >= line.size()) continue;
      const auto eq = line.find('=', start);
      if (eq == std::string::npos)
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected key=value");
      std::string key = line.substr(start, eq - start);
      std::string val = line.substr(eq + 1);
      while (!key.empty() && std::isspace(unsigned(key.back()))) key.pop_back();
      while (!val.empty() && std::isspace(unsigned(val.front()))) val.erase(val.begin());
      try {
        apply_key(c, key, val, scheme_set);
      } catch (const ParseError& e) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw ParseError("override must be key=value: " + ov);
    apply_key(c, ov.substr(0, eq), ov.substr(eq + 1), scheme_set);
  }
  if (!scheme_set) throw ParseError("missing required field: scheme");
  c.validate();
  return c;
}

// ---- grids -------------------------------------------------------------------

struct ExperimentGrid {
  sim::ScenarioConfig base;
  std::vector<sim::Scheme> schemes;
  std::vector<sim::Traffic> traffics;
  std::vector<int> alphas{0};  // applied to the scheduled scheme only
  std::vector<int> device_counts;
  std::vector<double> periods_h;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  void validate() const {
    if (schemes.empty() || traffics.empty() || device_counts.empty() || periods_h.empty() ||
        seeds.empty())
      throw ParseError("grid axes must be non-empty");
    std::vector<std::uint64_t> s = seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end())
      throw ParseError("seeds must be distinct");
  }
};

struct AggregateRow {
  std::string scheme;
  std::string traffic;
  int alpha = 0;
  int n_devices = 0;
  double period_h = 0;
  int n_seeds = 0;
  double ddr_mean = 0, ddr_std = 0;
  double energy_j_mean = 0;
  double lifetime_y_mean = 0;
  double collection_s_mean = 0;
  double airtime_eff_mean = 0;
  bool airtime_valid = false;
  double collisions_mean = 0;
  double lost_mean = 0;
  double noack_mean = 0;
  double join_tx_per_device_mean = 0;
};

struct MeanStd {
  double mean = 0, std = 0;
};
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= double(xs.size());
  double acc = 0;
  for (double x : xs) acc += (x - r.mean) * (x - r.mean);
  r.std = xs.size() > 1 ? std::sqrt(acc / double(xs.size() - 1)) : 0.0;
  return r;
}

inline AggregateRow aggregate(const sim::ScenarioConfig& cfg,
                              const std::vector<sim::MetricsReport>& runs) {
  AggregateRow row;
  row.scheme = scheme_name(cfg.scheme);
  row.traffic = traffic_name(cfg.traffic);
  row.alpha = cfg.scheme == sim::Scheme::Free ? cfg.alpha : 0;
  row.n_devices = cfg.n_devices;
  row.period_h = cfg.collection_period_h;
  row.n_seeds = int(runs.size());
  std::vector<double> ddr, en, lt, ct, eff, coll, lost, noack, jtx;
  for (const auto& m : runs) {
    ddr.push_back(m.ddr);
    en.push_back(m.total_energy_j);
    lt.push_back(m.mean_lifetime_years);
    ct.push_back(m.collection_time_s);
    if (m.airtime_efficiency_valid) eff.push_back(m.airtime_efficiency);
    coll.push_back(double(m.collisions));
    lost.push_back(double(m.lost_uplink + m.lost_downlink));
    noack.push_back(double(m.no_ack + m.no_join_accept));
    jtx.push_back(m.join_tx_per_device);
  }
  const auto d = mean_std(ddr);
  row.ddr_mean = d.mean;
  row.ddr_std = d.std;
  row.energy_j_mean = mean_std(en).mean;
  row.lifetime_y_mean = mean_std(lt).mean;
  row.collection_s_mean = mean_std(ct).mean;
  row.airtime_valid = !eff.empty();
  row.airtime_eff_mean = mean_std(eff).mean;
  row.collisions_mean = mean_std(coll).mean;
  row.lost_mean = mean_std(lost).mean;
  row.noack_mean = mean_std(noack).mean;
  row.join_tx_per_device_mean = mean_std(jtx).mean;
  return row;
}

// Shortest round-trip decimal formatting.
inline std::string fmt(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

inline std::string csv_header() {
  return "scheme,traffic,alpha,n_devices,period_h,n_seeds,ddr_mean,ddr_std,energy_j_mean,"
         "lifetime_y_mean,collection_s_mean,airtime_eff_mean,collisions_mean,lost_mean,"
         "noack_mean,join_tx_per_device_mean";
}

inline std::string csv_row(const AggregateRow& r) {
  std::ostringstream os;
  os << r.scheme << ',' << r.traffic << ',' << r.alpha << ',' << r.n_devices << ','
     << fmt(r.period_h) << ',' << r.n_seeds << ',' << fmt(r.ddr_mean) << ',' << fmt(r.ddr_std)
     << ',' << fmt(r.energy_j_mean) << ',' << fmt(r.lifetime_y_mean) << ','
     << fmt(r.collection_s_mean) << ',' << (r.airtime_valid ? fmt(r.airtime_eff_mean) : "")
     << ',' << fmt(r.collisions_mean) << ',' << fmt(r.lost_mean) << ',' << fmt(r.noack_mean)
     << ',' << fmt(r.join_tx_per_device_mean);
  return os.str();
}

struct GridOutcome {
  std::vector<AggregateRow> rows;
  int failures = 0;
  std::vector<std::string> errors;
};

// Every grid point runs all its seeds; points are dispatched to a bounded
// pool and re-assembled in deterministic order. Failing points are reported
// and skipped, the rest of the grid still completes.
inline GridOutcome run_grid(const ExperimentGrid& grid, int workers = 0) {
  grid.validate();
  struct Point {
    sim::ScenarioConfig cfg;
  };
  std::vector<Point> points;
  for (auto scheme : grid.schemes)
    for (auto traffic : grid.traffics)
      for (int alpha : (scheme == sim::Scheme::Free ? grid.alphas : std::vector<int>{0}))
        for (int n : grid.device_counts)
          for (double p : grid.periods_h) {
            Point pt{grid.base};
            pt.cfg.scheme = scheme;
            pt.cfg.traffic = traffic;
            pt.cfg.alpha = alpha;
            pt.cfg.n_devices = n;
            pt.cfg.collection_period_h = p;
            points.push_back(pt);
          }

  GridOutcome out;
  out.rows.resize(points.size());
  std::vector<int> status(points.size(), 0);
  std::vector<std::string> errs(points.size());
  std::atomic<std::size_t> next{0};
  const int n_workers =
      workers > 0 ? workers : std::max(1u, std::thread::hardware_concurrency());

  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= points.size()) return;
      try {
        std::vector<sim::MetricsReport> runs;
        for (auto seed : grid.seeds) {
          auto cfg = points[i].cfg;
          cfg.seed = seed;
          runs.push_back(sim::run_scenario(cfg));
        }
        out.rows[i] = aggregate(points[i].cfg, runs);
        status[i] = 1;
      } catch (const std::exception& e) {
        status[i] = -1;
        errs[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  GridOutcome final_out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (status[i] == 1) {
      final_out.rows.push_back(out.rows[i]);
    } else {
      final_out.failures++;
      final_out.errors.push_back(errs[i]);
    }
  }
  return final_out;
}

// ---- packet-length sweep -----------------------------------------------------

struct Fig3Row {
  int sf = 7;
  int packet_length = 0;
  double energy_j = 0;
  bool is_argmin = false;
};

// Energy of draining `buffer_bytes` at each packet length, PER at the SNR
// limit, plus the per-SF argmin marker.
inline std::vector<Fig3Row> fig3_sweep(long long buffer_bytes, const sched::SchedulerConfig& cfg,
                                       const LinkBudget& budget,
                                       const std::vector<int>& sfs = {7, 8, 9, 10, 11, 12}) {
  if (buffer_bytes <= 0) throw ParseError("buffer must be positive");
  std::vector<Fig3Row> rows;
  for (int sf : sfs) {
    const auto params = cfg.radio(sf);
    const double ber = bit_error_rate(snr_to_ebn0_db(budget.snr_limit(sf), params), sf);
    const int argmin = sched::optimal_packet_length(buffer_bytes, sf, cfg, budget);
    for (int l = 20; l <= cfg.max_packet_bytes; ++l) {
      const double per = packet_error_rate(ber, l);
      Fig3Row r;
      r.sf = sf;
      r.packet_length = l;
      r.energy_j = per >= 1.0
                       ? std::numeric_limits<double>::infinity()
                       : transmission_energy_j(buffer_bytes, l - cfg.mac_header_bytes,
                                               cfg.mac_header_bytes, params, per, cfg.energy,
                                               sched::channel_power_plan(sf).tx_dbm);
      r.is_argmin = l == argmin;
      rows.push_back(r);
    }
  }
  return rows;
}

inline std::string fig3_csv(const std::vector<Fig3Row>& rows) {
  std::ostringstream os;
  os << "sf,packet_length,energy_j,is_argmin\n";
  for (const auto& r : rows)
    os << r.sf << ',' << r.packet_length << ',' << fmt(r.energy_j) << ',' << (r.is_argmin ? 1 : 0)
       << '\n';
  return os.str();
}

}  // namespace lorabulk::exp
