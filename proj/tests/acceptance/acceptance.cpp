// Acceptance suite: the desk-scale contract. Each numbered criterion prints
// exactly one PASS/FAIL line; the process exits nonzero if any fail.
//
//   acceptance [golden-dir]
//
// The full-size grids behind the published curves (up to 2000 devices, all
// schemes) run through the CLI's `grid` subcommand; this suite pins the
// thresholds that must hold at desk scale.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include "../golden_check.hpp"
#include "lorabulk/experiment.hpp"

using namespace lorabulk;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int idx, const char* name, bool pass, const std::string& detail) {
  std::printf("[%d] %-34s %s  (%s)\n", idx, name, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) failures++;
}

std::vector<std::uint64_t> ten_seeds() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }

exp::AggregateRow point(sim::Scheme scheme, sim::Traffic traffic, int alpha, int n,
                        double period_h = 24.0) {
  sim::ScenarioConfig base;
  base.scheme = scheme;
  base.traffic = traffic;
  base.alpha = alpha;
  base.n_devices = n;
  base.collection_period_h = period_h;
  std::vector<sim::MetricsReport> runs;
  for (auto seed : ten_seeds()) {
    base.seed = seed;
    runs.push_back(sim::run_scenario(base));
  }
  return exp::aggregate(base, runs);
}

std::string f3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.3f", v);
  return b;
}

// ---- criterion 1: golden vectors --------------------------------------------

void criterion_golden(const std::string& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  golden::CheckResult r;
  std::string err;
  try {
    r = golden::check_all(dir);
  } catch (const std::exception& e) {
    err = e.what();
  }
  const double dt =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool pass = err.empty() && r.failed == 0 && r.total > 800 && dt < 1.0;
  std::ostringstream os;
  if (!err.empty())
    os << err;
  else
    os << r.total << " vectors, " << r.failed << " failed, " << f3(dt) << " s";
  for (const auto& f : r.failures) std::printf("      %s\n", f.c_str());
  report(1, "golden vectors vs oracle", pass, os.str());
}

// ---- criterion 2: scheduled delivery ------------------------------------------

void criterion_free_ddr() {
  bool pass = true;
  std::ostringstream os;
  for (int n : {100, 300, 500})
    for (auto traffic : {sim::Traffic::Unconfirmed, sim::Traffic::Confirmed})
      for (int alpha : {0, 1}) {
        const auto row = point(sim::Scheme::Free, traffic, alpha, n);
        if (row.ddr_mean < 0.99) pass = false;
        if (n == 300 && alpha == 0)
          os << exp::traffic_name(traffic)[0] << "300:" << f3(row.ddr_mean) << " ";
      }
  report(2, "scheduled delivery >= 0.99", pass, os.str());
}

// ---- criterion 3: legacy confirmable collapse ----------------------------------

double g_legacy_1000_lifetime = 0.0;

void criterion_legacy_collapse() {
  std::vector<double> ddr;
  std::ostringstream os;
  for (int n : {100, 300, 500, 1000}) {
    const auto row = point(sim::Scheme::Legacy, sim::Traffic::Confirmed, 0, n);
    ddr.push_back(row.ddr_mean);
    os << n << ":" << f3(row.ddr_mean) << " ";
    if (n == 1000) g_legacy_1000_lifetime = row.lifetime_y_mean;
  }
  bool pass = ddr[1] < 0.25;
  for (std::size_t i = 1; i < ddr.size(); ++i)
    if (ddr[i] > ddr[i - 1] + 1e-12) pass = false;
  report(3, "legacy confirmable collapse", pass, os.str());
}

// ---- criterion 4: lifetime ordering --------------------------------------------

void criterion_lifetime() {
  const auto free_row = point(sim::Scheme::Free, sim::Traffic::Confirmed, 0, 1000);
  const double legacy_y = g_legacy_1000_lifetime;
  const bool pass = free_row.lifetime_y_mean > 10.0 && legacy_y < 0.5 * free_row.lifetime_y_mean;
  std::ostringstream os;
  os << "free " << f3(free_row.lifetime_y_mean) << " y, legacy " << f3(legacy_y) << " y";
  report(4, "lifetime ordering at n=1000", pass, os.str());
}

// ---- criterion 5: alpha trade-off ----------------------------------------------

void criterion_alpha() {
  const auto a0 = point(sim::Scheme::Free, sim::Traffic::Unconfirmed, 0, 1000);
  const auto a1 = point(sim::Scheme::Free, sim::Traffic::Unconfirmed, 1, 1000);
  const bool pass = a1.collection_s_mean < a0.collection_s_mean &&
                    a1.energy_j_mean > a0.energy_j_mean &&
                    a1.airtime_eff_mean >= a0.airtime_eff_mean;
  std::ostringstream os;
  os << "time " << f3(a1.collection_s_mean) << "<" << f3(a0.collection_s_mean) << ", energy "
     << f3(a1.energy_j_mean) << ">" << f3(a0.energy_j_mean) << ", eff " << f3(a1.airtime_eff_mean)
     << ">=" << f3(a0.airtime_eff_mean);
  report(5, "alpha trade-off at n=1000", pass, os.str());
}

// ---- criterion 6: join-phase scaling --------------------------------------------

void criterion_joins() {
  std::vector<double> jpd;
  std::ostringstream os;
  for (int n : {500, 1000, 2000}) {
    const auto row = point(sim::Scheme::Free, sim::Traffic::Unconfirmed, 0, n);
    jpd.push_back(row.join_tx_per_device_mean);
    os << n << ":" << f3(row.join_tx_per_device_mean) << " ";
  }
  const bool pass =
      jpd[0] < jpd[1] && jpd[1] < jpd[2] && jpd[2] >= 15.0 && jpd[2] <= 60.0;
  report(6, "join-request scaling", pass, os.str());
}

// ---- criterion 7: property suites ------------------------------------------------

bool prop_duty_and_conservation(std::ostringstream& os) {
  for (auto scheme : {sim::Scheme::Free, sim::Scheme::Legacy, sim::Scheme::Delayed})
    for (auto traffic : {sim::Traffic::Unconfirmed, sim::Traffic::Confirmed})
      for (std::uint64_t seed : {11ull, 12ull}) {
        sim::ScenarioConfig c;
        c.scheme = scheme;
        c.traffic = traffic;
        c.n_devices = 40;
        c.seed = seed;
        c.stage1_s = 1200.0;
        c.trace_path = (fs::temp_directory_path() / "lorabulk_acc.trace").string();
        const auto m = sim::run_scenario(c);
        std::ifstream in(c.trace_path);
        const auto audit = sim::audit_trace(in);
        fs::remove(c.trace_path);
        if (m.goal_bytes != m.delivered_bytes + m.dropped_bytes + m.unattempted_bytes) {
          os << "conservation broken (" << exp::scheme_name(scheme) << ") ";
          return false;
        }
        if (!audit.ok()) {
          os << "audit: " << audit.duty_violations << " duty, " << audit.scheduled_overlaps
             << " overlap, " << audit.conservation_failures << " conservation ("
             << exp::scheme_name(scheme) << "/" << exp::traffic_name(traffic) << ") ";
          for (const auto& p : audit.problems) std::printf("      %s\n", p.c_str());
          return false;
        }
        if (std::abs(audit.energy_j - m.total_energy_j) >
            1e-9 * std::max(1.0, m.total_energy_j)) {
          os << "energy audit drift ";
          return false;
        }
      }
  return true;
}

bool prop_free_overlaps(std::ostringstream& os) {
  for (int alpha : {0, 1})
    for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
      sim::ScenarioConfig c;
      c.scheme = sim::Scheme::Free;
      c.traffic = alpha == 0 ? sim::Traffic::Unconfirmed : sim::Traffic::Confirmed;
      c.alpha = alpha;
      c.n_devices = 150;
      c.seed = seed;
      c.stage1_s = 2400.0;
      c.trace_path = (fs::temp_directory_path() / "lorabulk_ovl.trace").string();
      sim::run_scenario(c);
      std::ifstream in(c.trace_path);
      const auto audit = sim::audit_trace(in);
      fs::remove(c.trace_path);
      if (audit.scheduled_overlaps != 0) {
        os << "scheduled overlaps under skew: " << audit.scheduled_overlaps << " ";
        return false;
      }
    }
  return true;
}

bool prop_codecs(std::ostringstream& os) {
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 100000; ++i) {
    proto::JoinRequest req;
    req.app_eui = rng();
    req.dev_eui = rng();
    req.dev_nonce = std::uint16_t(rng());
    req.data_size = std::uint32_t(rng() & 0xffffff);
    req.delay_elasticity = std::uint32_t(rng() & 0xffffff);
    if (!(proto::decode_join_request(proto::encode_join_request(req)) == req)) {
      os << "join-request round-trip ";
      return false;
    }
    proto::FSettings fsx;
    for (auto& v : fsx.pckt_sizes) v = std::uint8_t(rng());
    for (auto& v : fsx.guards_ms) v = std::uint16_t(rng());
    for (auto& v : fsx.frame_lens) v = std::uint16_t(rng());
    fsx.data_collection_ms = std::uint32_t(rng());
    fsx.next_round_s = std::uint32_t(rng() & 0xffffff);
    if (!(proto::decode_fsettings(proto::encode_fsettings(fsx)) == fsx)) {
      os << "fsettings round-trip ";
      return false;
    }
    proto::JoinAccept acc;
    acc.app_nonce = std::uint32_t(rng() & 0xffffff);
    acc.net_id = std::uint32_t(rng() & 0xffffff);
    acc.dev_addr = std::uint32_t(rng());
    acc.settings = std::uint8_t(rng());
    acc.dc.data_rate = std::uint8_t(rng() & 0x0f);
    acc.dc.tx_power = std::uint8_t(rng() & 0x0f);
    acc.dc.ch_mask = std::uint16_t(rng() | 1);
    acc.dc.slot_frame = std::uint16_t(rng());
    acc.dc.second_stage = std::uint16_t(rng());
    if (!(proto::decode_join_accept(proto::encode_join_accept(acc)) == acc)) {
      os << "join-accept round-trip ";
      return false;
    }
  }
  return true;
}

bool prop_allocator(std::ostringstream& os) {
  LinkBudget budget;
  std::mt19937_64 rng(515);
  std::uniform_real_distribution<double> rssi(-132.0, -95.0);
  std::uniform_int_distribution<long long> size(1, 20000);
  for (int alpha : {0, 1}) {
    sched::SchedulerConfig cfg;
    cfg.alpha = alpha;
    sched::SchedulerState st;
    for (int i = 0; i < 1000; ++i) {
      sched::JoinInfo j{i, rssi(rng), size(rng), 86400};
      int expect = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int sf = kSfMin; sf <= kSfMax; ++sf) {
        if (!sched::feasible_at_plan_power(sf, j.rssi_dbm, budget, cfg)) continue;
        const double c = alpha == 1 ? sched::cost_time(sf, j.data_size, st, cfg)
                                    : sched::cost_energy(sf, j.data_size, cfg);
        if (c < best) {
          best = c;
          expect = sf;
        }
      }
      if (expect < 0) continue;
      if (sched::allocate(j, st, cfg, budget).sf != expect) {
        os << "allocator argmin mismatch at join " << i << " alpha " << alpha << " ";
        return false;
      }
    }
  }
  return true;
}

bool prop_optlen(std::ostringstream& os) {
  LinkBudget budget;
  sched::SchedulerConfig cfg;
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<long long> size(1, 40000);
  for (int trial = 0; trial < 100; ++trial) {
    const long long max_size = size(rng);
    const int sf = 7 + int(rng() % 6);
    const auto params = cfg.radio(sf);
    const double ber = bit_error_rate(snr_to_ebn0_db(budget.snr_limit(sf), params), sf);
    int best = -1;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int l = cfg.mac_header_bytes + 1; l <= 255; ++l) {
      const double per = packet_error_rate(ber, l);
      if (per >= 1.0) continue;
      const double cost = (1.0 + expected_retransmissions(per)) *
                          std::ceil(double(max_size) / (l - cfg.mac_header_bytes)) *
                          (time_on_air_ms(params, l) / 1000.0) * 0.132;
      if (cost <= best_cost) {
        best_cost = cost;
        best = l;
      }
    }
    if (sched::optimal_packet_length(max_size, sf, cfg, budget) != best) {
      os << "packet-length sweep mismatch sf " << sf << " size " << max_size << " ";
      return false;
    }
  }
  return true;
}

void criterion_properties() {
  std::ostringstream os;
  bool pass = true;
  pass = prop_duty_and_conservation(os) && pass;
  pass = prop_free_overlaps(os) && pass;
  pass = prop_codecs(os) && pass;
  pass = prop_allocator(os) && pass;
  pass = prop_optlen(os) && pass;
  report(7, "property suites", pass, pass ? "duty/overlap/conservation/codec/argmin" : os.str());
}

// ---- criterion 8: packet-length sweep reproduction -------------------------------

void criterion_fig3() {
  sched::SchedulerConfig cfg;
  LinkBudget budget;
  bool pass = true;
  std::ostringstream os;
  for (int sf = 7; sf <= 12; ++sf) {
    const int argmin = sched::optimal_packet_length(1500, sf, cfg, budget);
    os << "sf" << sf << ":" << argmin << " ";
    if (argmin < 138) pass = false;  // upper half of the 20..255 range
  }
  report(8, "fig3 argmin in the upper half", pass, os.str());
}

}  // namespace

int main(int argc, char** argv) {
  const std::string golden_dir = argc > 1 ? argv[1] : golden::golden_dir();
  const auto t0 = std::chrono::steady_clock::now();

  criterion_golden(golden_dir);
  criterion_free_ddr();
  criterion_legacy_collapse();
  criterion_lifetime();
  criterion_alpha();
  criterion_joins();
  criterion_properties();
  criterion_fig3();

  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %d criterion(s) failed, %.1f s total\n", failures ? "FAIL" : "OK", failures,
              dt);
  return failures ? 1 : 0;
}
