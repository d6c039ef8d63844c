#pragma once

// Replays the golden fixture files against the library. Shared by the unit
// suites and the acceptance runner. Fixture lines:
//   op \t key=value;... \t expected \t tolerance \t note
// Tolerance 0 means exact match (integer or string payloads).

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lorabulk/experiment.hpp"
#include "lorabulk/phy.hpp"
#include "lorabulk/protocol.hpp"
#include "lorabulk/scheduler.hpp"

namespace golden {

struct Vector {
  std::string op;
  std::map<std::string, std::string> in;
  std::string expected;
  double tol = 0;
  std::string note;

  double in_d(const std::string& k) const { return std::stod(in.at(k)); }
  long long in_ll(const std::string& k) const { return std::stoll(in.at(k)); }
  bool has(const std::string& k) const { return in.count(k) > 0; }
};

inline std::vector<Vector> load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open fixture file: " + path);
  std::vector<Vector> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    Vector v;
    std::string inputs, tol;
    std::getline(is, v.op, '\t');
    std::getline(is, inputs, '\t');
    std::getline(is, v.expected, '\t');
    std::getline(is, tol, '\t');
    std::getline(is, v.note, '\t');
    v.tol = std::stod(tol);
    std::istringstream ps(inputs);
    std::string kv;
    while (std::getline(ps, kv, ';')) {
      const auto eq = kv.find('=');
      if (eq != std::string::npos) v.in[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    out.push_back(std::move(v));
  }
  return out;
}

inline std::string golden_dir(const char* fallback = "tests/golden") {
  const char* env = std::getenv("LORABULK_GOLDEN");
  return env ? env : fallback;
}

struct CheckResult {
  int total = 0;
  int failed = 0;
  std::vector<std::string> failures;

  void fail(const Vector& v, const std::string& got) {
    failed++;
    if (failures.size() < 25)
      failures.push_back(v.op + " [" + v.note + "]: expected " + v.expected + ", got " + got);
  }
};

inline void check_value(CheckResult& r, const Vector& v, double got) {
  r.total++;
  const double want = std::stod(v.expected);
  const bool ok = v.tol == 0 ? got == want
                             : std::abs(got - want) <=
                                   v.tol * std::max({std::abs(want), std::abs(got), 1e-300});
  if (!ok) r.fail(v, lorabulk::exp::fmt(got));
}

inline void check_string(CheckResult& r, const Vector& v, const std::string& got) {
  r.total++;
  if (got != v.expected) r.fail(v, got);
}

inline lorabulk::RadioParams radio_of(const Vector& v) {
  return lorabulk::make_radio_params(int(v.in_ll("sf")), int(v.in_ll("bw")),
                                     v.has("crd") ? int(v.in_ll("crd")) : 5);
}

inline lorabulk::sched::SchedulerConfig sched_cfg_of(const Vector& v) {
  lorabulk::sched::SchedulerConfig c;
  if (v.has("bw")) c.bandwidth_hz = int(v.in_ll("bw"));
  if (v.has("crd")) c.coding_rate_denominator = int(v.in_ll("crd"));
  if (v.has("h")) c.mac_header_bytes = int(v.in_ll("h"));
  if (v.has("d")) c.duty_cycle = v.in_d("d");
  return c;
}

inline std::string to_hex(const lorabulk::proto::Bytes& b) {
  static const char* d = "0123456789abcdef";
  std::string s;
  for (auto x : b) {
    s += d[x >> 4];
    s += d[x & 15];
  }
  return s;
}

// Dispatch one fixture against the implementation.
inline void run_vector(CheckResult& r, const Vector& v) {
  using namespace lorabulk;
  LinkBudget budget;

  if (v.op == "time_on_air") {
    check_value(r, v, time_on_air_ms(radio_of(v), int(v.in_ll("bytes"))));
  } else if (v.op == "snr_to_ebn0") {
    check_value(r, v, snr_to_ebn0_db(v.in_d("snr"), radio_of(v)));
  } else if (v.op == "bit_error_rate") {
    check_value(r, v, bit_error_rate(v.in_d("ebn0"), int(v.in_ll("sf"))));
  } else if (v.op == "packet_error_rate") {
    check_value(r, v, packet_error_rate(v.in_d("ber"), int(v.in_ll("bytes"))));
  } else if (v.op == "expected_retransmissions") {
    check_value(r, v, expected_retransmissions(v.in_d("per")));
  } else if (v.op == "receiver_sensitivity") {
    budget.noise_figure_db = v.in_d("nf");
    check_value(r, v, receiver_sensitivity_dbm(radio_of(v), budget));
  } else if (v.op == "sample_rssi") {
    PathLossModel m;
    m.shadowing_sigma_db = v.in_d("sigma");
    std::mt19937_64 rng(1);
    check_value(r, v, sample_rssi_dbm(v.in_d("tx"), v.in_d("d"), m, rng));
  } else if (v.op == "transmission_energy") {
    EnergyProfile e;
    check_value(r, v,
                transmission_energy_j(v.in_ll("buffer"), int(v.in_ll("payload")),
                                      int(v.in_ll("h")), radio_of(v), v.in_d("per"), e));
  } else if (v.op == "survives") {
    TransmissionEvent a, b;
    a.sf = int(v.in_ll("ref"));
    b.sf = int(v.in_ll("int"));
    a.rssi_dbm = v.in_d("delta");
    b.rssi_dbm = 0;
    check_value(r, v, survives_interferer(a, b, budget) ? 1 : 0);
  } else if (v.op == "resolve_pair") {
    TransmissionEvent a, b;
    a.id = 0;
    a.sf = int(v.in_ll("sf_a"));
    a.rssi_dbm = v.in_d("rssi_a");
    b.id = 1;
    b.sf = int(v.in_ll("sf_b"));
    b.rssi_dbm = v.in_d("rssi_b");
    const auto survivors = resolve_concurrent({a, b}, budget);
    bool sa = false, sb = false;
    for (const auto& s : survivors) (s.id == 0 ? sa : sb) = true;
    check_string(r, v, std::string(sa ? "1" : "0") + "," + (sb ? "1" : "0"));
  } else if (v.op == "min_spreading_factor") {
    auto cfg = sched_cfg_of(v);
    budget.noise_figure_db = v.in_d("nf");
    check_value(r, v, sched::min_spreading_factor(v.in_d("rssi"), budget, cfg));
  } else if (v.op == "cost_energy") {
    check_value(r, v, sched::cost_energy(int(v.in_ll("sf")), v.in_ll("data"), sched_cfg_of(v)));
  } else if (v.op == "cost_time") {
    sched::SchedulerState st;
    st.devices_per_sf[sf_index(int(v.in_ll("sf")))] = v.in_ll("x");
    check_value(r, v,
                sched::cost_time(int(v.in_ll("sf")), v.in_ll("data"), st, sched_cfg_of(v)));
  } else if (v.op == "plan_power") {
    check_value(r, v, sched::channel_power_plan(int(v.in_ll("sf"))).tx_dbm);
  } else if (v.op == "plan_channels") {
    check_value(r, v, double(sched::channel_power_plan(int(v.in_ll("sf"))).channels.size()));
  } else if (v.op == "optimal_packet_length") {
    if (v.has("ideal")) {
      for (auto& lim : budget.snr_limit_db) lim = 1000.0;
    }
    check_value(r, v,
                sched::optimal_packet_length(v.in_ll("max_size"), int(v.in_ll("sf")),
                                             sched_cfg_of(v), budget));
  } else if (v.op == "guard_time") {
    sched::SchedulerState st;
    const int sf = int(v.in_ll("sf"));
    st.devices_per_sf[sf_index(sf)] = v.in_ll("x");
    st.max_size_per_sf[sf_index(sf)] = v.in_ll("max_size");
    check_value(r, v, sched::guard_time_ms(sf, st, sched_cfg_of(v), int(v.in_ll("l"))));
  } else if (v.op == "slots_per_frame") {
    sched::SchedulerState st;
    const int sf = int(v.in_ll("sf"));
    st.devices_per_sf[sf_index(sf)] = v.in_ll("x");
    check_value(r, v,
                sched::slots_per_frame(sf, st, sched_cfg_of(v), int(v.in_ll("g")),
                                       int(v.in_ll("l"))));
  } else if (v.op == "join_request") {
    proto::JoinRequest req;
    req.app_eui = std::uint64_t(v.in_ll("app_eui"));
    req.dev_eui = std::uint64_t(v.in_ll("dev_eui"));
    req.dev_nonce = std::uint16_t(v.in_ll("nonce"));
    req.data_size = std::uint32_t(v.in_ll("data"));
    req.delay_elasticity = std::uint32_t(v.in_ll("delay"));
    check_string(r, v, to_hex(proto::encode_join_request(req)));
  } else if (v.op == "join_accept") {
    proto::JoinAccept a;
    a.app_nonce = std::uint32_t(v.in_ll("app_nonce"));
    a.net_id = std::uint32_t(v.in_ll("net_id"));
    a.dev_addr = std::uint32_t(v.in_ll("dev_addr"));
    a.settings = std::uint8_t(v.in_ll("settings"));
    a.dc.data_rate = proto::DCSettings::dr_for_sf(int(v.in_ll("sf")));
    a.dc.tx_power = proto::DCSettings::power_index(int(v.in_ll("power")));
    a.dc.ch_mask = std::uint16_t(v.in_ll("chmask"));
    a.dc.slot_frame = std::uint16_t(v.in_ll("slot"));
    a.dc.second_stage = std::uint16_t(v.in_ll("stage2"));
    check_string(r, v, to_hex(proto::encode_join_accept(a)));
  } else if (v.op == "fsettings") {
    proto::FSettings fs;
    auto parse_list = [&](const std::string& key, auto& arr) {
      std::istringstream is(v.in.at(key));
      std::string tok;
      std::size_t i = 0;
      while (std::getline(is, tok, ',') && i < arr.size()) {
        arr[i] = std::remove_reference_t<decltype(arr[0])>(std::stoll(tok));
        i++;
      }
    };
    parse_list("sizes", fs.pckt_sizes);
    parse_list("guards", fs.guards_ms);
    parse_list("frames", fs.frame_lens);
    fs.data_collection_ms = std::uint32_t(v.in_ll("dc_ms"));
    fs.next_round_s = std::uint32_t(v.in_ll("next_s"));
    check_string(r, v, to_hex(proto::encode_fsettings(fs)));
  } else if (v.op == "ack_bitmap") {
    std::vector<long long> set;
    if (!v.in.at("set").empty()) {
      std::istringstream is(v.in.at("set"));
      std::string tok;
      while (std::getline(is, tok, ',')) set.push_back(std::stoll(tok));
    }
    const auto bm =
        proto::build_ack_bitmap(set, v.in_ll("slots"), std::uint16_t(v.in_ll("frame")));
    check_string(r, v, to_hex(proto::encode_ack_bitmap(bm)));
  } else {
    r.total++;
    r.fail(v, "unknown op in fixture");
  }
}

inline CheckResult check_file(const std::string& path) {
  CheckResult r;
  for (const auto& v : load(path)) run_vector(r, v);
  return r;
}

inline CheckResult check_all(const std::string& dir) {
  CheckResult r;
  for (const char* f :
       {"phy_golden.tsv", "collision_golden.tsv", "sched_golden.tsv", "messages_golden.tsv"}) {
    auto one = check_file(dir + "/" + std::string(f));
    r.total += one.total;
    r.failed += one.failed;
    for (auto& m : one.failures) r.failures.push_back(m);
  }
  return r;
}

}  // namespace golden
