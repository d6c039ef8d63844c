#pragma once

// LoRa link-layer math: airtime, error rates, sensitivity, path loss,
// inter-SF interference and transmission energy. Everything here is a pure
// function of its arguments (plus an explicitly passed RNG), callable from
// any thread.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

namespace lorabulk {

inline constexpr int kSfMin = 7;
inline constexpr int kSfMax = 12;
inline constexpr int kSfCount = kSfMax - kSfMin + 1;

inline int sf_index(int sf) {
  if (sf < kSfMin || sf > kSfMax) throw std::invalid_argument("spreading factor out of {7..12}");
  return sf - kSfMin;
}

struct RadioParams {
  int sf = 7;
  int bandwidth_hz = 125000;
  int coding_rate_denominator = 5;  // 4/5 .. 4/8
  int preamble_symbols = 8;
  bool explicit_header = true;
  bool crc_on = true;
  bool low_data_rate_optimize = false;

  double symbol_ms() const { return std::ldexp(1000.0, sf) / bandwidth_hz; }

  void validate() const {
    sf_index(sf);
    if (bandwidth_hz <= 0) throw std::invalid_argument("bandwidth must be positive");
    if (coding_rate_denominator < 5 || coding_rate_denominator > 8)
      throw std::invalid_argument("coding rate denominator out of {5..8}");
    if (preamble_symbols <= 0) throw std::invalid_argument("preamble length must be positive");
    // LDRO is mandated by the chip whenever a symbol exceeds 16 ms.
    if (low_data_rate_optimize != (symbol_ms() > 16.0))
      throw std::invalid_argument("low_data_rate_optimize inconsistent with symbol duration");
  }

  double coding_rate() const { return 4.0 / coding_rate_denominator; }
};

// Fills in the LDRO flag from the 16 ms symbol rule.
inline RadioParams make_radio_params(int sf, int bandwidth_hz, int cr_denominator = 5,
                                     int preamble_symbols = 8) {
  RadioParams p;
  p.sf = sf;
  p.bandwidth_hz = bandwidth_hz;
  p.coding_rate_denominator = cr_denominator;
  p.preamble_symbols = preamble_symbols;
  p.low_data_rate_optimize = p.symbol_ms() > 16.0;
  p.validate();
  return p;
}

struct LinkBudget {
  // SNR demodulation limits per SF, dB.
  std::array<double, kSfCount> snr_limit_db{-6.0, -9.0, -12.0, -15.0, -17.5, -20.0};
  double noise_figure_db = 6.0;
  // Inter-SF interference thresholds, dB. Row = reference (victim) SF,
  // column = interferer SF; the reference survives if its power exceeds the
  // interferer's by at least the threshold. Diagonal +1 dB is the co-SF
  // capture margin.
  std::array<std::array<double, kSfCount>, kSfCount> interference_threshold_db{{
      {1, -8, -9, -9, -9, -9},
      {-11, 1, -11, -12, -13, -13},
      {-15, -13, 1, -13, -14, -15},
      {-19, -18, -17, 1, -17, -18},
      {-22, -22, -21, -20, 1, -20},
      {-25, -25, -25, -24, -23, 1},
  }};

  double snr_limit(int sf) const { return snr_limit_db[sf_index(sf)]; }
  double threshold(int reference_sf, int interferer_sf) const {
    return interference_threshold_db[sf_index(reference_sf)][sf_index(interferer_sf)];
  }
};

struct PathLossModel {
  double ref_loss_db = 127.41;
  double ref_distance_m = 40.0;
  double exponent = 2.08;
  double shadowing_sigma_db = 2.0;

  void validate() const {
    if (exponent <= 0) throw std::invalid_argument("path loss exponent must be positive");
    if (shadowing_sigma_db < 0) throw std::invalid_argument("shadowing sigma must be >= 0");
  }

  double mean_loss_db(double distance_m) const {
    if (distance_m <= 0) throw std::invalid_argument("distance must be positive");
    return ref_loss_db + 10.0 * exponent * std::log10(distance_m / ref_distance_m);
  }
};

struct EnergyProfile {
  // Transmit draw is flat over the configured power levels (Table-style 132 mW).
  std::map<int, double> tx_power_draw_mw{{13, 132.0}, {14, 132.0}};
  double rx_power_draw_mw = 48.0;
  double sleep_power_draw_mw = 0.0;
  double battery_mah = 1000.0;
  double nominal_voltage_v = 3.3;

  double tx_draw_w(int tx_dbm) const {
    auto it = tx_power_draw_mw.find(tx_dbm);
    if (it == tx_power_draw_mw.end()) {
      if (tx_power_draw_mw.empty()) throw std::invalid_argument("empty tx power draw table");
      it = std::prev(tx_power_draw_mw.end());
    }
    return it->second / 1000.0;
  }
  double rx_draw_w() const { return rx_power_draw_mw / 1000.0; }
  double battery_j() const { return battery_mah / 1000.0 * nominal_voltage_v * 3600.0; }
};

// Airtime of a packet of total_packet_bytes (header + payload), milliseconds.
inline double time_on_air_ms(const RadioParams& p, int total_packet_bytes) {
  p.validate();
  if (total_packet_bytes <= 0 || total_packet_bytes > 255)
    throw std::invalid_argument("packet length out of (0, 255]");
  const double t_sym = p.symbol_ms();
  const double t_preamble = (p.preamble_symbols + 4.25) * t_sym;
  const int crc = p.crc_on ? 1 : 0;
  const int ih = p.explicit_header ? 0 : 1;
  const int de = p.low_data_rate_optimize ? 1 : 0;
  const int cr = p.coding_rate_denominator - 4;
  const double num = 8.0 * total_packet_bytes - 4.0 * p.sf + 28.0 + 16.0 * crc - 20.0 * ih;
  const double groups = std::ceil(num / (4.0 * (p.sf - 2 * de)));
  const double payload_symbols = 8.0 + std::max(groups * (cr + 4), 0.0);
  return t_preamble + payload_symbols * t_sym;
}

// Eq.-style Eb/N0 conversion from SNR; both in dB.
inline double snr_to_ebn0_db(double snr_db, const RadioParams& p) {
  p.validate();
  const double b = p.bandwidth_hz;
  return snr_db - 10.0 * std::log10(b / std::ldexp(1.0, p.sf)) - 10.0 * std::log10(double(p.sf)) -
         10.0 * std::log10(p.coding_rate()) + 10.0 * std::log10(b);
}

inline double q_function(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

// LoRa bit error rate for a given Eb/N0 (dB). The Q argument scales the dB
// figure by log_12(sf)/sqrt(2); see the regression fixtures for the pinned
// operating points. Clamped to [0, 1].
inline double bit_error_rate(double ebn0_db, int sf) {
  sf_index(sf);
  const double coeff = std::log(double(sf)) / std::log(12.0) / std::sqrt(2.0);
  return std::clamp(q_function(coeff * ebn0_db), 0.0, 1.0);
}

inline double packet_error_rate(double ber, int total_packet_bytes) {
  if (ber < 0.0 || ber > 1.0) throw std::invalid_argument("ber out of [0,1]");
  if (total_packet_bytes < 0) throw std::invalid_argument("negative packet length");
  return 1.0 - std::pow(1.0 - ber, 8.0 * total_packet_bytes);
}

// Expected retransmission count for a geometric loss process.
inline double expected_retransmissions(double per) {
  if (per < 0.0 || per >= 1.0) throw std::domain_error("per must lie in [0,1)");
  return per / (1.0 - per);
}

// Receiver sensitivity, dBm: thermal floor + noise figure + per-SF SNR limit.
inline double receiver_sensitivity_dbm(const RadioParams& p, const LinkBudget& budget) {
  p.validate();
  return -174.0 + 10.0 * std::log10(double(p.bandwidth_hz)) + budget.noise_figure_db +
         budget.snr_limit(p.sf);
}

inline double noise_floor_dbm(int bandwidth_hz, const LinkBudget& budget) {
  return -174.0 + 10.0 * std::log10(double(bandwidth_hz)) + budget.noise_figure_db;
}

// PER of a packet received at snr_db, everything else from params.
inline double packet_error_rate_at_snr(double snr_db, const RadioParams& p,
                                       int total_packet_bytes) {
  return packet_error_rate(bit_error_rate(snr_to_ebn0_db(snr_db, p), p.sf), total_packet_bytes);
}

// Energy (J) to push buffer_bytes through payload_per_packet-sized chunks,
// counting expected retransmissions at the given PER. header_bytes rides on
// every packet for airtime purposes.
inline double transmission_energy_j(long long buffer_bytes, int payload_per_packet,
                                    int header_bytes, const RadioParams& p, double per,
                                    const EnergyProfile& profile, int tx_dbm = 14) {
  if (payload_per_packet <= 0) throw std::invalid_argument("payload per packet must be positive");
  if (buffer_bytes < 0) throw std::invalid_argument("negative buffer");
  if (buffer_bytes == 0) return 0.0;
  const double r = expected_retransmissions(per);
  const double packets = std::ceil(double(buffer_bytes) / payload_per_packet);
  const double toa_s = time_on_air_ms(p, payload_per_packet + header_bytes) / 1000.0;
  return (1.0 + r) * packets * toa_s * profile.tx_draw_w(tx_dbm);
}

// Log-distance path loss with one Gaussian shadowing draw.
inline double sample_rssi_dbm(double tx_dbm, double distance_m, const PathLossModel& model,
                              std::mt19937_64& rng) {
  model.validate();
  double shadow = 0.0;
  if (model.shadowing_sigma_db > 0.0) {
    std::normal_distribution<double> n(0.0, model.shadowing_sigma_db);
    shadow = n(rng);
  }
  return tx_dbm - (model.mean_loss_db(distance_m) + shadow);
}

struct TransmissionEvent {
  int id = 0;
  int sf = 7;
  int channel = 0;
  double rssi_dbm = 0.0;
  int tx_dbm = 14;
  double start_ms = 0.0;
  double end_ms = 0.0;
  int sender = -1;
  int payload_bytes = 0;
};

// True when the reference event's signal survives the interferer per the
// inter-SF threshold matrix (co-SF capture on the diagonal).
inline bool survives_interferer(const TransmissionEvent& reference,
                                const TransmissionEvent& interferer, const LinkBudget& budget) {
  return reference.rssi_dbm - interferer.rssi_dbm >=
         budget.threshold(reference.sf, interferer.sf);
}

// Interference resolution over a set of pairwise-overlapping same-channel
// transmissions: an event is received only if it clears the threshold
// against every other event in the set, received or not. Order-independent
// and idempotent on its own output.
inline std::vector<TransmissionEvent> resolve_concurrent(
    const std::vector<TransmissionEvent>& events, const LinkBudget& budget) {
  std::vector<TransmissionEvent> survivors;
  for (const auto& e : events) {
    bool ok = true;
    for (const auto& other : events) {
      if (&other == &e) continue;
      if (!survives_interferer(e, other, budget)) {
        ok = false;
        break;
      }
    }
    if (ok) survivors.push_back(e);
  }
  return survivors;
}

}  // namespace lorabulk
