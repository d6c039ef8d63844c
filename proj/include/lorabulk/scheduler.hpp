#pragma once

// Gateway-side allocator: online SF/slot assignment with the alpha-switched
// cost functions, the fixed channel/power plan, per-SF packet-length
// optimization and frame sizing. State is single-writer; joins are applied
// in arrival order.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lorabulk/phy.hpp"

namespace lorabulk::sched {

struct SchedulerConfig {
  int alpha = 0;  // 0: minimize energy, 1: minimize collection time
  double duty_cycle = 0.01;
  int mac_header_bytes = 8;
  int max_packet_bytes = 255;
  double skew_rate = 15e-6;
  int join_tx_dbm = 14;
  int bandwidth_hz = 500000;
  int coding_rate_denominator = 5;
  EnergyProfile energy;

  RadioParams radio(int sf) const {
    return make_radio_params(sf, bandwidth_hz, coding_rate_denominator);
  }
  int provisional_payload() const { return max_packet_bytes - mac_header_bytes; }
};

struct ChannelPower {
  std::vector<int> channels;
  int tx_dbm = 14;
};

// Table-driven channel/power plan. SF7 gets the isolated channel at full
// power; SF8/9 drop 1 dBm; SF11/12 run two channels. Exactly eight distinct
// (sf, channel) pairs, the gateway's concurrent-demodulation budget.
inline ChannelPower channel_power_plan(int sf) {
  switch (sf) {
    case 7: return {{1}, 14};
    case 8: return {{3}, 13};
    case 9: return {{2}, 13};
    case 10: return {{2}, 14};
    case 11: return {{2, 3}, 14};
    case 12: return {{2, 3}, 14};
    default: throw std::invalid_argument("spreading factor out of {7..12}");
  }
}

inline int channels_per_sf(int sf) { return int(channel_power_plan(sf).channels.size()); }

struct Assignment {
  int device = -1;
  int sf = 7;
  long long slot_index = 0;
  int tx_power_dbm = 14;
  std::vector<int> channel_ids;
};

struct JoinInfo {
  int device = -1;
  double rssi_dbm = 0.0;       // measured at the join-request power
  long long data_size = 0;     // buffered bytes
  long long delay_elasticity_s = 0;
};

struct SchedulerState {
  std::array<long long, kSfCount> devices_per_sf{};     // X_f
  std::array<long long, kSfCount> max_size_per_sf{};    // MaxSize_f
  std::vector<Assignment> assignments;

  long long count(int sf) const { return devices_per_sf[sf_index(sf)]; }
  long long max_size(int sf) const { return max_size_per_sf[sf_index(sf)]; }
};

// Smallest SF whose receiver sensitivity the signal clears.
inline int min_spreading_factor(double rssi_dbm, const LinkBudget& budget,
                                const SchedulerConfig& cfg) {
  for (int sf = kSfMin; sf <= kSfMax; ++sf) {
    if (rssi_dbm > receiver_sensitivity_dbm(cfg.radio(sf), budget)) return sf;
  }
  throw std::domain_error("device out of range: rssi below the SF12 sensitivity");
}

// Rough energy in joules to drain data_size at SF f with the provisional
// maximal packet.
inline double cost_energy(int sf, long long data_size, const SchedulerConfig& cfg) {
  if (data_size < 0) throw std::invalid_argument("negative data size");
  if (data_size == 0) return 0.0;
  const double packets = std::ceil(double(data_size) / cfg.provisional_payload());
  const double toa_s = time_on_air_ms(cfg.radio(sf), cfg.max_packet_bytes) / 1000.0;
  return packets * toa_s * cfg.energy.tx_draw_w(channel_power_plan(sf).tx_dbm);
}

// Rough collection time in ms for this device given the current frame
// occupancy X_f.
inline double cost_time(int sf, long long data_size, const SchedulerState& state,
                        const SchedulerConfig& cfg) {
  if (data_size < 0) throw std::invalid_argument("negative data size");
  const double m = channels_per_sf(sf);
  const double frames =
      std::max(double(state.count(sf) + 1), std::ceil(1.0 / cfg.duty_cycle));
  const double packets = std::ceil(double(data_size) / (cfg.provisional_payload() * m));
  const double toa_ms = time_on_air_ms(cfg.radio(sf), cfg.max_packet_bytes);
  return (frames * packets + (m - 1)) * toa_ms;
}

// Feasibility at the power the plan would actually assign: SF8/9 transmit
// 1 dBm below the join request, which matters right at the band edge.
inline bool feasible_at_plan_power(int sf, double join_rssi_dbm, const LinkBudget& budget,
                                   const SchedulerConfig& cfg) {
  const double adjusted =
      join_rssi_dbm + channel_power_plan(sf).tx_dbm - cfg.join_tx_dbm;
  return adjusted > receiver_sensitivity_dbm(cfg.radio(sf), budget);
}

// Online allocation of one join request: pick the cheapest feasible SF at or
// above the minimum, hand out the next slot in that frame. Ties go to the
// lower SF.
inline Assignment allocate(const JoinInfo& join, SchedulerState& state,
                           const SchedulerConfig& cfg, const LinkBudget& budget) {
  int best_sf = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int sf = kSfMin; sf <= kSfMax; ++sf) {
    if (!feasible_at_plan_power(sf, join.rssi_dbm, budget, cfg)) continue;
    const double c = cfg.alpha == 1 ? cost_time(sf, join.data_size, state, cfg)
                                    : cost_energy(sf, join.data_size, cfg);
    if (c < best_cost) {
      best_cost = c;
      best_sf = sf;
    }
  }
  if (best_sf < 0) throw std::domain_error("device out of range: rejected join");

  const auto plan = channel_power_plan(best_sf);
  Assignment a;
  a.device = join.device;
  a.sf = best_sf;
  a.slot_index = state.devices_per_sf[sf_index(best_sf)]++;
  a.tx_power_dbm = plan.tx_dbm;
  a.channel_ids = plan.channels;
  auto& max_size = state.max_size_per_sf[sf_index(best_sf)];
  max_size = std::max(max_size, join.data_size);
  state.assignments.push_back(a);
  return a;
}

// Exhaustive packet-length sweep minimizing the retransmission-weighted
// energy of draining max_size_f, PER taken at the SF's SNR limit. Ties go to
// the larger length.
inline int optimal_packet_length(long long max_size_f, int sf, const SchedulerConfig& cfg,
                                 const LinkBudget& budget) {
  if (max_size_f <= 0) throw std::invalid_argument("max size must be positive");
  const auto params = cfg.radio(sf);
  const double ber = bit_error_rate(snr_to_ebn0_db(budget.snr_limit(sf), params), sf);
  const double p_tx = cfg.energy.tx_draw_w(channel_power_plan(sf).tx_dbm);
  int best_l = -1;
  double best_cost = std::numeric_limits<double>::infinity();
  // The sweep starts past the header; shorter frames carry no payload.
  for (int l = std::max(5, cfg.mac_header_bytes + 1); l <= cfg.max_packet_bytes; ++l) {
    const double per = packet_error_rate(ber, l);
    if (per >= 1.0) continue;
    const double packets = std::ceil(double(max_size_f) / (l - cfg.mac_header_bytes));
    const double cost = (1.0 + expected_retransmissions(per)) * packets *
                        (time_on_air_ms(params, l) / 1000.0) * p_tx;
    if (cost <= best_cost) {
      best_cost = cost;
      best_l = l;
    }
  }
  return best_l;
}

// Guard sized to the clock skew accumulated over one data-collection round,
// whole milliseconds, floor 1 ms (stage-2 sync is sub-millisecond).
inline int guard_time_ms(int sf, const SchedulerState& state, const SchedulerConfig& cfg,
                         int packet_bytes) {
  const double m = channels_per_sf(sf);
  const double frames = std::max(double(state.count(sf)), std::ceil(1.0 / cfg.duty_cycle));
  const double packets =
      std::ceil(double(state.max_size(sf)) / ((packet_bytes - cfg.mac_header_bytes) * m));
  const double toa_ms = time_on_air_ms(cfg.radio(sf), packet_bytes);
  const double round_ms = (frames * packets + (m - 1)) * toa_ms;
  return std::max(1, int(std::ceil(cfg.skew_rate * round_ms)));
}

// Slots per frame: every assigned device gets one, padded up to the
// duty-cycle minimum so the slot can recur frame after frame.
inline long long slots_per_frame(int sf, const SchedulerState& state, const SchedulerConfig& cfg,
                                 int guard_ms, int packet_bytes) {
  const double toa_ms = time_on_air_ms(cfg.radio(sf), packet_bytes);
  const long long min_slots =
      (long long)std::ceil((toa_ms / cfg.duty_cycle) / (toa_ms + 2.0 * guard_ms));
  return std::max(state.count(sf), min_slots);
}

struct FrameStructure {
  int sf = 7;
  int packet_bytes = 0;  // total length including the MAC header
  int guard_ms = 0;
  long long slots = 0;   // uplink slots per frame
  double slot_ms = 0.0;  // T_f + 2 G_f
  std::vector<int> channel_ids;
  int tx_dbm = 14;
  int downlink_slots = 1;    // group-ack slots per channel frame
  int downlink_gap_slots = 0;  // spacing between channel downlink phases

  int num_channels() const { return int(channel_ids.size()); }
  double toa_ms() const { return slot_ms - 2.0 * guard_ms; }

  // Frame layout in slot units. Channel k starts k slots late; the group-ack
  // phases follow the last uplink, one phase per channel, spaced so one
  // phase's silent period cannot swallow the next.
  long long uplink_slot_index(int channel_index, long long slot) const {
    return channel_index + slot;
  }
  long long downlink_slot_index(int channel_index, int packet) const {
    return (num_channels() - 1) + slots +
           channel_index * (long long)(downlink_slots + downlink_gap_slots) + packet;
  }
  long long frame_period_slots() const {
    return downlink_slot_index(num_channels() - 1, downlink_slots - 1) + 1;
  }
  double frame_ms() const { return double(frame_period_slots()) * slot_ms; }
};

// How many bitmap packets the downlink phase needs for `slots` acks.
inline int ack_packets_for(long long slots, int max_packet_bytes) {
  const long long bytes = 2 + (slots + 7) / 8;  // frame index + bitmap
  return int((bytes + max_packet_bytes - 1) / max_packet_bytes);
}

// Stage-2 output: one frame structure per populated SF.
inline std::vector<FrameStructure> build_frame_structures(const SchedulerState& state,
                                                          const SchedulerConfig& cfg,
                                                          const LinkBudget& budget) {
  std::vector<FrameStructure> frames;
  for (int sf = kSfMin; sf <= kSfMax; ++sf) {
    if (state.count(sf) == 0) continue;
    FrameStructure f;
    f.sf = sf;
    f.packet_bytes = optimal_packet_length(state.max_size(sf), sf, cfg, budget);
    f.guard_ms = guard_time_ms(sf, state, cfg, f.packet_bytes);
    f.slots = slots_per_frame(sf, state, cfg, f.guard_ms, f.packet_bytes);
    f.slot_ms = time_on_air_ms(cfg.radio(sf), f.packet_bytes) + 2.0 * f.guard_ms;
    const auto plan = channel_power_plan(sf);
    f.channel_ids = plan.channels;
    f.tx_dbm = plan.tx_dbm;
    f.downlink_slots = ack_packets_for(f.slots, cfg.max_packet_bytes);
    if (f.channel_ids.size() > 1) {
      const int bm_bytes =
          int(std::min<long long>(cfg.max_packet_bytes, 2 + (f.slots + 7) / 8));
      const double bm_toa = time_on_air_ms(cfg.radio(sf), bm_bytes);
      // the 10 % downlink channel silences 9 T after each ack packet
      f.downlink_gap_slots = int(std::ceil(9.0 * bm_toa / f.slot_ms));
    }
    frames.push_back(f);
  }
  return frames;
}

}  // namespace lorabulk::sched
