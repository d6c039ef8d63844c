#pragma once

// Channel set and regulatory duty-cycle accounting. Channels 1..3 are the
// 1 % uplink/downlink channels, channel 4 the 10 % downlink-only one. A
// transmission of length T imposes a silent period of (1/d - 1)*T on that
// channel for that transmitter; the boundary instant itself is allowed.

#include <algorithm>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lorabulk/phy.hpp"

namespace lorabulk::sim {

inline constexpr int kUplinkChannels = 3;
inline constexpr int kDownlinkChannel = 4;

inline double channel_duty(int channel) {
  if (channel >= 1 && channel <= kUplinkChannels) return 0.01;
  if (channel == kDownlinkChannel) return 0.10;
  throw std::invalid_argument("unknown channel");
}

class DutyCycleTracker {
 public:
  // True and consumes budget when `transmitter` may start a transmission of
  // `duration_s` on `channel` at `now_s`; false (consuming nothing) while
  // still silenced.
  bool try_consume(int transmitter, int channel, double duration_s, double now_s) {
    if (duration_s <= 0) throw std::invalid_argument("duration must be positive");
    if (!allowed(transmitter, channel, now_s)) return false;
    const double factor = 1.0 / channel_duty(channel) - 1.0;
    silenced_until_[{transmitter, channel}] = now_s + duration_s + factor * duration_s;
    return true;
  }

  bool allowed(int transmitter, int channel, double now_s) const {
    auto it = silenced_until_.find({transmitter, channel});
    return it == silenced_until_.end() || now_s >= it->second - 1e-12;
  }

  double silenced_until(int transmitter, int channel) const {
    auto it = silenced_until_.find({transmitter, channel});
    return it == silenced_until_.end() ? 0.0 : it->second;
  }

 private:
  std::map<std::pair<int, int>, double> silenced_until_;
};

// Gateway reception pipeline over a set of overlapping transmissions:
// demodulator admission in arrival order (latest rejected first beyond the
// concurrency cap), then per-channel interference pruning against every
// overlapper admitted or not, then the sensitivity floor. The caller applies
// the per-packet error draw to what comes back.
inline std::vector<TransmissionEvent> gateway_admit(std::vector<TransmissionEvent> arrivals,
                                                    const LinkBudget& budget,
                                                    int bandwidth_hz = 500000,
                                                    int max_concurrent = 8) {
  std::stable_sort(arrivals.begin(), arrivals.end(),
                   [](const TransmissionEvent& a, const TransmissionEvent& b) {
                     return a.start_ms != b.start_ms ? a.start_ms < b.start_ms : a.id < b.id;
                   });
  std::vector<TransmissionEvent> admitted(
      arrivals.begin(),
      arrivals.begin() + std::min<std::size_t>(arrivals.size(), std::size_t(max_concurrent)));

  std::vector<TransmissionEvent> received;
  for (const auto& e : admitted) {
    bool ok = true;
    for (const auto& other : arrivals) {  // rejected signals still radiate
      if (other.id == e.id || other.channel != e.channel) continue;
      if (!survives_interferer(e, other, budget)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      const auto params = make_radio_params(e.sf, bandwidth_hz);
      if (e.rssi_dbm < receiver_sensitivity_dbm(params, budget)) ok = false;
    }
    if (ok) received.push_back(e);
  }
  return received;
}

}  // namespace lorabulk::sim
