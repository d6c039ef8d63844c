#pragma once

// Run-level metrics. DDR counts gateway-received payload bytes for
// unconfirmed traffic and device-confirmed (acknowledged) bytes for
// confirmed traffic, over the sum of goal buffers of all deployed devices.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lorabulk/phy.hpp"

namespace lorabulk::sim {

inline constexpr double kLifetimeSentinelYears = 50.0;
inline constexpr double kHoursPerYear = 8766.0;

struct DeviceEnergy {
  double tx_s = 0.0;
  double rx_s = 0.0;
  double tx_j = 0.0;
  double rx_j = 0.0;
  double total_j() const { return tx_j + rx_j; }
};

struct MetricsReport {
  double ddr = 0.0;
  double total_energy_j = 0.0;
  double total_tx_j = 0.0;
  double total_rx_j = 0.0;
  double mean_lifetime_years = 0.0;
  double collection_time_s = 0.0;       // stage 1 start to last activity
  double airtime_efficiency = 0.0;      // scheduled schemes only
  bool airtime_efficiency_valid = false;

  long long uplink_transmissions = 0;   // data + join transmissions
  long long data_transmissions = 0;
  long long collisions = 0;             // destroyed by interference
  long long lost_uplink = 0;            // below sensitivity or PER
  long long lost_downlink = 0;          // accept/ack/bitmap lost at the device
  long long no_ack = 0;                 // received but unacknowledgeable (duty cycle)
  long long no_join_accept = 0;         // join received, no window available
  long long rejected_joins = 0;         // out of range
  long long admission_rejected = 0;     // demodulator pool exhausted
  long long join_requests = 0;
  long long join_accepts = 0;
  long long devices_joined = 0;
  long long dropped_packets = 0;

  long long goal_bytes = 0;
  long long delivered_bytes = 0;
  long long dropped_bytes = 0;
  long long unattempted_bytes = 0;

  double join_tx_per_device = 0.0;
  double energy_audit_j = 0.0;          // independent recomputation from the log

  std::vector<double> device_lifetime_years;
};

// Battery years at the average power implied by `energy_j` spent over
// `span_s`. Devices that consumed nothing report the sentinel.
inline double lifetime_years(double energy_j, double span_s, const EnergyProfile& profile) {
  if (span_s <= 0) throw std::invalid_argument("zero simulated span");
  const double avg_w = energy_j / span_s;
  if (avg_w <= 0) return kLifetimeSentinelYears;
  const double hours = profile.battery_j() / avg_w / 3600.0;
  return std::min(kLifetimeSentinelYears, hours / kHoursPerYear);
}

// Ideal collection time (all transmit time packed onto the eight
// demodulators) relative to the achieved span.
inline double air_time_efficiency(double data_airtime_s, double collection_span_s) {
  if (collection_span_s <= 0) throw std::invalid_argument("empty collection span");
  return (data_airtime_s / 8.0) / collection_span_s;
}

}  // namespace lorabulk::sim
