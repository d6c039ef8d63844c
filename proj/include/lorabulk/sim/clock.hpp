#pragma once

// Device clock model: offset set at each synchronization event, linear skew
// of fixed rate and per-device sign in between. Accumulated drift is capped
// at the current cap (the guard, once a schedule is known) so that modeled
// skew stays bounded by the guard, which is the regime the frame design
// guarantees collision-freedom for.

#include <algorithm>
#include <cmath>

namespace lorabulk::sim {

struct DeviceClock {
  double offset_s = 0.0;     // device time minus true time at the sync point
  double skew = 0.0;         // signed rate, e.g. +-15e-6
  double sync_true_s = 0.0;  // when the offset was last set
  double drift_cap_s = 1e9;  // bound on |accumulated drift| since sync

  double drift(double true_s) const {
    const double d = skew * (true_s - sync_true_s);
    return std::clamp(d, -drift_cap_s, drift_cap_s);
  }
  double device_time(double true_s) const { return true_s + offset_s + drift(true_s); }

  // True instant at which this clock shows dev_s.
  double true_time_for(double dev_s) const {
    const double linear = (dev_s - offset_s + skew * sync_true_s) / (1.0 + skew);
    if (std::abs(skew * (linear - sync_true_s)) <= drift_cap_s) return linear;
    const double capped = skew > 0 ? drift_cap_s : -drift_cap_s;
    return dev_s - offset_s - capped;
  }

  void sync(double true_s, double new_offset_s) {
    offset_s = new_offset_s;
    sync_true_s = true_s;
  }
};

}  // namespace lorabulk::sim
