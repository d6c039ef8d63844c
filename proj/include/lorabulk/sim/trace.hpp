#pragma once

// Line-delimited event log and the independent auditor that replays it.
// One TX record per transmission (device or gateway), one RX record per
// listening interval, one DEV summary per device. The auditor re-derives
// duty-cycle compliance, scheduled-uplink overlap freedom, per-device byte
// conservation and the energy integral without touching engine state.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lorabulk/sim/channel.hpp"

namespace lorabulk::sim {

struct TraceRecord {
  char type = 'T';          // 'T' tx, 'R' rx, 'D' device summary
  double t_s = 0.0;         // start time
  double dur_s = 0.0;
  int actor = 0;            // device id, or -1 for the gateway
  int channel = 0;
  int sf = 0;
  int power_dbm = 0;
  std::string kind;         // join|accept|fsettings|data|ack|bitmap|listen
  std::string outcome;      // ok|collision|lost|noack|rejected|...
  long long a = 0, b = 0, c = 0;  // kind-specific (frame/slot/bytes, goals)
};

class TraceWriter {
 public:
  explicit TraceWriter(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw std::runtime_error("cannot open trace file: " + path);
    }
  }
  bool enabled() const { return out_.is_open(); }

  void write(const TraceRecord& r) {
    if (!enabled()) return;
    char line[256];
    std::snprintf(line, sizeof line, "%c %.9f %.9f %d %d %d %d %s %s %lld %lld %lld", r.type,
                  r.t_s, r.dur_s, r.actor, r.channel, r.sf, r.power_dbm, r.kind.c_str(),
                  r.outcome.c_str(), r.a, r.b, r.c);
    out_ << line << '\n';
  }

  void header(const std::string& k, const std::string& v) {
    if (enabled()) out_ << "# " << k << " " << v << '\n';
  }

 private:
  std::ofstream out_;
};

struct AuditResult {
  long long duty_violations = 0;
  long long scheduled_overlaps = 0;   // same-channel same-SF scheduled uplinks
  long long conservation_failures = 0;
  long long records = 0;
  double energy_j = 0.0;
  std::vector<std::string> problems;

  bool ok() const {
    return duty_violations == 0 && scheduled_overlaps == 0 && conservation_failures == 0;
  }
};

inline AuditResult audit_trace(std::istream& in, double tx_draw_w = 0.132,
                               double rx_draw_w = 0.048) {
  AuditResult res;
  std::vector<TraceRecord> tx_records;
  struct Sched { double t, end; int actor, channel, sf; };
  std::vector<Sched> scheduled;

  std::string line;
  bool free_scheme = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.find("scheme free") != std::string::npos) free_scheme = true;
      continue;
    }
    std::istringstream is(line);
    TraceRecord r;
    is >> r.type >> r.t_s >> r.dur_s >> r.actor >> r.channel >> r.sf >> r.power_dbm >> r.kind >>
        r.outcome >> r.a >> r.b >> r.c;
    if (!is) continue;
    res.records++;

    if (r.type == 'T') {
      res.energy_j += r.actor >= 0 ? r.dur_s * tx_draw_w : 0.0;
      tx_records.push_back(r);
      if (free_scheme && r.kind == "data" && r.actor >= 0)
        scheduled.push_back({r.t_s, r.t_s + r.dur_s, r.actor, r.channel, r.sf});
    } else if (r.type == 'R') {
      res.energy_j += r.dur_s * rx_draw_w;
    } else if (r.type == 'D') {
      // a=goal, b=delivered, c=dropped/failed, channel field carries the
      // never-attempted bytes.
      if (r.a != r.b + r.c + r.channel) {
        res.conservation_failures++;
        if (res.problems.size() < 20)
          res.problems.push_back("conservation: device " + std::to_string(r.actor));
      }
    }
  }

  // Records are logged at transmission end; order by start before replaying
  // the silent-period rule.
  std::stable_sort(tx_records.begin(), tx_records.end(),
                   [](const TraceRecord& x, const TraceRecord& y) { return x.t_s < y.t_s; });
  std::map<std::pair<int, int>, double> clear_at;  // (actor, channel) -> earliest next start
  for (const auto& r : tx_records) {
    auto key = std::make_pair(r.actor, r.channel);
    auto it = clear_at.find(key);
    if (it != clear_at.end() && r.t_s < it->second - 1e-9) {
      res.duty_violations++;
      if (res.problems.size() < 20) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "duty violation: actor %d ch %d at %.6f (clear %.6f)",
                      r.actor, r.channel, r.t_s, it->second);
        res.problems.push_back(msg);
      }
    }
    const double factor = 1.0 / channel_duty(r.channel);
    clear_at[key] = r.t_s + factor * r.dur_s;
  }

  // Scheduled same-SF uplinks must never overlap on a channel.
  std::sort(scheduled.begin(), scheduled.end(),
            [](const Sched& x, const Sched& y) { return x.t < y.t; });
  std::map<std::pair<int, int>, Sched> last;  // (channel, sf) -> latest
  for (const auto& s : scheduled) {
    auto key = std::make_pair(s.channel, s.sf);
    auto it = last.find(key);
    if (it != last.end() && s.t < it->second.end - 1e-9) {
      res.scheduled_overlaps++;
      if (res.problems.size() < 20) {
        char msg[160];
        std::snprintf(msg, sizeof msg, "overlap: ch %d sf %d dev %d/%d at %.6f", s.channel, s.sf,
                      it->second.actor, s.actor, s.t);
        res.problems.push_back(msg);
      }
    }
    if (it == last.end() || s.end > it->second.end) last[key] = s;
  }
  return res;
}

}  // namespace lorabulk::sim
