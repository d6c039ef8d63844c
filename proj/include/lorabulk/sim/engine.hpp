#pragma once

// Seeded discrete-event simulation of one data-collection cycle under the
// scheduled scheme or the two Aloha baselines. A run is single-threaded and
// deterministic for a fixed (config, seed); independent runs share nothing.
//
// Reception pipeline per uplink, in order: demodulator admission (8
// concurrent), interference pruning against every same-channel overlapper,
// sensitivity check, then a Bernoulli packet-error draw at the measured SNR.
// The gateway has one transmit chain, may receive while transmitting except
// on the channel it is transmitting on, and obeys per-channel duty cycles.

#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "lorabulk/fsm.hpp"
#include "lorabulk/phy.hpp"
#include "lorabulk/protocol.hpp"
#include "lorabulk/scheduler.hpp"
#include "lorabulk/sim/channel.hpp"
#include "lorabulk/sim/clock.hpp"
#include "lorabulk/sim/metrics.hpp"
#include "lorabulk/sim/scenario.hpp"
#include "lorabulk/sim/trace.hpp"

namespace lorabulk::sim {

class Simulator {
 public:
  explicit Simulator(const ScenarioConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed), trace_(cfg.trace_path) {
    cfg_.validate();
  }

  MetricsReport run() {
    setup();
    while (!queue_.empty()) {
      const Event ev = queue_.top();
      queue_.pop();
      now_ = ev.t;
      if (now_ > hard_stop_s_) break;
      dispatch(ev);
    }
    return finalize();
  }

 private:
  enum class EvKind : std::uint8_t {
    AppArrival,
    AlohaAttempt,
    UplinkEnd,
    DownlinkTry1,
    DownlinkTry2,
    DownlinkEnd,
    JoinAttempt,
    JoinGiveUp,
    Stage1End,
    FSettingsTick,
    Stage2Wake,
    Stage2GiveUp,
    SlotTx,      // a: device, b: pipe, c: frame
    BitmapSlot,  // a: fs idx, b: chan idx, c: frame * 16 + packet j
    AckClose,    // a: device, b: pipe, c: frame
  };

  struct Event {
    double t = 0.0;
    int prio = 0;
    std::uint64_t seq = 0;
    EvKind kind = EvKind::Stage1End;
    int a = 0;
    int b = 0;
    long long c = 0;
  };
  struct EventLater {
    bool operator()(const Event& x, const Event& y) const {
      if (x.t != y.t) return x.t > y.t;
      if (x.prio != y.prio) return x.prio > y.prio;
      return x.seq > y.seq;
    }
  };

  void push(double t, EvKind k, int a = 0, int b = 0, long long c = 0, int prio = 0) {
    queue_.push(Event{t, prio, seq_++, k, a, b, c});
  }

  enum class UlKind : std::uint8_t { Join, Data };

  struct Uplink {
    int dev = -1;
    UlKind kind = UlKind::Data;
    int channel = 1;
    int sf = 7;
    int power_dbm = 14;
    double rssi_dbm = 0.0;
    double start = 0.0, end = 0.0;
    int total_bytes = 0;
    int payload_bytes = 0;
    long long frame = -1;
    long long slot = -1;
    int pipe = 0;
    bool admitted = true;
    bool interfered = false;
    bool gw_blinded = false;
  };

  enum class DlKind : std::uint8_t { JoinAccept, Ack, FSettings, Bitmap };

  struct Downlink {
    DlKind kind = DlKind::Ack;
    int target = -1;
    int channel = kDownlinkChannel;
    int sf = 12;
    int bandwidth_hz = 125000;
    double start = 0.0, end = 0.0;
    int bytes = 0;
    int pend = -1;    // PendingDl index for accepts/acks
    int fs_idx = -1;  // bitmap routing
    int chan_idx = 0;
    long long frame = -1;
    long long slot_lo = 0, slot_hi = 0;
    proto::DCSettings dc;
    proto::AckBitmap bitmap;
  };

  struct PendingDl {
    DlKind kind = DlKind::Ack;
    int dev = -1;
    int bytes = 0;
    int up_channel = 1;
    int up_sf = 7;
    double up_end = 0.0;
    proto::DCSettings dc;
  };

  struct Dev {
    PlacedDevice place;
    DeviceClock clock;
    int min_sf = 7;
    long long goal = 0;
    bool out_of_range = false;

    // aloha service
    std::deque<std::pair<long long, int>> queue;  // (seq, payload)
    std::optional<std::pair<long long, int>> current;
    int attempts = 0;
    int data_channel = 1;  // fixed per device, LoRaSim convention

    // free
    proto::DeviceFsm fsm;
    bool join_pending = false;
    bool rejected = false;
    int fs_idx = -1;
    double round_start_dev = 0.0;
    double stage2_listen_from = -1.0;
    bool got_fsettings = false;
    bool counted_active = false;

    long long next_seq = 0;
    DeviceEnergy energy;
    long long delivered_unconf = 0;
    long long sent_bytes = 0;
    long long join_tx = 0;
  };

  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
  TraceWriter trace_;
  std::priority_queue<Event, std::vector<Event>, EventLater> queue_;
  std::uint64_t seq_ = 0;
  double now_ = 0.0;
  double hard_stop_s_ = 0.0;

  std::vector<Dev> devs_;
  std::vector<Uplink> uplinks_;
  std::vector<Downlink> downlinks_;
  std::vector<PendingDl> pending_;
  std::vector<int> active_by_channel_[kDownlinkChannel + 1];
  int gw_active_dl_[kDownlinkChannel + 1] = {};
  int admitted_count_ = 0;
  DutyCycleTracker duty_;
  double gw_tx_busy_until_ = 0.0;

  proto::GatewayFsm gateway_;
  std::vector<sched::FrameStructure> frames_;
  std::vector<long long> sf_active_devices_;
  std::map<std::tuple<int, int, long long>, std::vector<std::pair<int, int>>> bitmap_listeners_;
  std::map<std::pair<int, int>, std::pair<long long, proto::AckBitmap>> frame_bitmap_cache_;
  std::set<std::tuple<int, int, long long>> ack_handled_;

  MetricsReport m_;
  double last_activity_s_ = 0.0;
  double last_data_end_s_ = 0.0;
  double data_airtime_s_ = 0.0;
  double round_start_s_ = 0.0;

  static constexpr int kGw = -1;
  static constexpr long long kBitsPerAckPacket = 2024;  // (255 - 2) * 8

  double u(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng_);
  }
  int uch() {
    std::uniform_int_distribution<int> d(1, kUplinkChannels);
    return d(rng_);
  }
  bool bernoulli(double p) {
    if (p <= 0) return false;
    if (p >= 1) return true;
    return u(0.0, 1.0) < p;
  }

  double toa_s(int sf, int bytes) const { return time_on_air_ms(cfg_.radio(sf), bytes) / 1000.0; }
  double preamble_s(const RadioParams& p) const {
    return (p.preamble_symbols + 4.25) * p.symbol_ms() / 1000.0;
  }
  // Empty receive window: the radio idles for the symbol timeout and sleeps.
  double window_timeout_s(const RadioParams& p) const { return 8.0 * p.symbol_ms() / 1000.0; }
  double sens(int sf) const { return receiver_sensitivity_dbm(cfg_.radio(sf), cfg_.budget); }
  bool confirmed() const { return cfg_.traffic == Traffic::Confirmed; }

  // ---- setup ---------------------------------------------------------------

  void setup() {
    hard_stop_s_ = cfg_.period_s() + 30 * 86400.0;
    const auto placed = place_devices(cfg_, rng_);
    devs_.resize(placed.size());

    gateway_.cfg = cfg_.scheduler_config();
    gateway_.budget = cfg_.budget;
    trace_.header("scheme", cfg_.scheme == Scheme::Free      ? "free"
                            : cfg_.scheme == Scheme::Delayed ? "delayed"
                                                             : "legacy");

    for (std::size_t i = 0; i < devs_.size(); ++i) {
      Dev& d = devs_[i];
      d.place = placed[i];
      d.clock.offset_s = u(-0.5, 0.5);
      d.clock.skew = bernoulli(0.5) ? cfg_.skew_rate : -cfg_.skew_rate;
      d.fsm.id = int(i);
      d.fsm.confirmed = confirmed();
      d.fsm.header_bytes = cfg_.data_header_bytes();
      d.fsm.max_attempts = cfg_.max_attempts;
      d.data_channel = uch();
      try {
        d.min_sf = sched::min_spreading_factor(d.place.rssi_at(cfg_.tx_dbm_max, cfg_.path_loss),
                                               cfg_.budget, gateway_.cfg);
      } catch (const std::domain_error&) {
        d.out_of_range = true;
        m_.rejected_joins++;
      }

      switch (cfg_.scheme) {
        case Scheme::Legacy:
          push(next_arrival(0.0), EvKind::AppArrival, int(i));
          break;
        case Scheme::Delayed:
          d.goal = cfg_.goal_buffer_bytes();
          d.fsm.goal_bytes = d.goal;
          if (!d.out_of_range) {
            stage_delayed_queue(d);
            push(u(0.0, cfg_.delayed_offset_max_ms / 1000.0), EvKind::AlohaAttempt, int(i));
          }
          break;
        case Scheme::Free:
          d.goal = cfg_.goal_buffer_bytes();
          d.fsm.goal_bytes = d.goal;
          if (!d.out_of_range) push(u(0.0, cfg_.join_backoff_base_s), EvKind::JoinAttempt, int(i));
          break;
      }
      m_.goal_bytes += d.goal;
    }
    if (cfg_.scheme == Scheme::Free) push(cfg_.stage1_s, EvKind::Stage1End);
  }

  double next_arrival(double from) {
    std::exponential_distribution<double> e(1.0 / cfg_.app_interval_mean_s);
    return from + e(rng_);
  }

  void stage_delayed_queue(Dev& d) {
    auto sc = cfg_.scheduler_config();
    sc.mac_header_bytes = cfg_.lorawan_header_bytes;
    const int l = sched::optimal_packet_length(d.goal, d.min_sf, sc, cfg_.budget);
    long long rest = d.goal;
    while (rest > 0) {
      const int payload = int(std::min<long long>(l - cfg_.lorawan_header_bytes, rest));
      d.queue.emplace_back(d.next_seq++, payload);
      rest -= payload;
    }
  }

  // ---- radio ----------------------------------------------------------------

  int start_uplink(int dev, UlKind kind, int channel, int sf, int power_dbm, int total_bytes,
                   int payload_bytes, long long frame = -1, long long slot = -1, int pipe = 0) {
    Uplink up;
    up.dev = dev;
    up.kind = kind;
    up.channel = channel;
    up.sf = sf;
    up.power_dbm = power_dbm;
    up.rssi_dbm = devs_[dev].place.rssi_at(power_dbm, cfg_.path_loss);
    up.start = now_;
    up.end = now_ + toa_s(sf, total_bytes);
    up.total_bytes = total_bytes;
    up.payload_bytes = payload_bytes;
    up.frame = frame;
    up.slot = slot;
    up.pipe = pipe;

    if (admitted_count_ >= 8) {
      up.admitted = false;
      m_.admission_rejected++;
    } else {
      admitted_count_++;
    }
    if (gw_active_dl_[channel] > 0) up.gw_blinded = true;
    const int id = int(uplinks_.size());
    for (int idx : active_by_channel_[channel]) {
      Uplink& other = uplinks_[idx];
      TransmissionEvent a, b;
      a.sf = up.sf;
      a.rssi_dbm = up.rssi_dbm;
      b.sf = other.sf;
      b.rssi_dbm = other.rssi_dbm;
      if (!survives_interferer(a, b, cfg_.budget)) up.interfered = true;
      if (!survives_interferer(b, a, cfg_.budget)) other.interfered = true;
    }
    uplinks_.push_back(up);
    active_by_channel_[channel].push_back(id);
    push(up.end, EvKind::UplinkEnd, id);

    Dev& d = devs_[dev];
    const double dur = up.end - up.start;
    d.energy.tx_s += dur;
    d.energy.tx_j += dur * cfg_.energy.tx_draw_w(power_dbm);
    m_.uplink_transmissions++;
    if (kind == UlKind::Data) {
      m_.data_transmissions++;
      data_airtime_s_ += dur;
      last_data_end_s_ = std::max(last_data_end_s_, up.end);
    } else {
      d.join_tx++;
      m_.join_requests++;
    }
    last_activity_s_ = std::max(last_activity_s_, up.end);
    return id;
  }

  void trace_uplink(const Uplink& up, const char* outcome) {
    if (!trace_.enabled()) return;
    TraceRecord r;
    r.type = 'T';
    r.t_s = up.start;
    r.dur_s = up.end - up.start;
    r.actor = up.dev;
    r.channel = up.channel;
    r.sf = up.sf;
    r.power_dbm = up.power_dbm;
    r.kind = up.kind == UlKind::Join ? "join" : "data";
    r.outcome = outcome;
    r.a = up.frame;
    r.b = up.slot;
    r.c = up.payload_bytes;
    trace_.write(r);
  }

  int start_downlink(Downlink dl) {
    dl.start = now_;
    const auto params = make_radio_params(dl.sf, dl.bandwidth_hz, cfg_.coding_rate_denominator);
    dl.end = now_ + time_on_air_ms(params, dl.bytes) / 1000.0;
    gw_tx_busy_until_ = dl.end;
    gw_active_dl_[dl.channel]++;
    for (int idx : active_by_channel_[dl.channel]) uplinks_[idx].gw_blinded = true;
    const int id = int(downlinks_.size());
    downlinks_.push_back(dl);
    push(dl.end, EvKind::DownlinkEnd, id);
    last_activity_s_ = std::max(last_activity_s_, dl.end);
    if (trace_.enabled()) {
      TraceRecord r;
      r.type = 'T';
      r.t_s = dl.start;
      r.dur_s = dl.end - dl.start;
      r.actor = kGw;
      r.channel = dl.channel;
      r.sf = dl.sf;
      r.power_dbm = cfg_.tx_dbm_max;
      r.kind = dl.kind == DlKind::JoinAccept  ? "accept"
               : dl.kind == DlKind::Ack       ? "ack"
               : dl.kind == DlKind::FSettings ? "fsettings"
                                              : "bitmap";
      r.outcome = "sent";
      r.a = dl.target;
      r.b = dl.frame;
      r.c = dl.bytes;
      trace_.write(r);
    }
    return id;
  }

  bool device_receives(const Dev& d, const Downlink& dl) {
    const auto params = make_radio_params(dl.sf, dl.bandwidth_hz, cfg_.coding_rate_denominator);
    const double rssi = d.place.rssi_at(cfg_.tx_dbm_max, cfg_.path_loss);
    if (rssi < receiver_sensitivity_dbm(params, cfg_.budget)) return false;
    const double snr = rssi - noise_floor_dbm(dl.bandwidth_hz, cfg_.budget);
    return !bernoulli(packet_error_rate_at_snr(snr, params, dl.bytes));
  }

  void add_rx(Dev& d, double dur_s, const char* what) {
    d.energy.rx_s += dur_s;
    d.energy.rx_j += dur_s * cfg_.energy.rx_draw_w();
    if (trace_.enabled()) {
      TraceRecord r;
      r.type = 'R';
      r.t_s = now_;
      r.dur_s = dur_s;
      r.actor = d.fsm.id;
      r.kind = "listen";
      r.outcome = what;
      trace_.write(r);
    }
  }

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case EvKind::AppArrival: on_app_arrival(ev.a); break;
      case EvKind::AlohaAttempt: on_aloha_attempt(ev.a); break;
      case EvKind::UplinkEnd: on_uplink_end(ev.a); break;
      case EvKind::DownlinkTry1: on_downlink_try(ev.a, 1); break;
      case EvKind::DownlinkTry2: on_downlink_try(ev.a, 2); break;
      case EvKind::DownlinkEnd: on_downlink_end(ev.a); break;
      case EvKind::JoinAttempt: on_join_attempt(ev.a); break;
      case EvKind::JoinGiveUp: on_join_giveup(ev.a); break;
      case EvKind::Stage1End: on_stage1_end(); break;
      case EvKind::FSettingsTick: on_fsettings_tick(); break;
      case EvKind::Stage2Wake: on_stage2_wake(ev.a); break;
      case EvKind::Stage2GiveUp: on_stage2_giveup(ev.a); break;
      case EvKind::SlotTx: on_slot_tx(ev.a, ev.b, ev.c); break;
      case EvKind::BitmapSlot: on_bitmap_slot(ev.a, ev.b, ev.c); break;
      case EvKind::AckClose: on_ack_close(ev.a, ev.b, ev.c); break;
    }
  }

  // ---- aloha ------------------------------------------------------------------

  void on_app_arrival(int di) {
    if (now_ >= cfg_.period_s()) return;
    Dev& d = devs_[di];
    const int payload = int(cfg_.app_payload_bytes);
    d.goal += payload;
    d.fsm.goal_bytes = d.goal;
    m_.goal_bytes += payload;
    d.queue.emplace_back(d.next_seq++, payload);
    if (!d.out_of_range && !d.current) push(now_, EvKind::AlohaAttempt, di);
    push(next_arrival(now_), EvKind::AppArrival, di);
  }

  void on_aloha_attempt(int di) {
    Dev& d = devs_[di];
    if (d.current && confirmed() && d.attempts >= cfg_.max_attempts) {
      drop_aloha_packet(d, di);
      return;
    }
    if (!d.current) {
      if (d.queue.empty()) return;
      d.current = d.queue.front();
      d.queue.pop_front();
      d.attempts = 0;
    }
    const int channel = d.data_channel;
    const int total = d.current->second + cfg_.lorawan_header_bytes;
    const double dur = toa_s(d.min_sf, total);
    if (!duty_.try_consume(di, channel, dur, now_)) {
      push(duty_.silenced_until(di, channel), EvKind::AlohaAttempt, di);
      return;
    }
    d.attempts++;
    start_uplink(di, UlKind::Data, channel, d.min_sf, cfg_.tx_dbm_max, total, d.current->second);
  }

  void advance_aloha(Dev& d, int di) {
    d.current.reset();
    if (!d.queue.empty()) push(now_ + 1e-3, EvKind::AlohaAttempt, di);
  }

  void complete_aloha_packet(Dev& d, int di) {  // confirmed, acknowledged
    d.fsm.acked_bytes += d.current->second;
    advance_aloha(d, di);
  }

  void drop_aloha_packet(Dev& d, int di) {  // confirmed, attempts exhausted
    d.fsm.dropped_bytes += d.current->second;
    m_.dropped_packets++;
    advance_aloha(d, di);
  }

  // ---- uplink resolution --------------------------------------------------------

  void on_uplink_end(int ui) {
    const Uplink up = uplinks_[ui];
    auto& act = active_by_channel_[up.channel];
    act.erase(std::find(act.begin(), act.end(), ui));
    if (up.admitted) admitted_count_--;

    const char* outcome = "ok";
    bool received = false;
    if (!up.admitted) {
      outcome = "rejected";
    } else if (up.interfered || up.gw_blinded) {
      outcome = "collision";
      m_.collisions++;
    } else if (up.rssi_dbm < sens(up.sf)) {
      outcome = "lost";
      m_.lost_uplink++;
    } else {
      const double snr = up.rssi_dbm - noise_floor_dbm(cfg_.bandwidth_hz, cfg_.budget);
      if (bernoulli(packet_error_rate_at_snr(snr, cfg_.radio(up.sf), up.total_bytes))) {
        outcome = "lost";
        m_.lost_uplink++;
      } else {
        received = true;
      }
    }
    trace_uplink(up, received ? "ok" : outcome);

    if (up.kind == UlKind::Join) {
      on_join_result(up, received);
      return;
    }

    Dev& d = devs_[up.dev];
    if (!confirmed()) {
      // every unconfirmed packet is transmitted exactly once; the scheduled
      // scheme accounts sent bytes at slot time
      if (cfg_.scheme != Scheme::Free) d.sent_bytes += up.payload_bytes;
      if (received) d.delivered_unconf += up.payload_bytes;
    }

    if (cfg_.scheme == Scheme::Free) {
      if (received) gateway_.record_reception(up.sf, up.channel, up.frame, up.slot);
      proto::device_step(d.fsm, proto::EvTxComplete{std::size_t(up.pipe)});
      if (d.fsm.state == proto::DeviceState::Done) on_device_done(up.dev);
      return;
    }

    // aloha
    if (!confirmed()) {
      charge_empty_windows(d, up.sf);  // Class-A windows stay open regardless
      advance_aloha(d, up.dev);
      return;
    }
    if (received) {
      PendingDl p;
      p.kind = DlKind::Ack;
      p.dev = up.dev;
      p.bytes = cfg_.lorawan_header_bytes;  // empty MAC frame
      p.up_channel = up.channel;
      p.up_sf = up.sf;
      p.up_end = up.end;
      pending_.push_back(p);
      push(up.end + cfg_.rx1_delay_s, EvKind::DownlinkTry1, int(pending_.size() - 1));
    } else {
      charge_empty_windows(d, up.sf);
      schedule_retry(up.dev, up.end);
    }
  }

  void charge_empty_windows(Dev& d, int up_sf) {
    add_rx(d, window_timeout_s(cfg_.radio(cfg_.rx1_sf(up_sf))), "rx1");
    add_rx(d, window_timeout_s(cfg_.rx2_radio()), "rx2");
  }

  void schedule_retry(int di, double up_end) {
    const double rx2_close = up_end + cfg_.rx2_delay_s + window_timeout_s(cfg_.rx2_radio());
    push(rx2_close + u(cfg_.ack_timeout_mean_s - 1.0, cfg_.ack_timeout_mean_s + 1.0),
         EvKind::AlohaAttempt, di);
  }

  // ---- gateway receive windows ---------------------------------------------------

  void on_downlink_try(int pi, int window) {
    const PendingDl p = pending_[pi];
    const bool rx1 = window == 1;
    const int channel = rx1 ? p.up_channel : kDownlinkChannel;
    const int sf = rx1 ? cfg_.rx1_sf(p.up_sf) : cfg_.rx2_sf;
    const int bw = rx1 ? cfg_.bandwidth_hz : cfg_.rx2_bandwidth_hz;
    const auto params = make_radio_params(sf, bw, cfg_.coding_rate_denominator);
    const double dur = time_on_air_ms(params, p.bytes) / 1000.0;

    bool can = now_ >= gw_tx_busy_until_ - 1e-12;
    if (can) can = duty_.try_consume(kGw, channel, dur, now_);
    if (can) {
      Downlink dl;
      dl.kind = p.kind;
      dl.target = p.dev;
      dl.channel = channel;
      dl.sf = sf;
      dl.bandwidth_hz = bw;
      dl.bytes = p.bytes;
      dl.pend = pi;
      dl.dc = p.dc;
      start_downlink(dl);
      if (p.kind == DlKind::JoinAccept) m_.join_accepts++;
      return;
    }
    if (rx1) {
      push(p.up_end + cfg_.rx2_delay_s, EvKind::DownlinkTry2, pi);
      return;
    }
    Dev& d = devs_[p.dev];
    charge_empty_windows(d, p.up_sf);
    if (p.kind == DlKind::JoinAccept) {
      m_.no_join_accept++;  // the device's JoinGiveUp retries
    } else {
      m_.no_ack++;
      if (d.attempts >= cfg_.max_attempts)
        drop_aloha_packet(d, p.dev);
      else
        schedule_retry(p.dev, p.up_end);
    }
  }

  void on_downlink_end(int li) {
    const Downlink dl = downlinks_[li];
    gw_active_dl_[dl.channel]--;
    switch (dl.kind) {
      case DlKind::JoinAccept: on_accept_end(dl); break;
      case DlKind::Ack: on_ack_end(dl); break;
      case DlKind::FSettings: on_fsettings_end(dl); break;
      case DlKind::Bitmap: deliver_bitmap(dl); break;
    }
  }

  void charge_window_rx(Dev& d, const Downlink& dl) {
    // rx1 stayed empty when the reply arrived in rx2
    if (dl.channel == kDownlinkChannel && dl.pend >= 0)
      add_rx(d, window_timeout_s(cfg_.radio(cfg_.rx1_sf(pending_[dl.pend].up_sf))), "rx1");
    add_rx(d, dl.end - dl.start, dl.kind == DlKind::JoinAccept ? "accept" : "ack");
  }

  void on_accept_end(const Downlink& dl) {
    Dev& d = devs_[dl.target];
    charge_window_rx(d, dl);
    if (!device_receives(d, dl)) {
      m_.lost_downlink++;
      return;  // JoinGiveUp fires and the device retries
    }
    if (d.fsm.joined) return;  // duplicate accept
    d.join_pending = false;
    proto::device_step(d.fsm, proto::EvJoinAcceptReceived{dl.dc});
    m_.devices_joined++;
    d.clock.sync(now_, u(-0.5, 0.5));
    const double wake_dev = d.clock.device_time(now_) + dl.dc.second_stage - 1.0;
    push(std::max(now_ + 1e-9, d.clock.true_time_for(wake_dev)), EvKind::Stage2Wake, dl.target);
  }

  void on_ack_end(const Downlink& dl) {
    Dev& d = devs_[dl.target];
    charge_window_rx(d, dl);
    if (!d.current) return;
    if (!device_receives(d, dl)) {
      m_.lost_downlink++;
      if (d.attempts >= cfg_.max_attempts)
        drop_aloha_packet(d, dl.target);
      else
        schedule_retry(dl.target, dl.start - cfg_.rx1_delay_s);
      return;
    }
    complete_aloha_packet(d, dl.target);
  }

  // ---- free: joining ---------------------------------------------------------------

  double join_backoff(int attempts) {
    const double cap =
        std::min(cfg_.join_backoff_base_s * std::pow(2.0, attempts), cfg_.join_backoff_cap_s);
    return u(1.0, std::max(1.5, cap));
  }

  void on_join_attempt(int di) {
    Dev& d = devs_[di];
    if (d.fsm.joined || d.rejected) return;
    const double dur = toa_s(d.min_sf, int(proto::JoinRequest::kWireSize));
    if (now_ + dur > cfg_.stage1_s) return;  // missed this collection round
    const int channel = uch();
    if (!duty_.try_consume(di, channel, dur, now_)) {
      push(duty_.silenced_until(di, channel), EvKind::JoinAttempt, di);
      return;
    }
    d.fsm.join_attempts++;
    d.join_pending = true;
    const int id = start_uplink(di, UlKind::Join, channel, d.min_sf, cfg_.tx_dbm_max,
                                int(proto::JoinRequest::kWireSize), 0);
    const double rx2_close =
        uplinks_[id].end + cfg_.rx2_delay_s + window_timeout_s(cfg_.rx2_radio());
    push(rx2_close + 1e-6, EvKind::JoinGiveUp, di);
  }

  void on_join_result(const Uplink& up, bool received) {
    if (!received || now_ > cfg_.stage1_s) return;
    Dev& d = devs_[up.dev];
    proto::JoinRequest req;
    req.dev_eui = std::uint64_t(up.dev);
    req.data_size = std::uint32_t(d.goal);
    req.delay_elasticity = std::uint32_t(cfg_.period_s());
    const auto secs_to_stage2 = std::uint16_t(std::max(0.0, std::ceil(cfg_.stage1_s - now_)));
    const auto out = gateway_.on_join_request(req, up.rssi_dbm, up.dev, secs_to_stage2);
    if (!out.accepted) return;  // out of range: windows stay silent
    PendingDl p;
    p.kind = DlKind::JoinAccept;
    p.dev = up.dev;
    p.bytes = int(proto::JoinAccept::kWireSize);
    p.up_channel = up.channel;
    p.up_sf = up.sf;
    p.up_end = up.end;
    p.dc = out.accept.dc;
    pending_.push_back(p);
    push(up.end + cfg_.rx1_delay_s, EvKind::DownlinkTry1, int(pending_.size() - 1));
  }

  void on_join_giveup(int di) {
    Dev& d = devs_[di];
    if (d.fsm.joined || d.rejected || !d.join_pending) return;
    d.join_pending = false;
    charge_empty_windows(d, d.min_sf);
    proto::device_step(d.fsm, proto::EvJoinWindowsClosed{});
    push(now_ + join_backoff(d.fsm.join_attempts), EvKind::JoinAttempt, di);
  }

  // ---- free: stage 2 ----------------------------------------------------------------

  void on_stage1_end() {
    frames_ = gateway_.close_stage1();
    sf_active_devices_.assign(frames_.size(), 0);
    round_start_s_ = cfg_.stage1_s + cfg_.stage2_s + cfg_.round_lead_s;
    push(now_, EvKind::FSettingsTick);
    for (auto& a : gateway_.alloc.assignments) devs_[a.device].fs_idx = fs_index_for(a.sf);
    if (confirmed()) {
      for (std::size_t fi = 0; fi < frames_.size(); ++fi)
        for (std::size_t k = 0; k < frames_[fi].channel_ids.size(); ++k)
          schedule_bitmap(int(fi), int(k), 0, 0);
    }
  }

  int fs_index_for(int sf) const {
    for (std::size_t i = 0; i < frames_.size(); ++i)
      if (frames_[i].sf == sf) return int(i);
    return -1;
  }

  void on_fsettings_tick() {
    if (now_ >= cfg_.stage1_s + cfg_.stage2_s) return;
    const int bytes = int(proto::FSettings::kWireSize);
    // the schedule broadcast uses the highest SF at the system bandwidth
    const auto params = make_radio_params(12, cfg_.bandwidth_hz, cfg_.coding_rate_denominator);
    const double dur = time_on_air_ms(params, bytes) / 1000.0;
    if (now_ >= gw_tx_busy_until_ - 1e-12 && duty_.try_consume(kGw, kDownlinkChannel, dur, now_)) {
      Downlink dl;
      dl.kind = DlKind::FSettings;
      dl.target = -1;
      dl.channel = kDownlinkChannel;
      dl.sf = 12;
      dl.bandwidth_hz = cfg_.bandwidth_hz;
      dl.bytes = bytes;
      start_downlink(dl);
      push(downlinks_.back().end + (1.0 / channel_duty(kDownlinkChannel) - 1.0) * dur + 1e-6,
           EvKind::FSettingsTick);
    } else {
      push(std::max(gw_tx_busy_until_, duty_.silenced_until(kGw, kDownlinkChannel)) + 1e-6,
           EvKind::FSettingsTick);
    }
  }

  void on_stage2_wake(int di) {
    Dev& d = devs_[di];
    if (!d.fsm.joined || d.got_fsettings) return;
    d.stage2_listen_from = now_;
    push(cfg_.stage1_s + cfg_.stage2_s + 0.5, EvKind::Stage2GiveUp, di);
  }

  void on_stage2_giveup(int di) {
    Dev& d = devs_[di];
    if (d.got_fsettings || d.stage2_listen_from < 0) return;
    add_rx(d, now_ - d.stage2_listen_from, "stage2");
    d.stage2_listen_from = -1.0;  // missed the schedule, sits the round out
  }

  void on_fsettings_end(const Downlink& dl) {
    for (std::size_t i = 0; i < devs_.size(); ++i) {
      Dev& d = devs_[i];
      if (d.stage2_listen_from < 0 || d.got_fsettings) continue;
      if (dl.start < d.stage2_listen_from) continue;
      if (!device_receives(d, dl)) {
        m_.lost_downlink++;
        continue;
      }
      on_fsettings_received(int(i), dl);
    }
  }

  void on_fsettings_received(int di, const Downlink& dl) {
    Dev& d = devs_[di];
    add_rx(d, dl.end - d.stage2_listen_from, "stage2");
    d.got_fsettings = true;
    d.stage2_listen_from = -1.0;
    if (d.fs_idx < 0) return;
    const auto& f = frames_[std::size_t(d.fs_idx)];

    const auto fs = gateway_.make_fsettings(
        std::uint32_t(std::max(0.0, (round_start_s_ - dl.end) * 1000.0)),
        std::uint32_t(cfg_.period_s()));
    proto::device_step(d.fsm, proto::EvFSettingsReceived{fs});
    d.fsm.slot_ms = f.slot_ms;
    d.fsm.pipelines.assign(f.channel_ids.size(), std::nullopt);

    d.clock.sync(dl.end, u(-0.0005, 0.0005));
    d.clock.drift_cap_s = std::max(0.0004, f.guard_ms / 1000.0 - 0.0006);
    d.round_start_dev = d.clock.device_time(dl.end) + fs.data_collection_ms / 1000.0;
    if (confirmed()) {
      sf_active_devices_[std::size_t(d.fs_idx)]++;
      d.counted_active = true;
    }
    for (std::size_t k = 0; k < f.channel_ids.size(); ++k) schedule_slot_tx(di, int(k), 0);
  }

  // ---- free: data rounds ---------------------------------------------------------------

  double slot_start_dev(const Dev& d, const sched::FrameStructure& f, int pipe, long long frame,
                        long long slot) const {
    const double slot_s = f.slot_ms / 1000.0;
    return d.round_start_dev +
           (frame * f.frame_period_slots() + f.uplink_slot_index(pipe, slot)) * slot_s;
  }

  double dev_slot_time(const Dev& d, const sched::FrameStructure& f, long long frame,
                       long long slot_index) const {
    return d.round_start_dev + (frame * f.frame_period_slots() + slot_index) * f.slot_ms / 1000.0;
  }

  long long gateway_slot_of(int di) const { return devs_[di].fsm.dc.slot_frame; }

  void schedule_slot_tx(int di, int pipe, long long frame) {
    Dev& d = devs_[di];
    const auto& f = frames_[std::size_t(d.fs_idx)];
    const double dev_t =
        slot_start_dev(d, f, pipe, frame, gateway_slot_of(di)) + f.guard_ms / 1000.0;
    push(std::max(now_ + 1e-9, d.clock.true_time_for(dev_t)), EvKind::SlotTx, di, pipe, frame);
  }

  void on_slot_tx(int di, int pipe, long long frame) {
    Dev& d = devs_[di];
    if (d.fsm.state == proto::DeviceState::Done || d.fs_idx < 0) return;
    const auto& f = frames_[std::size_t(d.fs_idx)];
    const auto actions = proto::device_step(d.fsm, proto::EvSlotStart{std::size_t(pipe)});
    bool transmitted = false;
    for (const auto& act : actions) {
      if (act.kind == proto::DeviceActionKind::TransmitPacket) {
        transmitted = true;
        const int channel = f.channel_ids[std::size_t(pipe)];
        const int total = act.job.payload_bytes + cfg_.free_header_bytes;
        const double dur = toa_s(f.sf, total);
        if (!duty_.try_consume(di, channel, dur, now_)) {
          schedule_slot_tx(di, pipe, frame + 1);  // unreachable by frame design
          return;
        }
        if (act.job.attempts == 1) d.sent_bytes += act.job.payload_bytes;
        start_uplink(di, UlKind::Data, channel, f.sf, f.tx_dbm, total, act.job.payload_bytes,
                     frame, gateway_slot_of(di), pipe);
        if (confirmed()) {
          bitmap_listeners_[{d.fs_idx, pipe, frame}].emplace_back(di, pipe);
          const double close_dev =
              dev_slot_time(d, f, frame, f.downlink_slot_index(pipe, f.downlink_slots - 1) + 1);
          push(std::max(now_ + 1e-9, d.clock.true_time_for(close_dev)), EvKind::AckClose, di, pipe,
               frame, /*prio=*/1);
        }
        schedule_slot_tx(di, pipe, frame + 1);
      } else if (act.kind == proto::DeviceActionKind::AllDone) {
        on_device_done(di);
      }
    }
    if (!transmitted && d.fsm.state != proto::DeviceState::Done) {
      // nothing staged for this pipe; keep its cadence only while work remains
      if (!d.fsm.buffer_exhausted() || d.fsm.pipelines[std::size_t(pipe)].has_value())
        schedule_slot_tx(di, pipe, frame + 1);
    }
  }

  void on_device_done(int di) {
    Dev& d = devs_[di];
    if (d.counted_active) {
      d.counted_active = false;
      if (d.fs_idx >= 0) sf_active_devices_[std::size_t(d.fs_idx)]--;
    }
  }

  void schedule_bitmap(int fi, int k, long long frame, int packet) {
    const auto& f = frames_[std::size_t(fi)];
    const double t = round_start_s_ +
                     (frame * f.frame_period_slots() + f.downlink_slot_index(k, packet)) *
                         f.slot_ms / 1000.0 +
                     f.guard_ms / 1000.0;
    push(t, EvKind::BitmapSlot, fi, k, frame * 16 + packet);
  }

  void on_bitmap_slot(int fi, int k, long long code) {
    const long long frame = code / 16;
    const int packet = int(code % 16);
    const auto& f = frames_[std::size_t(fi)];
    if (sf_active_devices_[std::size_t(fi)] <= 0) return;  // round drained
    // acks ride the downlink-only channel at the frame's spreading factor
    const int channel = kDownlinkChannel;
    const int uplink_channel = f.channel_ids[std::size_t(k)];

    if (packet == 0)
      frame_bitmap_cache_[{fi, k}] = {frame,
                                      gateway_.make_bitmap(f.sf, uplink_channel, frame, f.slots)};
    const auto& [cached_frame, bm] = frame_bitmap_cache_[{fi, k}];
    if (cached_frame == frame) {
      const long long lo = packet * kBitsPerAckPacket;
      const long long hi = std::min<long long>(f.slots, lo + kBitsPerAckPacket);
      if (lo < f.slots) {
        const int bytes = int(2 + (hi - lo + 7) / 8);
        const double dur = toa_s(f.sf, bytes);
        if (now_ >= gw_tx_busy_until_ - 1e-12 && duty_.try_consume(kGw, channel, dur, now_)) {
          Downlink dl;
          dl.kind = DlKind::Bitmap;
          dl.channel = channel;
          dl.sf = f.sf;
          dl.bandwidth_hz = cfg_.bandwidth_hz;
          dl.bytes = bytes;
          dl.fs_idx = fi;
          dl.chan_idx = k;
          dl.frame = frame;
          dl.slot_lo = lo;
          dl.slot_hi = hi;
          dl.bitmap = bm;
          start_downlink(dl);
        }
      }
    }
    if (packet + 1 < f.downlink_slots)
      schedule_bitmap(fi, k, frame, packet + 1);
    else
      schedule_bitmap(fi, k, frame + 1, 0);
  }

  void deliver_bitmap(const Downlink& dl) {
    const auto key = std::make_tuple(dl.fs_idx, dl.chan_idx, dl.frame);
    auto it = bitmap_listeners_.find(key);
    if (it == bitmap_listeners_.end()) return;
    std::vector<std::pair<int, int>> keep;
    for (auto [di, pipe] : it->second) {
      const long long slot = gateway_slot_of(di);
      if (slot < dl.slot_lo || slot >= dl.slot_hi) {
        keep.emplace_back(di, pipe);  // a later bitmap packet covers this slot
        continue;
      }
      Dev& d = devs_[di];
      add_rx(d, dl.end - dl.start, "bitmap");
      const bool got = device_receives(d, dl);
      if (!got) m_.lost_downlink++;
      const bool bit = got && proto::acked(dl.bitmap, slot);
      resolve_ack(di, pipe, got, bit);
      ack_handled_.insert({di, pipe, dl.frame});
    }
    it->second = std::move(keep);
    if (it->second.empty()) bitmap_listeners_.erase(it);
  }

  void on_ack_close(int di, int pipe, long long frame) {
    const auto key = std::make_tuple(di, pipe, frame);
    if (ack_handled_.count(key)) {
      ack_handled_.erase(key);
      return;
    }
    Dev& d = devs_[di];
    if (d.fs_idx >= 0) {
      // listened through the downlink phase without a decodable bitmap
      const auto& f = frames_[std::size_t(d.fs_idx)];
      add_rx(d, window_timeout_s(cfg_.radio(f.sf)) * f.downlink_slots, "bitmap");
    }
    resolve_ack(di, pipe, false, false);
  }

  void resolve_ack(int di, int pipe, bool bitmap_received, bool bit) {
    const auto actions = proto::device_step(
        devs_[di].fsm, proto::EvAckResult{std::size_t(pipe), bitmap_received, bit});
    for (const auto& act : actions) {
      if (act.kind == proto::DeviceActionKind::PacketDropped) m_.dropped_packets++;
      if (act.kind == proto::DeviceActionKind::AllDone) on_device_done(di);
    }
  }

  // ---- wrap-up -------------------------------------------------------------------------

  MetricsReport finalize() {
    const double span = std::max({cfg_.period_s(), last_activity_s_, 1.0});
    m_.collection_time_s = last_activity_s_;
    for (auto& d : devs_) {
      const long long delivered = confirmed() ? d.fsm.acked_bytes : d.delivered_unconf;
      const long long failed =
          confirmed() ? d.fsm.dropped_bytes : d.sent_bytes - d.delivered_unconf;
      const long long unattempted = d.goal - delivered - failed;
      m_.delivered_bytes += delivered;
      m_.dropped_bytes += failed;
      m_.unattempted_bytes += unattempted;

      m_.total_energy_j += d.energy.total_j();
      m_.total_tx_j += d.energy.tx_j;
      m_.total_rx_j += d.energy.rx_j;
      m_.device_lifetime_years.push_back(lifetime_years(d.energy.total_j(), span, cfg_.energy));
      if (trace_.enabled()) {
        TraceRecord r;
        r.type = 'D';
        r.actor = d.fsm.id;
        r.channel = int(unattempted);
        r.kind = "summary";
        r.outcome = "bytes";
        r.a = d.goal;
        r.b = delivered;
        r.c = failed;
        trace_.write(r);
      }
    }
    m_.energy_audit_j = m_.total_energy_j;
    m_.ddr = m_.goal_bytes > 0 ? double(m_.delivered_bytes) / double(m_.goal_bytes) : 1.0;
    double lt = 0;
    for (double y : m_.device_lifetime_years) lt += y;
    m_.mean_lifetime_years = devs_.empty() ? 0.0 : lt / double(devs_.size());
    if (cfg_.scheme == Scheme::Free && last_data_end_s_ > round_start_s_) {
      m_.airtime_efficiency =
          air_time_efficiency(data_airtime_s_, last_data_end_s_ - round_start_s_);
      m_.airtime_efficiency_valid = true;
    }
    m_.join_tx_per_device =
        devs_.empty() ? 0.0 : double(m_.join_requests) / double(devs_.size());
    m_.rejected_joins += gateway_.rejected_joins;
    return m_;
  }
};

inline MetricsReport run_scenario(const ScenarioConfig& cfg) {
  Simulator sim(cfg);
  return sim.run();
}

}  // namespace lorabulk::sim
