#pragma once

// Endpoint state machines for the join/sync phase and the data rounds.
// Deterministic step functions: (state, event) -> (state', actions). The
// simulation engine owns all timing and the radio; these track protocol
// bookkeeping only.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <string>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "lorabulk/protocol.hpp"
#include "lorabulk/scheduler.hpp"

namespace lorabulk::proto {

enum class DeviceState {
  Idle,
  Joining,
  AwaitStage2,
  AwaitFSettings,
  SleepUntilSlot,
  Transmitting,
  AwaitAck,
  Done,
};

struct PacketJob {
  long long offset = 0;  // first payload byte of this chunk
  int payload_bytes = 0;
  int attempts = 0;      // transmissions so far, drop after max_attempts
};

struct DeviceFsm {
  int id = -1;
  bool confirmed = false;
  int header_bytes = 8;
  int max_attempts = 8;
  long long goal_bytes = 0;

  DeviceState state = DeviceState::Idle;
  int join_attempts = 0;
  DCSettings dc;
  bool joined = false;

  // Frame parameters for this device's SF, learned from FSettings.
  int packet_bytes = 0;
  int payload_per_packet = 0;
  int guard_ms = 0;
  double slot_ms = 0.0;
  long long slots_per_frame = 0;

  // One head-of-line pipeline per assigned channel; a packet is retried on
  // the channel it first went out on.
  std::vector<std::optional<PacketJob>> pipelines;
  long long staged_bytes = 0;
  long long acked_bytes = 0;
  long long dropped_bytes = 0;
  long long data_transmissions = 0;

  bool buffer_exhausted() const { return staged_bytes >= goal_bytes; }
  bool idle_pipelines() const {
    for (const auto& p : pipelines)
      if (p) return false;
    return true;
  }

  // Pulls the next chunk into pipeline `pipe`; false when nothing is left.
  bool stage(std::size_t pipe) {
    if (pipelines[pipe]) return true;
    if (buffer_exhausted()) return false;
    PacketJob job;
    job.offset = staged_bytes;
    job.payload_bytes = int(std::min<long long>(payload_per_packet, goal_bytes - staged_bytes));
    staged_bytes += job.payload_bytes;
    pipelines[pipe] = job;
    return true;
  }
};

// Device events, in protocol order.
struct EvJoinAcceptReceived { DCSettings dc; };
struct EvJoinWindowsClosed {};  // both receive windows passed empty
struct EvFSettingsReceived { FSettings fs; };
struct EvSlotStart { std::size_t pipe; };
struct EvTxComplete { std::size_t pipe; };
// Downlink slot outcome: bitmap decoded (with this device's bit) or missed.
struct EvAckResult { std::size_t pipe; bool bitmap_received; bool bit_set; };
using DeviceEvent = std::variant<EvJoinAcceptReceived, EvJoinWindowsClosed, EvFSettingsReceived,
                                 EvSlotStart, EvTxComplete, EvAckResult>;

enum class DeviceActionKind {
  RetryJoin,        // backoff, then send another join-request
  SleepUntilStage2,
  SleepUntilSlot,
  TransmitPacket,   // current job of `pipe`
  AwaitAckWindow,   // confirmed: wake for the frame's downlink slot
  PacketDropped,    // attempts exhausted
  AllDone,
};

struct DeviceAction {
  DeviceActionKind kind;
  std::size_t pipe = 0;
  PacketJob job;
};

inline std::vector<DeviceAction> device_step(DeviceFsm& fsm, const DeviceEvent& event) {
  std::vector<DeviceAction> actions;
  std::visit(
      [&](const auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, EvJoinAcceptReceived>) {
          fsm.dc = ev.dc;
          fsm.joined = true;
          fsm.state = DeviceState::AwaitStage2;
          actions.push_back({DeviceActionKind::SleepUntilStage2, 0, {}});
        } else if constexpr (std::is_same_v<T, EvJoinWindowsClosed>) {
          fsm.state = DeviceState::Joining;
          actions.push_back({DeviceActionKind::RetryJoin, 0, {}});
        } else if constexpr (std::is_same_v<T, EvFSettingsReceived>) {
          const int idx = sf_index(fsm.dc.sf());
          fsm.packet_bytes = ev.fs.pckt_sizes[idx];
          fsm.payload_per_packet = fsm.packet_bytes - fsm.header_bytes;
          fsm.guard_ms = ev.fs.guards_ms[idx];
          fsm.slots_per_frame = ev.fs.frame_lens[idx];
          fsm.slot_ms = 0.0;  // engine fills in T + 2G from its radio params
          fsm.pipelines.assign(std::size_t(std::popcount(unsigned(fsm.dc.ch_mask))), std::nullopt);
          fsm.state = DeviceState::SleepUntilSlot;
          actions.push_back({DeviceActionKind::SleepUntilSlot, 0, {}});
        } else if constexpr (std::is_same_v<T, EvSlotStart>) {
          if (fsm.stage(ev.pipe)) {
            fsm.state = DeviceState::Transmitting;
            fsm.pipelines[ev.pipe]->attempts++;
            fsm.data_transmissions++;
            actions.push_back({DeviceActionKind::TransmitPacket, ev.pipe, *fsm.pipelines[ev.pipe]});
          } else if (fsm.idle_pipelines()) {
            fsm.state = DeviceState::Done;
            actions.push_back({DeviceActionKind::AllDone, 0, {}});
          }
        } else if constexpr (std::is_same_v<T, EvTxComplete>) {
          if (fsm.confirmed) {
            fsm.state = DeviceState::AwaitAck;
            actions.push_back({DeviceActionKind::AwaitAckWindow, ev.pipe, {}});
          } else {
            // Unconfirmed: fire and forget.
            fsm.pipelines[ev.pipe].reset();
            fsm.state = fsm.buffer_exhausted() && fsm.idle_pipelines() ? DeviceState::Done
                                                                       : DeviceState::SleepUntilSlot;
            if (fsm.state == DeviceState::Done)
              actions.push_back({DeviceActionKind::AllDone, 0, {}});
            else
              actions.push_back({DeviceActionKind::SleepUntilSlot, 0, {}});
          }
        } else if constexpr (std::is_same_v<T, EvAckResult>) {
          auto& job = fsm.pipelines[ev.pipe];
          if (job) {
            if (ev.bitmap_received && ev.bit_set) {
              fsm.acked_bytes += job->payload_bytes;
              job.reset();
            } else if (job->attempts >= fsm.max_attempts) {
              fsm.dropped_bytes += job->payload_bytes;
              actions.push_back({DeviceActionKind::PacketDropped, ev.pipe, *job});
              job.reset();
            }
          }
          if (fsm.buffer_exhausted() && fsm.idle_pipelines()) {
            fsm.state = DeviceState::Done;
            actions.push_back({DeviceActionKind::AllDone, 0, {}});
          } else {
            fsm.state = DeviceState::SleepUntilSlot;
            actions.push_back({DeviceActionKind::SleepUntilSlot, 0, {}});
          }
        }
      },
      event);
  return actions;
}

enum class GatewayState { Stage1Collecting, Stage2Broadcasting, Collecting };

// Gateway protocol state: wraps the allocator during stage 1 and records
// receptions per (sf, channel, frame) during collection.
struct GatewayFsm {
  GatewayState state = GatewayState::Stage1Collecting;
  sched::SchedulerConfig cfg;
  LinkBudget budget;
  sched::SchedulerState alloc;
  std::vector<sched::FrameStructure> frames;
  long long rejected_joins = 0;

  // (sf, channel) -> frame index -> slots received this frame
  std::map<std::pair<int, int>, std::map<long long, std::vector<long long>>> receptions;

  struct JoinOutcome {
    bool accepted = false;
    JoinAccept accept;
    std::string reject_reason;
  };

  // Allocate on a decoded join-request; the engine decides whether the
  // accept can actually be transmitted (receive windows, duty cycle).
  JoinOutcome on_join_request(const JoinRequest& req, double rssi_dbm, int device_id,
                              std::uint16_t seconds_to_stage2) {
    JoinOutcome out;
    if (state != GatewayState::Stage1Collecting) {
      out.reject_reason = "join outside stage 1";
      return out;
    }
    // A device that missed its accept keeps joining: resend the same
    // assignment instead of burning another slot.
    if (auto it = issued_.find(device_id); it != issued_.end()) {
      out.accepted = true;
      out.accept = it->second;
      out.accept.dc.second_stage = seconds_to_stage2;
      return out;
    }
    sched::JoinInfo info{device_id, rssi_dbm, req.data_size, req.delay_elasticity};
    sched::Assignment a;
    try {
      a = sched::allocate(info, alloc, cfg, budget);
    } catch (const std::domain_error& e) {
      rejected_joins++;
      out.reject_reason = e.what();
      return out;
    }
    out.accepted = true;
    out.accept.app_nonce = 0;
    out.accept.net_id = 0;
    out.accept.dev_addr = std::uint32_t(device_id);
    out.accept.settings = 0;
    out.accept.dc.data_rate = DCSettings::dr_for_sf(a.sf);
    out.accept.dc.tx_power = DCSettings::power_index(a.tx_power_dbm);
    std::uint16_t mask = 0;
    for (int ch : a.channel_ids) mask |= std::uint16_t(1u << (ch - 1));
    out.accept.dc.ch_mask = mask;
    out.accept.dc.slot_frame = std::uint16_t(a.slot_index);
    out.accept.dc.second_stage = seconds_to_stage2;
    issued_.emplace(device_id, out.accept);
    return out;
  }

  std::map<int, JoinAccept> issued_;

  // Stage-1 end: freeze the schedule and move to broadcasting.
  const std::vector<sched::FrameStructure>& close_stage1() {
    frames = sched::build_frame_structures(alloc, cfg, budget);
    state = GatewayState::Stage2Broadcasting;
    return frames;
  }

  FSettings make_fsettings(std::uint32_t data_collection_ms, std::uint32_t next_round_s) const {
    FSettings fs;
    for (const auto& f : frames) {
      const int i = sf_index(f.sf);
      fs.pckt_sizes[i] = std::uint8_t(f.packet_bytes);
      fs.guards_ms[i] = std::uint16_t(f.guard_ms);
      fs.frame_lens[i] = std::uint16_t(std::min<long long>(f.slots, 0xffff));
    }
    fs.data_collection_ms = data_collection_ms;
    fs.next_round_s = next_round_s;
    return fs;
  }

  void begin_collection() { state = GatewayState::Collecting; }

  void record_reception(int sf, int channel, long long frame, long long slot) {
    receptions[{sf, channel}][frame].push_back(slot);
  }

  AckBitmap make_bitmap(int sf, int channel, long long frame, long long slots) {
    auto& by_frame = receptions[{sf, channel}];
    auto it = by_frame.find(frame);
    std::vector<long long> got = it == by_frame.end() ? std::vector<long long>{} : it->second;
    auto bm = build_ack_bitmap(got, slots, std::uint16_t(frame & 0xffff));
    if (it != by_frame.end()) by_frame.erase(it);
    return bm;
  }
};

}  // namespace lorabulk::proto
