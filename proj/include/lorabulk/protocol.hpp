#pragma once

// Wire formats for the joining/synchronization phase and the group-ack
// bitmap. All multi-byte fields are big-endian; layouts are normative and
// bit-exact (golden vectors live in tests/golden/messages.tsv).

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lorabulk::proto {

using Bytes = std::vector<std::uint8_t>;

struct CodecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void put_be(Bytes& out, std::uint64_t v, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(std::uint8_t(v >> (8 * i)));
}
inline std::uint64_t get_be(const Bytes& in, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v = (v << 8) | in[at + i];
  return v;
}
inline void check_range(std::uint64_t v, int width, const char* field) {
  if (width < 8 && v >> (8 * width)) throw CodecError(std::string(field) + ": value overflows field");
}
}  // namespace detail

// 24 bytes: app_eui(8) dev_eui(8) dev_nonce(2) data_size(3) delay_elasticity(3)
struct JoinRequest {
  std::uint64_t app_eui = 0;
  std::uint64_t dev_eui = 0;
  std::uint16_t dev_nonce = 0;
  std::uint32_t data_size = 0;         // buffered bytes
  std::uint32_t delay_elasticity = 0;  // seconds

  static constexpr std::size_t kWireSize = 24;
  bool operator==(const JoinRequest&) const = default;
};

inline Bytes encode_join_request(const JoinRequest& r) {
  detail::check_range(r.data_size, 3, "data_size");
  detail::check_range(r.delay_elasticity, 3, "delay_elasticity");
  Bytes out;
  out.reserve(JoinRequest::kWireSize);
  detail::put_be(out, r.app_eui, 8);
  detail::put_be(out, r.dev_eui, 8);
  detail::put_be(out, r.dev_nonce, 2);
  detail::put_be(out, r.data_size, 3);
  detail::put_be(out, r.delay_elasticity, 3);
  return out;
}

inline JoinRequest decode_join_request(const Bytes& in) {
  if (in.size() != JoinRequest::kWireSize) throw CodecError("join-request: bad length");
  JoinRequest r;
  r.app_eui = detail::get_be(in, 0, 8);
  r.dev_eui = detail::get_be(in, 8, 8);
  r.dev_nonce = std::uint16_t(detail::get_be(in, 16, 2));
  r.data_size = std::uint32_t(detail::get_be(in, 18, 3));
  r.delay_elasticity = std::uint32_t(detail::get_be(in, 21, 3));
  return r;
}

// 7 bytes inside the join-accept: data_rate(4b)|tx_power(4b) ch_mask(16)
// slot_frame(16) second_stage(16). DataRate follows the EU868 table
// (DR = 12 - sf); TxPower is the standard index (14 dBm = 0, 1 dBm steps).
struct DCSettings {
  std::uint8_t data_rate = 0;
  std::uint8_t tx_power = 0;
  std::uint16_t ch_mask = 0;
  std::uint16_t slot_frame = 0;
  std::uint16_t second_stage = 0;  // seconds until stage 2

  static constexpr std::size_t kWireSize = 7;
  bool operator==(const DCSettings&) const = default;

  int sf() const { return 12 - data_rate; }
  int tx_dbm() const { return 14 - tx_power; }
  static std::uint8_t dr_for_sf(int sf) { return std::uint8_t(12 - sf); }
  static std::uint8_t power_index(int dbm) { return std::uint8_t(14 - dbm); }
};

inline Bytes encode_dc_settings(const DCSettings& s) {
  if (s.data_rate > 15) throw CodecError("data_rate: 4-bit field");
  if (s.tx_power > 15) throw CodecError("tx_power: 4-bit field");
  if (s.ch_mask == 0) throw CodecError("ch_mask: at least one channel");
  Bytes out;
  out.reserve(DCSettings::kWireSize);
  out.push_back(std::uint8_t(s.data_rate << 4 | s.tx_power));
  detail::put_be(out, s.ch_mask, 2);
  detail::put_be(out, s.slot_frame, 2);
  detail::put_be(out, s.second_stage, 2);
  return out;
}

inline DCSettings decode_dc_settings(const Bytes& in, std::size_t at = 0) {
  if (in.size() < at + DCSettings::kWireSize) throw CodecError("dc-settings: bad length");
  DCSettings s;
  s.data_rate = in[at] >> 4;
  s.tx_power = in[at] & 0x0f;
  s.ch_mask = std::uint16_t(detail::get_be(in, at + 1, 2));
  s.slot_frame = std::uint16_t(detail::get_be(in, at + 3, 2));
  s.second_stage = std::uint16_t(detail::get_be(in, at + 5, 2));
  if (s.ch_mask == 0) throw CodecError("dc-settings: empty ch_mask");
  return s;
}

// 18 bytes: app_nonce(3) net_id(3) dev_addr(4) settings(1) dc_settings(7)
struct JoinAccept {
  std::uint32_t app_nonce = 0;
  std::uint32_t net_id = 0;
  std::uint32_t dev_addr = 0;
  std::uint8_t settings = 0;
  DCSettings dc;

  static constexpr std::size_t kWireSize = 11 + DCSettings::kWireSize;
  bool operator==(const JoinAccept&) const = default;
};

inline Bytes encode_join_accept(const JoinAccept& a) {
  detail::check_range(a.app_nonce, 3, "app_nonce");
  detail::check_range(a.net_id, 3, "net_id");
  Bytes out;
  out.reserve(JoinAccept::kWireSize);
  detail::put_be(out, a.app_nonce, 3);
  detail::put_be(out, a.net_id, 3);
  detail::put_be(out, a.dev_addr, 4);
  out.push_back(a.settings);
  const Bytes dc = encode_dc_settings(a.dc);
  out.insert(out.end(), dc.begin(), dc.end());
  return out;
}

inline JoinAccept decode_join_accept(const Bytes& in) {
  if (in.size() != JoinAccept::kWireSize) throw CodecError("join-accept: bad length");
  JoinAccept a;
  a.app_nonce = std::uint32_t(detail::get_be(in, 0, 3));
  a.net_id = std::uint32_t(detail::get_be(in, 3, 3));
  a.dev_addr = std::uint32_t(detail::get_be(in, 6, 4));
  a.settings = in[10];
  a.dc = decode_dc_settings(in, 11);
  return a;
}

// 37 bytes: pckt_sizes 6x1, guards 6x2, frame_lens 6x2, data_collection(4),
// next_round(3). SF order is 7 first ("most significant byte"), unused SFs
// carry zeros.
struct FSettings {
  std::array<std::uint8_t, 6> pckt_sizes{};   // total packet bytes per SF
  std::array<std::uint16_t, 6> guards_ms{};
  std::array<std::uint16_t, 6> frame_lens{};  // uplink slots per frame
  std::uint32_t data_collection_ms = 0;       // time until the round starts
  std::uint32_t next_round_s = 0;             // time until the next join phase

  static constexpr std::size_t kWireSize = 6 + 12 + 12 + 4 + 3;
  bool operator==(const FSettings&) const = default;
};

inline Bytes encode_fsettings(const FSettings& f) {
  detail::check_range(f.next_round_s, 3, "next_round_s");
  Bytes out;
  out.reserve(FSettings::kWireSize);
  for (auto v : f.pckt_sizes) out.push_back(v);
  for (auto v : f.guards_ms) detail::put_be(out, v, 2);
  for (auto v : f.frame_lens) detail::put_be(out, v, 2);
  detail::put_be(out, f.data_collection_ms, 4);
  detail::put_be(out, f.next_round_s, 3);
  return out;
}

inline FSettings decode_fsettings(const Bytes& in) {
  if (in.size() != FSettings::kWireSize) throw CodecError("fsettings: bad length");
  FSettings f;
  for (int i = 0; i < 6; ++i) f.pckt_sizes[i] = in[i];
  for (int i = 0; i < 6; ++i) f.guards_ms[i] = std::uint16_t(detail::get_be(in, 6 + 2 * i, 2));
  for (int i = 0; i < 6; ++i) f.frame_lens[i] = std::uint16_t(detail::get_be(in, 18 + 2 * i, 2));
  f.data_collection_ms = std::uint32_t(detail::get_be(in, 30, 4));
  f.next_round_s = std::uint32_t(detail::get_be(in, 34, 3));
  return f;
}

// Group acknowledgment: bit i acknowledges the packet of slot i, MSB of the
// first byte = slot 0, padding bits zero.
struct AckBitmap {
  std::uint16_t frame_index = 0;
  long long slots = 0;
  std::vector<std::uint8_t> bits;  // ceil(slots/8) bytes

  bool operator==(const AckBitmap&) const = default;
};

inline AckBitmap build_ack_bitmap(const std::vector<long long>& received_slots, long long slots,
                                  std::uint16_t frame_index = 0) {
  if (slots < 0) throw std::invalid_argument("negative slot count");
  AckBitmap b;
  b.frame_index = frame_index;
  b.slots = slots;
  b.bits.assign(std::size_t((slots + 7) / 8), 0);
  for (long long s : received_slots) {
    if (s < 0 || s >= slots) throw std::out_of_range("slot index outside the frame");
    b.bits[std::size_t(s / 8)] |= std::uint8_t(0x80u >> (s % 8));
  }
  return b;
}

inline bool acked(const AckBitmap& b, long long slot) {
  if (slot < 0 || slot >= b.slots) throw std::out_of_range("slot index outside the frame");
  return (b.bits[std::size_t(slot / 8)] >> (7 - slot % 8)) & 1;
}

inline Bytes encode_ack_bitmap(const AckBitmap& b) {
  Bytes out;
  out.reserve(2 + b.bits.size());
  detail::put_be(out, b.frame_index, 2);
  out.insert(out.end(), b.bits.begin(), b.bits.end());
  return out;
}

inline AckBitmap decode_ack_bitmap(const Bytes& in, long long slots) {
  if (in.size() != 2 + std::size_t((slots + 7) / 8)) throw CodecError("ack-bitmap: bad length");
  AckBitmap b;
  b.frame_index = std::uint16_t(detail::get_be(in, 0, 2));
  b.slots = slots;
  b.bits.assign(in.begin() + 2, in.end());
  return b;
}

}  // namespace lorabulk::proto
