#pragma once

#include "wanspec/spectree.hpp"
#include "wanspec/types.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace wanspec {

// Frame layout: 4-byte big-endian payload length, then the payload. The
// payload is a 1-byte kind tag followed by the message fields in declared
// order; integers are big-endian fixed width, probabilities and entropies
// are 8-byte IEEE-754 big-endian. Bye is the one tag with no fields at all.
// The full layout, with a worked hex example, is in docs/protocol.md.

enum class MsgKind : std::uint8_t {
  hello = 1,
  speculation = 2,
  validation = 3,
  eos = 4,
  bye = 5,
};

struct HelloMsg {
  std::uint64_t config_digest = 0;

  bool operator==(const HelloMsg&) const = default;
};

/// One batch of draft candidates anchored by content: `base` is the sender's
/// committed length and `path` the tokens from there down to the parent the
/// candidates extend. The receiver resolves the anchor against its own
/// committed output and tree; anchors that contradict it are stale.
struct SpeculationMsg {
  std::uint64_t base = 0;
  std::vector<TokenId> path;
  std::vector<CandidateIn> candidates;

  bool operator==(const SpeculationMsg&) const = default;
};

struct ValidationMsg {
  std::uint64_t base = 0;
  ValidationResult result;

  bool operator==(const ValidationMsg&) const = default;
};

struct EosMsg {
  std::uint64_t final_length = 0;

  bool operator==(const EosMsg&) const = default;
};

struct ByeMsg {
  bool operator==(const ByeMsg&) const = default;
};

struct Message {
  std::uint64_t request_id = 0;
  std::uint64_t seq_no = 0;
  std::variant<HelloMsg, SpeculationMsg, ValidationMsg, EosMsg, ByeMsg> body;

  bool operator==(const Message&) const = default;

  MsgKind kind() const {
    switch (body.index()) {
      case 0: return MsgKind::hello;
      case 1: return MsgKind::speculation;
      case 2: return MsgKind::validation;
      case 3: return MsgKind::eos;
      default: return MsgKind::bye;
    }
  }
};

constexpr std::size_t kMaxFramePayload = 1u << 20;  // 1 MiB safety cap

namespace wire_detail {

inline void put_u8(std::vector<std::uint8_t>& b, std::uint8_t v) { b.push_back(v); }

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v >> 8));
  b.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int s = 56; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void put_f64(std::vector<std::uint8_t>& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

struct Cursor {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
  bool ok = true;

  bool need(std::size_t n) {
    if (!ok || data.size() - pos < n) {
      ok = false;
      return false;
    }
    return true;
  }
  std::uint8_t u8() {
    if (!need(1)) return 0;
    return data[pos++];
  }
  std::uint16_t u16() {
    if (!need(2)) return 0;
    std::uint16_t v = (std::uint16_t(data[pos]) << 8) | data[pos + 1];
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    if (!need(4)) return 0;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | data[pos + i];
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    if (!need(8)) return 0;
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | data[pos + i];
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace wire_detail

inline std::vector<std::uint8_t> encode(const Message& m) {
  using namespace wire_detail;
  std::vector<std::uint8_t> payload;
  put_u8(payload, static_cast<std::uint8_t>(m.kind()));
  if (m.kind() != MsgKind::bye) {
    put_u64(payload, m.request_id);
    put_u64(payload, m.seq_no);
  }
  if (const auto* h = std::get_if<HelloMsg>(&m.body)) {
    put_u64(payload, h->config_digest);
  } else if (const auto* s = std::get_if<SpeculationMsg>(&m.body)) {
    put_u64(payload, s->base);
    put_u16(payload, static_cast<std::uint16_t>(s->path.size()));
    for (TokenId t : s->path) put_u32(payload, t);
    put_u8(payload, static_cast<std::uint8_t>(s->candidates.size()));
    for (const CandidateIn& c : s->candidates) {
      put_u32(payload, c.token);
      put_f64(payload, c.prob);
      put_f64(payload, c.entropy);
    }
  } else if (const auto* v = std::get_if<ValidationMsg>(&m.body)) {
    put_u64(payload, v->base);
    put_u8(payload, static_cast<std::uint8_t>(v->result.accepted.size()));
    for (TokenId t : v->result.accepted) put_u32(payload, t);
    put_u32(payload, v->result.bonus_token);
    put_f64(payload, v->result.final_entropy);
  } else if (const auto* e = std::get_if<EosMsg>(&m.body)) {
    put_u64(payload, e->final_length);
  }
  std::vector<std::uint8_t> frame;
  frame.reserve(payload.size() + 4);
  put_u32(frame, static_cast<std::uint32_t>(payload.size()));
  frame.insert(frame.end(), payload.begin(), payload.end());
  return frame;
}

enum class DecodeStatus { ok, need_more, error };

struct Decoded {
  DecodeStatus status = DecodeStatus::error;
  std::size_t consumed = 0;  // bytes of the input eaten when status == ok
  Message message;
  std::string error;
};

/// Decodes the frame at the head of `bytes`, leaving any following bytes
/// untouched (stream use). Truncation reports need_more; a bad kind tag,
/// an overlong declared length, or payload/length disagreement is a protocol
/// error and the connection must close.
inline Decoded decode_frame(std::span<const std::uint8_t> bytes) {
  using namespace wire_detail;
  Decoded out;
  if (bytes.size() < 4) {
    out.status = DecodeStatus::need_more;
    return out;
  }
  std::uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len = (len << 8) | bytes[i];
  if (len == 0 || len > kMaxFramePayload) {
    out.error = "frame length " + std::to_string(len) + " outside (0, 1 MiB]";
    return out;
  }
  if (bytes.size() - 4 < len) {
    out.status = DecodeStatus::need_more;
    return out;
  }
  Cursor c{bytes.subspan(4, len)};
  auto tag = c.u8();
  Message m;
  if (tag == static_cast<std::uint8_t>(MsgKind::bye)) {
    m.body = ByeMsg{};
  } else {
    m.request_id = c.u64();
    m.seq_no = c.u64();
    switch (tag) {
      case static_cast<std::uint8_t>(MsgKind::hello): {
        HelloMsg h;
        h.config_digest = c.u64();
        m.body = h;
        break;
      }
      case static_cast<std::uint8_t>(MsgKind::speculation): {
        SpeculationMsg s;
        s.base = c.u64();
        auto path_len = c.u16();
        for (std::uint16_t i = 0; c.ok && i < path_len; ++i) s.path.push_back(c.u32());
        auto n = c.u8();
        for (std::uint8_t i = 0; c.ok && i < n; ++i) {
          CandidateIn cd;
          cd.token = c.u32();
          cd.prob = c.f64();
          cd.entropy = c.f64();
          s.candidates.push_back(cd);
        }
        m.body = std::move(s);
        break;
      }
      case static_cast<std::uint8_t>(MsgKind::validation): {
        ValidationMsg v;
        v.base = c.u64();
        auto n = c.u8();
        for (std::uint8_t i = 0; c.ok && i < n; ++i)
          v.result.accepted.push_back(c.u32());
        v.result.bonus_token = c.u32();
        v.result.final_entropy = c.f64();
        m.body = std::move(v);
        break;
      }
      case static_cast<std::uint8_t>(MsgKind::eos): {
        EosMsg e;
        e.final_length = c.u64();
        m.body = e;
        break;
      }
      default:
        out.error = "unknown kind tag " + std::to_string(tag);
        return out;
    }
  }
  if (!c.ok) {
    out.error = "payload shorter than its declared structure";
    return out;
  }
  if (c.pos != len) {
    out.error = "payload has " + std::to_string(len - c.pos) + " trailing bytes";
    return out;
  }
  out.status = DecodeStatus::ok;
  out.consumed = 4 + len;
  out.message = std::move(m);
  return out;
}

/// Strict form: the input must be exactly one frame. Trailing garbage after
/// the frame is rejected, distinctly from truncation.
inline Decoded decode(std::span<const std::uint8_t> bytes) {
  Decoded d = decode_frame(bytes);
  if (d.status == DecodeStatus::ok && d.consumed != bytes.size()) {
    d.status = DecodeStatus::error;
    d.error = "trailing garbage after frame";
  }
  return d;
}

/// Incremental frame extraction for a byte stream. Enforces the per-sender
/// FIFO contract: a seq_no gap on a stream transport means corruption, so it
/// surfaces as a protocol error.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes) {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }

  /// Returns the next complete message, or nullopt when more bytes are
  /// needed. Throws ProtocolError on malformed frames.
  std::optional<Message> next() {
    Decoded d = decode_frame(buf_);
    if (d.status == DecodeStatus::need_more) return std::nullopt;
    if (d.status == DecodeStatus::error) throw ProtocolError("wire: " + d.error);
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(d.consumed));
    if (d.message.kind() != MsgKind::bye) {
      auto key = d.message.request_id;
      auto it = last_seq_.find(key);
      if (it != last_seq_.end() && d.message.seq_no != it->second + 1)
        throw ProtocolError("wire: seq gap, got " + std::to_string(d.message.seq_no) +
                            " after " + std::to_string(it->second));
      last_seq_[key] = d.message.seq_no;
    }
    return d.message;
  }

 private:
  std::vector<std::uint8_t> buf_;
  std::map<std::uint64_t, std::uint64_t> last_seq_;
};

}  // namespace wanspec
