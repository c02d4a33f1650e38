#pragma once

// Session wire protocol: length-delimited UTF-8 JSON frames. Each frame is
// a 4-byte big-endian payload length followed by that many bytes holding
// one JSON object {"kind", "session_id", "seq", "payload"}. See
// docs/protocol.md for every kind and payload field.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "copilot/enum_names.hpp"
#include "json.hpp"

namespace copilot {

enum class WireKind {
  join,
  chat,
  copilot_activate,
  copilot_regenerate,
  copilot_switch,
  copilot_send,
  exit_ticket_start,
  exit_ticket_result,
  suggestion,
  session_state,
  error
};

template <>
struct EnumNames<WireKind> {
  static constexpr std::string_view type_name = "message kind";
  static constexpr std::array<std::string_view, 11> names{
      "join",           "chat",           "copilot_activate",   "copilot_regenerate",
      "copilot_switch", "copilot_send",   "exit_ticket_start",  "exit_ticket_result",
      "suggestion",     "session_state",  "error"};
};

inline constexpr std::uint32_t kMaxFrameBytes = 1u << 20;
inline constexpr std::size_t kFrameHeaderBytes = 4;

struct WireMessage {
  WireKind kind = WireKind::error;
  std::string session_id;
  std::uint64_t seq = 0;  // client sequence number; echoed in responses
  nlohmann::ordered_json payload = nlohmann::ordered_json::object();
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

nlohmann::ordered_json to_json(const WireMessage& message);
WireMessage wire_from_json(const nlohmann::ordered_json& j);

// Header plus body, ready to write to a stream.
std::string encode_frame(const WireMessage& message);
std::uint32_t decode_frame_length(const std::array<unsigned char, kFrameHeaderBytes>& header);
WireMessage decode_frame_body(std::string_view body);

WireMessage make_error(std::string session_id, std::uint64_t seq, std::string_view code,
                       std::string_view message);

}  // namespace copilot
