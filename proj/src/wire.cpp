#include "copilot/wire.hpp"

namespace copilot {

nlohmann::ordered_json to_json(const WireMessage& message) {
  nlohmann::ordered_json j;
  j["kind"] = to_string(message.kind);
  j["session_id"] = message.session_id;
  j["seq"] = message.seq;
  j["payload"] = message.payload;
  return j;
}

WireMessage wire_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw ProtocolError("frame is not a JSON object");
  WireMessage m;
  try {
    m.kind = parse_enum<WireKind>(j.at("kind").get<std::string>());
    m.session_id = j.value("session_id", std::string());
    m.seq = j.at("seq").get<std::uint64_t>();
    if (auto it = j.find("payload"); it != j.end()) {
      if (!it->is_object()) throw ProtocolError("payload must be an object");
      m.payload = *it;
    }
  } catch (const ProtocolError&) {
    throw;
  } catch (const std::exception& e) {
    throw ProtocolError(std::string("bad frame: ") + e.what());
  }
  return m;
}

std::string encode_frame(const WireMessage& message) {
  const std::string body = to_json(message).dump();
  if (body.size() > kMaxFrameBytes) throw ProtocolError("frame exceeds maximum size");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(kFrameHeaderBytes + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out += body;
  return out;
}

std::uint32_t decode_frame_length(const std::array<unsigned char, kFrameHeaderBytes>& header) {
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFrameBytes) throw ProtocolError("frame length " + std::to_string(n) + " too large");
  return n;
}

WireMessage decode_frame_body(std::string_view body) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("frame is not valid JSON: ") + e.what());
  }
  return wire_from_json(j);
}

WireMessage make_error(std::string session_id, std::uint64_t seq, std::string_view code,
                       std::string_view message) {
  WireMessage m;
  m.kind = WireKind::error;
  m.session_id = std::move(session_id);
  m.seq = seq;
  m.payload["code"] = code;
  m.payload["message"] = message;
  return m;
}

}  // namespace copilot
