#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>

#include "certgate/core/bytes.hpp"
#include "certgate/engine/types.hpp"

// Length-prefixed frames shared by the interceptor, the direct-validation API and addon hosts.
// Every frame is u32 length (big-endian, excluding itself) followed by a one-byte type.
namespace certgate::engine::ipc {

enum class FrameType : std::uint8_t {
  Query = 0x01,
  Response = 0x02,
  DirectRequest = 0x03,
  DirectResponse = 0x04,
  AddonVerdict = 0x05,
  AddonReady = 0x06,
};

inline constexpr std::size_t kMaxFrameLength = 16u << 20;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QueryFrame {
  FrameType type = FrameType::Query;  // Query or DirectRequest
  ValidationQuery query;
};

struct ResponseFrame {
  std::uint64_t id = 0;
  PolicyDecision decision;
};

struct DirectResponseFrame {
  std::uint64_t id = 0;
  PolicyDecision decision;
  VerdictList verdicts;
};

struct AddonVerdictFrame {
  std::uint64_t id = 0;
  PluginVerdict verdict = PluginVerdict::Error;
};

struct AddonReadyFrame {
  bool ok = false;
  std::string message;
};

using Frame = std::variant<QueryFrame, ResponseFrame, DirectResponseFrame, AddonVerdictFrame, AddonReadyFrame>;

Bytes encode(const QueryFrame& frame);
Bytes encode(const ResponseFrame& frame);
Bytes encode(const DirectResponseFrame& frame);
Bytes encode(const AddonVerdictFrame& frame);
Bytes encode(const AddonReadyFrame& frame);

// Decodes one frame body (the bytes after the length prefix). Throws ProtocolError.
Frame decode(ByteView body);

// Reads one length-prefixed frame body from a blocking fd. nullopt on clean EOF.
std::optional<Bytes> read_frame(int fd);

}  // namespace certgate::engine::ipc
