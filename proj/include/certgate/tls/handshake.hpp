#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "certgate/core/bytes.hpp"
#include "certgate/tls/record.hpp"

namespace certgate::tls {

enum class Direction { ToServer, ToClient };

enum class HandshakeType : std::uint8_t {
  hello_request = 0,
  client_hello = 1,
  server_hello = 2,
  certificate = 11,
  server_hello_done = 14,
};

inline constexpr std::size_t kHandshakeHeaderLength = 4;
inline constexpr std::size_t kMaxHandshakeMessage = (1u << 24) - 1;
inline constexpr std::size_t kMaxCaptureBytes = 1u << 20;

struct HandshakeCapture {
  Bytes client_hello_raw;  // full message including the 4-byte header
  Bytes server_hello_raw;
  std::vector<Bytes> certificate_chain;  // leaf first
  ProtocolVersion negotiated_version;
  std::optional<std::string> sni_hostname;
  bool complete = false;
  // Set when the ServerHello selects TLS 1.3; the chain travels encrypted and stays empty.
  bool tls13_opaque = false;

  // Handshake-layer bytes not yet forming a whole message, per direction.
  Bytes pending_to_server;
  Bytes pending_to_client;

  std::size_t buffered_bytes() const;
};

// Appends one handshake record to the capture, reassembling messages that span records.
// Throws WireError(MalformedHandshake | UnsupportedFlow).
void feed_handshake(HandshakeCapture& capture, const TlsRecord& record, Direction direction);

// First host_name of the server_name extension, lowercased. Throws WireError(MalformedHandshake).
std::optional<std::string> extract_sni(ByteView client_hello_raw);

// Selected protocol version from a ServerHello, honouring supported_versions.
ProtocolVersion server_hello_version(ByteView server_hello_raw);

// Splits raw byte streams into records and feeds the handshake ones to a capture.
class CaptureStream {
 public:
  void feed(Direction direction, ByteView bytes);

  const HandshakeCapture& capture() const { return capture_; }
  HandshakeCapture& capture() { return capture_; }
  bool client_hello_done() const { return !capture_.client_hello_raw.empty(); }

  // Heap bytes currently owned by this stream and its capture.
  std::size_t footprint() const;

 private:
  Bytes to_server_;
  Bytes to_client_;
  HandshakeCapture capture_;
};

}  // namespace certgate::tls
