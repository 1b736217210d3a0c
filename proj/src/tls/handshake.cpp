#include "certgate/tls/handshake.hpp"

#include <algorithm>
#include <cctype>

#include "certgate/tls/errors.hpp"

namespace certgate::tls {

namespace {

constexpr std::uint16_t kExtServerName = 0;
constexpr std::uint16_t kExtSupportedVersions = 43;

[[noreturn]] void malformed(const std::string& what) {
  throw WireError(WireErrorCode::MalformedHandshake, what);
}

// Bounds-checked cursor over a handshake body.
class Cursor {
 public:
  Cursor(ByteView data, const char* context) : data_(data), context_(context) {}

  std::uint32_t number(std::size_t width) {
    need(width);
    auto v = read_be(data_, pos_, width);
    pos_ += width;
    return v;
  }

  ByteView take(std::size_t n) {
    need(n);
    auto v = data_.subspan(pos_, n);
    pos_ += n;
    return v;
  }

  void skip(std::size_t n) { take(n); }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) malformed(std::string("truncated ") + context_);
  }

  ByteView data_;
  std::size_t pos_ = 0;
  const char* context_;
};

ByteView message_body(ByteView message, HandshakeType expected) {
  if (message.size() < kHandshakeHeaderLength || message[0] != static_cast<std::uint8_t>(expected)) {
    malformed("unexpected handshake message type");
  }
  if (read_be(message, 1, 3) != message.size() - kHandshakeHeaderLength) {
    malformed("handshake length does not match message size");
  }
  return message.subspan(kHandshakeHeaderLength);
}

std::vector<Bytes> parse_certificate_list(ByteView message) {
  Cursor body(message_body(message, HandshakeType::certificate), "certificate message");
  const auto list_length = body.number(3);
  if (list_length != body.remaining()) malformed("certificate list length mismatch");
  std::vector<Bytes> chain;
  while (!body.done()) {
    const auto cert_length = body.number(3);
    auto der = body.take(cert_length);
    if (der.empty() || der[0] != 0x30) malformed("certificate entry is not a DER SEQUENCE");
    chain.emplace_back(der.begin(), der.end());
  }
  if (chain.empty()) malformed("empty certificate list");
  return chain;
}

void handle_to_server(HandshakeCapture& capture, std::uint8_t type, Bytes message) {
  if (type != static_cast<std::uint8_t>(HandshakeType::client_hello)) {
    malformed("client flight does not open with a ClientHello");
  }
  capture.sni_hostname = extract_sni(message);
  capture.client_hello_raw = std::move(message);
  capture.pending_to_server.clear();
}

void handle_to_client(HandshakeCapture& capture, std::uint8_t type, Bytes message) {
  switch (static_cast<HandshakeType>(type)) {
    case HandshakeType::hello_request:
      return;
    case HandshakeType::server_hello:
      if (!capture.server_hello_raw.empty()) malformed("duplicate ServerHello");
      capture.negotiated_version = server_hello_version(message);
      capture.server_hello_raw = std::move(message);
      if (capture.negotiated_version == kTls13) {
        capture.tls13_opaque = true;
        capture.complete = true;
      }
      return;
    case HandshakeType::certificate:
      if (capture.server_hello_raw.empty()) malformed("Certificate before ServerHello");
      capture.certificate_chain = parse_certificate_list(message);
      capture.complete = true;
      return;
    default:
      if (capture.server_hello_raw.empty()) malformed("server flight does not open with a ServerHello");
      throw WireError(WireErrorCode::UnsupportedFlow, "server sent no certificate");
  }
}

}  // namespace

std::size_t HandshakeCapture::buffered_bytes() const {
  std::size_t total = client_hello_raw.size() + server_hello_raw.size() + pending_to_server.size() +
                      pending_to_client.size();
  for (const auto& cert : certificate_chain) total += cert.size();
  return total;
}

void feed_handshake(HandshakeCapture& capture, const TlsRecord& record, Direction direction) {
  if (record.type != ContentType::handshake || capture.complete) return;
  if (direction == Direction::ToServer && !capture.client_hello_raw.empty()) return;
  if (direction == Direction::ToClient && capture.client_hello_raw.empty()) {
    throw WireError(WireErrorCode::UnsupportedFlow, "server handshake bytes before any ClientHello");
  }

  auto& pending = direction == Direction::ToServer ? capture.pending_to_server : capture.pending_to_client;
  pending.insert(pending.end(), record.payload.begin(), record.payload.end());
  if (capture.buffered_bytes() > kMaxCaptureBytes) malformed("capture exceeds per-flow limit");

  while (pending.size() >= kHandshakeHeaderLength && !capture.complete) {
    const std::uint8_t type = pending[0];
    const std::size_t length = read_be(pending, 1, 3);
    if (length > kMaxCaptureBytes) malformed("declared handshake length exceeds capture limit");
    if (pending.size() < kHandshakeHeaderLength + length) break;

    const auto end = pending.begin() + static_cast<std::ptrdiff_t>(kHandshakeHeaderLength + length);
    Bytes message(pending.begin(), end);
    pending.erase(pending.begin(), end);

    if (direction == Direction::ToServer) {
      handle_to_server(capture, type, std::move(message));
      return;
    }
    handle_to_client(capture, type, std::move(message));
  }
  if (capture.complete) {
    capture.pending_to_client.clear();
    capture.pending_to_client.shrink_to_fit();
  }
}

std::optional<std::string> extract_sni(ByteView client_hello_raw) {
  Cursor body(message_body(client_hello_raw, HandshakeType::client_hello), "ClientHello");
  body.skip(2 + 32);                  // legacy_version, random
  body.skip(body.number(1));          // session_id
  body.skip(body.number(2));          // cipher_suites
  body.skip(body.number(1));          // compression_methods
  if (body.done()) return std::nullopt;

  const auto extensions_length = body.number(2);
  if (extensions_length != body.remaining()) malformed("extension block length mismatch");
  while (!body.done()) {
    const auto type = body.number(2);
    Cursor ext(body.take(body.number(2)), "extension");
    if (type != kExtServerName) continue;

    Cursor list(ext.take(ext.number(2)), "server_name list");
    if (!ext.done()) malformed("server_name extension length mismatch");
    while (!list.done()) {
      const auto name_type = list.number(1);
      auto name = list.take(list.number(2));
      if (name_type != 0) continue;
      if (name.empty()) malformed("empty host_name");
      std::string host;
      host.reserve(name.size());
      for (auto c : name) {
        if (c < 0x21 || c > 0x7e) malformed("host_name contains non-printable bytes");
        host.push_back(static_cast<char>(std::tolower(c)));
      }
      return host;
    }
    return std::nullopt;
  }
  return std::nullopt;
}

ProtocolVersion server_hello_version(ByteView server_hello_raw) {
  Cursor body(message_body(server_hello_raw, HandshakeType::server_hello), "ServerHello");
  auto legacy = body.take(2);
  ProtocolVersion version{legacy[0], legacy[1]};
  body.skip(32);
  body.skip(body.number(1));
  body.skip(2 + 1);  // cipher_suite, compression_method
  if (body.done()) return version;
  if (body.number(2) != body.remaining()) malformed("extension block length mismatch");
  while (!body.done()) {
    const auto type = body.number(2);
    auto data = body.take(body.number(2));
    if (type == kExtSupportedVersions && data.size() == 2) version = {data[0], data[1]};
  }
  return version;
}

void CaptureStream::feed(Direction direction, ByteView bytes) {
  if (capture_.complete) return;
  if (direction == Direction::ToServer && client_hello_done()) return;

  auto& buffer = direction == Direction::ToServer ? to_server_ : to_client_;
  buffer.insert(buffer.end(), bytes.begin(), bytes.end());
  if (footprint() > kMaxCaptureBytes) malformed("capture exceeds per-flow limit");

  std::size_t offset = 0;
  while (!capture_.complete) {
    if (direction == Direction::ToServer && client_hello_done()) break;
    auto parsed = parse_record(ByteView(buffer).subspan(offset));
    auto* record = std::get_if<ParsedRecord>(&parsed);
    if (record == nullptr) break;
    offset += record->consumed;
    feed_handshake(capture_, record->record, direction);
  }
  if (capture_.complete || (direction == Direction::ToServer && client_hello_done())) {
    buffer.clear();
    buffer.shrink_to_fit();
  } else {
    buffer.erase(buffer.begin(), buffer.begin() + static_cast<std::ptrdiff_t>(offset));
  }
}

std::size_t CaptureStream::footprint() const {
  std::size_t total = to_server_.capacity() + to_client_.capacity() + capture_.client_hello_raw.capacity() +
                      capture_.server_hello_raw.capacity() + capture_.pending_to_server.capacity() +
                      capture_.pending_to_client.capacity();
  for (const auto& cert : capture_.certificate_chain) total += cert.capacity();
  return total;
}

}  // namespace certgate::tls
