#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>

#include "certgate/core/bytes.hpp"

namespace certgate::tls {

enum class ContentType : std::uint8_t {
  change_cipher_spec = 20,
  alert = 21,
  handshake = 22,
  application_data = 23,
};

struct ProtocolVersion {
  std::uint8_t major = 0;
  std::uint8_t minor = 0;

  std::uint16_t wire() const { return static_cast<std::uint16_t>(major << 8 | minor); }
  friend bool operator==(const ProtocolVersion&, const ProtocolVersion&) = default;
};

inline constexpr ProtocolVersion kTls10{3, 1};
inline constexpr ProtocolVersion kTls11{3, 2};
inline constexpr ProtocolVersion kTls12{3, 3};
inline constexpr ProtocolVersion kTls13{3, 4};

inline constexpr std::size_t kRecordHeaderLength = 5;
// 2^14 plaintext plus the 2048 bytes of expansion the record layer permits.
inline constexpr std::size_t kMaxRecordLength = 16384 + 2048;

struct TlsRecord {
  ContentType type = ContentType::handshake;
  ProtocolVersion version;
  Bytes payload;

  std::uint16_t length() const { return static_cast<std::uint16_t>(payload.size()); }
};

enum class Classification { Tls, NotTls, NeedMoreData };

// Looks at the first bytes a client sent and decides whether they open a TLS record.
Classification classify_first_bytes(ByteView prefix);

struct Incomplete {};

struct ParsedRecord {
  TlsRecord record;
  std::size_t consumed = 0;
};

// Parses one record from the start of buffer. Throws WireError(MalformedRecord).
std::variant<ParsedRecord, Incomplete> parse_record(ByteView buffer);

Bytes encode_record(const TlsRecord& record);

}  // namespace certgate::tls
