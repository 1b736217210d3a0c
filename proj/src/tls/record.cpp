#include "certgate/tls/record.hpp"

#include "certgate/tls/errors.hpp"

namespace certgate::tls {

Classification classify_first_bytes(ByteView prefix) {
  if (prefix.size() < 3) return Classification::NeedMoreData;
  const bool tls = prefix[0] == static_cast<std::uint8_t>(ContentType::handshake) && prefix[1] == 3 &&
                   prefix[2] <= 4;
  return tls ? Classification::Tls : Classification::NotTls;
}

std::variant<ParsedRecord, Incomplete> parse_record(ByteView buffer) {
  if (buffer.size() < kRecordHeaderLength) {
    if (!buffer.empty() && (buffer[0] < 20 || buffer[0] > 23)) {
      throw WireError(WireErrorCode::MalformedRecord, "invalid content type " + std::to_string(buffer[0]));
    }
    return Incomplete{};
  }
  const std::uint8_t type = buffer[0];
  if (type < 20 || type > 23) {
    throw WireError(WireErrorCode::MalformedRecord, "invalid content type " + std::to_string(type));
  }
  const std::size_t length = read_be(buffer, 3, 2);
  if (length > kMaxRecordLength) {
    throw WireError(WireErrorCode::MalformedRecord, "record length " + std::to_string(length) + " over ceiling");
  }
  if (buffer.size() < kRecordHeaderLength + length) return Incomplete{};

  ParsedRecord parsed;
  parsed.record.type = static_cast<ContentType>(type);
  parsed.record.version = {buffer[1], buffer[2]};
  parsed.record.payload.assign(buffer.begin() + kRecordHeaderLength,
                               buffer.begin() + static_cast<std::ptrdiff_t>(kRecordHeaderLength + length));
  parsed.consumed = kRecordHeaderLength + length;
  return parsed;
}

Bytes encode_record(const TlsRecord& record) {
  Bytes out;
  out.reserve(kRecordHeaderLength + record.payload.size());
  out.push_back(static_cast<std::uint8_t>(record.type));
  out.push_back(record.version.major);
  out.push_back(record.version.minor);
  append_be(out, record.payload.size(), 2);
  out.insert(out.end(), record.payload.begin(), record.payload.end());
  return out;
}

}  // namespace certgate::tls
