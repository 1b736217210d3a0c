#include "certgate/tls/rewrite.hpp"

#include <algorithm>
#include <variant>
#include <vector>

#include "certgate/tls/handshake.hpp"
#include "certgate/tls/record.hpp"

namespace certgate::tls {

bool rewrite_leaf(Bytes& wire, ByteView expected_leaf, ByteView replacement) {
  if (expected_leaf.size() != replacement.size() || expected_leaf.empty()) return false;

  // Concatenated handshake payload plus, for each payload byte, its offset in wire.
  Bytes stream;
  std::vector<std::size_t> origin;
  std::size_t offset = 0;
  try {
    while (offset < wire.size()) {
      auto parsed = parse_record(ByteView(wire).subspan(offset));
      auto* rec = std::get_if<ParsedRecord>(&parsed);
      if (rec == nullptr) break;
      if (rec->record.type == ContentType::handshake) {
        const std::size_t payload_at = offset + kRecordHeaderLength;
        stream.insert(stream.end(), rec->record.payload.begin(), rec->record.payload.end());
        for (std::size_t i = 0; i < rec->record.payload.size(); ++i) origin.push_back(payload_at + i);
      }
      offset += rec->consumed;
    }
  } catch (const std::exception&) {
    return false;
  }

  std::size_t pos = 0;
  while (pos + kHandshakeHeaderLength <= stream.size()) {
    const auto type = stream[pos];
    const std::size_t length = read_be(stream, pos + 1, 3);
    if (pos + kHandshakeHeaderLength + length > stream.size()) return false;
    if (type == static_cast<std::uint8_t>(HandshakeType::certificate)) {
      const std::size_t entry = pos + kHandshakeHeaderLength + 3;
      if (entry + 3 > stream.size()) return false;
      const std::size_t leaf_length = read_be(stream, entry, 3);
      const std::size_t leaf_at = entry + 3;
      if (leaf_length != expected_leaf.size() || leaf_at + leaf_length > pos + kHandshakeHeaderLength + length) {
        return false;
      }
      if (!std::equal(expected_leaf.begin(), expected_leaf.end(), stream.begin() + leaf_at)) return false;
      for (std::size_t i = 0; i < leaf_length; ++i) wire[origin[leaf_at + i]] = replacement[i];
      return true;
    }
    pos += kHandshakeHeaderLength + length;
  }
  return false;
}

}  // namespace certgate::tls
