#include "certgate/tls/der.hpp"

namespace certgate::tls::der {

std::optional<Element> read(ByteView data, std::size_t offset, std::size_t limit) {
  if (limit > data.size() || offset + 2 > limit) return std::nullopt;
  Element e;
  e.tag = data[offset];
  e.offset = offset;
  if ((e.tag & 0x1f) == 0x1f) return std::nullopt;  // high tag numbers never occur in X.509

  std::size_t pos = offset + 1;
  const std::uint8_t first = data[pos++];
  std::size_t length = 0;
  if (first < 0x80) {
    length = first;
  } else {
    const std::size_t count = first & 0x7f;
    if (count == 0 || count > 4 || pos + count > limit) return std::nullopt;
    for (std::size_t i = 0; i < count; ++i) length = (length << 8) | data[pos++];
  }
  if (length > limit - pos) return std::nullopt;
  e.content_offset = pos;
  e.content_length = length;
  return e;
}

std::optional<std::vector<Element>> children(ByteView data, const Element& parent) {
  if ((parent.tag & 0x20) == 0) return std::nullopt;
  std::vector<Element> out;
  std::size_t pos = parent.content_offset;
  while (pos < parent.end()) {
    auto child = read(data, pos, parent.end());
    if (!child) return std::nullopt;
    out.push_back(*child);
    pos = child->end();
  }
  return out;
}

}  // namespace certgate::tls::der
