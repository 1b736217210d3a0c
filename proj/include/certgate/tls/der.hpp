#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "certgate/core/bytes.hpp"

namespace certgate::tls::der {

inline constexpr std::uint8_t kSequence = 0x30;
inline constexpr std::uint8_t kBitString = 0x03;
inline constexpr std::uint8_t kInteger = 0x02;
inline constexpr std::uint8_t kContextVersion = 0xa0;

// One TLV located inside a larger buffer. Offsets are absolute.
struct Element {
  std::uint8_t tag = 0;
  std::size_t offset = 0;          // first byte of the tag
  std::size_t content_offset = 0;  // first byte of the value
  std::size_t content_length = 0;

  std::size_t end() const { return content_offset + content_length; }
};

// Reads the TLV at offset, bounded by limit. Single-byte tags and definite lengths only.
std::optional<Element> read(ByteView data, std::size_t offset, std::size_t limit);

// Direct children of a constructed element.
std::optional<std::vector<Element>> children(ByteView data, const Element& parent);

}  // namespace certgate::tls::der
