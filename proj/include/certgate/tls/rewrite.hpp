#pragma once

#include "certgate/core/bytes.hpp"

namespace certgate::tls {

// Overwrites the leaf certificate inside buffered server records with replacement, which
// must have the same length. The leaf may span record boundaries. Returns false, leaving
// wire untouched, when no complete Certificate message with that leaf is present.
bool rewrite_leaf(Bytes& wire, ByteView expected_leaf, ByteView replacement);

}  // namespace certgate::tls
