#pragma once

#include "certgate/core/bytes.hpp"

namespace certgate::tls {

// Inverts every bit of the subjectPublicKey and signatureValue BIT STRING contents.
// Tags and lengths are untouched, so the result has the input's length and applying it
// twice restores the input. Throws WireError(MalformedCertificate).
Bytes scramble_certificate(ByteView leaf_der);

}  // namespace certgate::tls
