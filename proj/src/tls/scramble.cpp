#include "certgate/tls/scramble.hpp"

#include "certgate/tls/der.hpp"
#include "certgate/tls/errors.hpp"

namespace certgate::tls {

namespace {

[[noreturn]] void malformed(const char* what) {
  throw WireError(WireErrorCode::MalformedCertificate, what);
}

std::vector<der::Element> expect_sequence(ByteView data, const der::Element& e, const char* what) {
  if (e.tag != der::kSequence) malformed(what);
  auto kids = der::children(data, e);
  if (!kids) malformed(what);
  return *kids;
}

void invert_bit_string(Bytes& out, const der::Element& e) {
  // The first content octet counts unused bits and is left alone.
  if (e.tag != der::kBitString || e.content_length < 2) malformed("expected a non-empty BIT STRING");
  for (std::size_t i = e.content_offset + 1; i < e.end(); ++i) out[i] = static_cast<std::uint8_t>(~out[i]);
}

}  // namespace

Bytes scramble_certificate(ByteView leaf_der) {
  auto cert = der::read(leaf_der, 0, leaf_der.size());
  if (!cert || cert->end() != leaf_der.size()) malformed("not a single DER element");
  auto top = expect_sequence(leaf_der, *cert, "Certificate is not a SEQUENCE");
  if (top.size() != 3) malformed("Certificate must have three fields");

  auto tbs = expect_sequence(leaf_der, top[0], "tbsCertificate is not a SEQUENCE");
  std::size_t index = 0;
  if (!tbs.empty() && tbs[0].tag == der::kContextVersion) ++index;
  // serialNumber, signature, issuer, validity, subject, subjectPublicKeyInfo
  index += 5;
  if (tbs.size() <= index || tbs[index - 5].tag != der::kInteger) malformed("tbsCertificate too short");
  auto spki = expect_sequence(leaf_der, tbs[index], "subjectPublicKeyInfo is not a SEQUENCE");
  if (spki.size() != 2) malformed("subjectPublicKeyInfo must have two fields");

  Bytes out(leaf_der.begin(), leaf_der.end());
  invert_bit_string(out, spki[1]);
  invert_bit_string(out, top[2]);
  return out;
}

}  // namespace certgate::tls
