#include "certgate/tls/errors.hpp"

namespace certgate::tls {

const char* to_string(WireErrorCode code) {
  switch (code) {
    case WireErrorCode::MalformedRecord: return "MalformedRecord";
    case WireErrorCode::MalformedHandshake: return "MalformedHandshake";
    case WireErrorCode::UnsupportedFlow: return "UnsupportedFlow";
    case WireErrorCode::MalformedCertificate: return "MalformedCertificate";
  }
  return "WireError";
}

}  // namespace certgate::tls
