#pragma once

#include <stdexcept>
#include <string>

namespace certgate::tls {

enum class WireErrorCode {
  MalformedRecord,
  MalformedHandshake,
  UnsupportedFlow,
  MalformedCertificate,
};

const char* to_string(WireErrorCode code);

class WireError : public std::runtime_error {
 public:
  WireError(WireErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  WireErrorCode code() const { return code_; }

 private:
  WireErrorCode code_;
};

}  // namespace certgate::tls
