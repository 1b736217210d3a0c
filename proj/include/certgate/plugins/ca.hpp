#pragma once

#include <ctime>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "certgate/engine/types.hpp"
#include "certgate/plugins/x509.hpp"

namespace certgate::plugins {

class TrustAnchorStore {
 public:
  // Loads every certificate file in dir. Entries that are not self-signed or are outside
  // their validity period at now are logged and skipped.
  static TrustAnchorStore load(const std::filesystem::path& dir, std::time_t now);

  // Returns false (and skips) under the same rules as load.
  bool add(x509::CertPtr cert, std::time_t now);

  const std::vector<x509::CertPtr>& anchors() const { return anchors_; }
  const std::filesystem::path& source() const { return source_; }

 private:
  std::vector<x509::CertPtr> anchors_;
  std::filesystem::path source_;
};

// Single pattern against a hostname. Case-insensitive; "*." matches exactly one leftmost label
// and needs at least two labels after it.
bool hostname_matches(std::string_view pattern, std::string_view host);

// DNS subjectAltNames when present, otherwise the subject common name.
bool certificate_matches_host(const X509* cert, std::string_view host);

// Valid when the chain reaches an anchor through correctly signed CA certificates, every
// certificate on the path is within its validity period, and the leaf names the host.
// A good path with no hostname is Abstain; unparsable input is Error.
engine::PluginVerdict ca_validate(const engine::ValidationQuery& query, const TrustAnchorStore& anchors,
                                  std::time_t now);

}  // namespace certgate::plugins
