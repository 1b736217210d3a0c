#pragma once

#include <cstdint>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "certgate/core/bytes.hpp"
#include "certgate/plugins/x509.hpp"

namespace certgate::harness {

// P-256 key whose private scalar is derived from label, so fixtures are reproducible.
x509::KeyPtr derive_key(std::string_view label);

struct CertSpec {
  std::string common_name;
  std::vector<std::string> dns_names;
  bool is_ca = false;
  std::time_t not_before = 0;
  std::time_t not_after = 0;
  std::uint64_t serial = 1;
  std::optional<std::string> ocsp_url;
};

struct Identity {
  x509::CertPtr cert;
  x509::KeyPtr key;

  Bytes der() const { return x509::to_der(cert.get()); }
};

// Issues a certificate for subject_key. A null issuer makes it self-signed.
x509::CertPtr issue(const CertSpec& spec, EVP_PKEY* subject_key, X509* issuer, EVP_PKEY* issuer_key);

Identity make_identity(const CertSpec& spec, std::string_view key_label, const Identity* issuer);

// The PKI used by the threat scenarios: a legitimate root and intermediate, leaves for the
// protected host, and the attacker's material.
class FixturePki {
 public:
  static constexpr const char* kHost = "site.test";
  static constexpr const char* kOtherHost = "other.test";
  static constexpr const char* kMailHost = "smtp.test";
  static constexpr const char* kOcspUrl = "http://ocsp.site.test/";

  static FixturePki generate(std::time_t now);
  // Reads a directory produced by write().
  static FixturePki load(const std::filesystem::path& dir);

  Identity root;
  Identity intermediate;
  Identity genuine;     // site.test, issued by the intermediate
  Identity coerced;     // site.test, issued by the intermediate to an attacker key
  Identity wrong_host;  // other.test, valid chain
  Identity revoked;     // site.test, listed as revoked
  Identity expired;     // site.test, notAfter in the past
  Identity self_signed; // site.test, no issuer
  Identity mail;        // smtp.test, issued by the intermediate
  Identity rogue_root;
  Identity rogue_leaf;  // site.test, issued by rogue_root

  // leaf DER followed by its issuing chain (roots are not sent)
  std::vector<Bytes> chain_for(const Identity& leaf) const;

  // Layout:
  //   anchors/root.pem        trust anchors for the CA plugin
  //   rogue/rogue_root.pem    the attacker's root (never an engine anchor)
  //   <name>.der / <name>.key.pem for each identity
  //   revoked.txt             SHA-256 fingerprints of revoked leaves
  void write(const std::filesystem::path& dir) const;
};

}  // namespace certgate::harness
