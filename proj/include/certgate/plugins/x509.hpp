#pragma once

#include <openssl/evp.h>
#include <openssl/x509.h>

#include <ctime>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "certgate/core/bytes.hpp"

namespace certgate::x509 {

struct CertDeleter {
  void operator()(X509* cert) const { X509_free(cert); }
};
struct KeyDeleter {
  void operator()(EVP_PKEY* key) const { EVP_PKEY_free(key); }
};

using CertPtr = std::unique_ptr<X509, CertDeleter>;
using KeyPtr = std::unique_ptr<EVP_PKEY, KeyDeleter>;

CertPtr parse_der(ByteView der);
CertPtr up_ref(X509* cert);
Bytes to_der(const X509* cert);

// Reads one certificate, DER or PEM.
CertPtr load_file(const std::filesystem::path& path);

std::string sha256_hex(ByteView data);

std::time_t not_before(const X509* cert);
std::time_t not_after(const X509* cert);
bool within_validity(const X509* cert, std::time_t now);

std::vector<std::string> dns_names(const X509* cert);
std::optional<std::string> common_name(const X509* cert);
bool is_ca(const X509* cert);
bool names_match(const X509_NAME* a, const X509_NAME* b);
// Issuer name matches the issuer's subject and the signature verifies with its key.
bool signed_by(X509* cert, X509* issuer);
bool self_signed(X509* cert);
std::optional<std::string> ocsp_url(const X509* cert);

// Drains the OpenSSL error queue into one line.
std::string last_error();

}  // namespace certgate::x509
