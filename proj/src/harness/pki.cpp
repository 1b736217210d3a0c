#include "certgate/harness/pki.hpp"

#include <openssl/bn.h>
#include <openssl/core_names.h>
#include <openssl/ec.h>
#include <openssl/obj_mac.h>
#include <openssl/param_build.h>
#include <openssl/pem.h>
#include <openssl/x509v3.h>

#include <fstream>
#include <stdexcept>

namespace certgate::harness {

namespace {

struct BnDeleter {
  void operator()(BIGNUM* bn) const { BN_free(bn); }
};
using BnPtr = std::unique_ptr<BIGNUM, BnDeleter>;

void check(bool ok, const char* what) {
  if (!ok) throw std::runtime_error(std::string(what) + ": " + x509::last_error());
}

void add_extension(X509* cert, X509* issuer, int nid, const std::string& value) {
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, issuer, cert, nullptr, nullptr, 0);
  X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value.c_str());
  check(ext != nullptr, "X509V3_EXT_conf_nid");
  X509_add_ext(cert, ext, -1);
  X509_EXTENSION_free(ext);
}

void write_file(const std::filesystem::path& path, ByteView data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_pem_cert(const std::filesystem::path& path, X509* cert) {
  BIO* bio = BIO_new_file(path.c_str(), "w");
  check(bio != nullptr, "BIO_new_file");
  PEM_write_bio_X509(bio, cert);
  BIO_free(bio);
}

void write_pem_key(const std::filesystem::path& path, EVP_PKEY* key) {
  BIO* bio = BIO_new_file(path.c_str(), "w");
  check(bio != nullptr, "BIO_new_file");
  PEM_write_bio_PrivateKey(bio, key, nullptr, nullptr, 0, nullptr, nullptr);
  BIO_free(bio);
}

}  // namespace

x509::KeyPtr derive_key(std::string_view label) {
  const std::string seed = "certgate-fixture-key:" + std::string(label);
  unsigned char digest[32];
  unsigned int len = 0;
  EVP_Digest(seed.data(), seed.size(), digest, &len, EVP_sha256(), nullptr);

  EC_GROUP* group = EC_GROUP_new_by_curve_name(NID_X9_62_prime256v1);
  BnPtr priv(BN_bin2bn(digest, 32, nullptr));
  BN_CTX* bn_ctx = BN_CTX_new();
  BN_mod(priv.get(), priv.get(), EC_GROUP_get0_order(group), bn_ctx);
  if (BN_is_zero(priv.get())) BN_one(priv.get());

  EC_POINT* pub = EC_POINT_new(group);
  EC_POINT_mul(group, pub, priv.get(), nullptr, nullptr, bn_ctx);
  unsigned char pub_buf[65];
  const std::size_t pub_len =
      EC_POINT_point2oct(group, pub, POINT_CONVERSION_UNCOMPRESSED, pub_buf, sizeof(pub_buf), bn_ctx);
  EC_POINT_free(pub);
  BN_CTX_free(bn_ctx);
  EC_GROUP_free(group);

  OSSL_PARAM_BLD* bld = OSSL_PARAM_BLD_new();
  OSSL_PARAM_BLD_push_utf8_string(bld, OSSL_PKEY_PARAM_GROUP_NAME, "prime256v1", 0);
  OSSL_PARAM_BLD_push_BN(bld, OSSL_PKEY_PARAM_PRIV_KEY, priv.get());
  OSSL_PARAM_BLD_push_octet_string(bld, OSSL_PKEY_PARAM_PUB_KEY, pub_buf, pub_len);
  OSSL_PARAM* params = OSSL_PARAM_BLD_to_param(bld);

  EVP_PKEY_CTX* ctx = EVP_PKEY_CTX_new_from_name(nullptr, "EC", nullptr);
  EVP_PKEY* key = nullptr;
  const bool ok = EVP_PKEY_fromdata_init(ctx) == 1 && EVP_PKEY_fromdata(ctx, &key, EVP_PKEY_KEYPAIR, params) == 1;
  EVP_PKEY_CTX_free(ctx);
  OSSL_PARAM_free(params);
  OSSL_PARAM_BLD_free(bld);
  check(ok, "EVP_PKEY_fromdata");
  return x509::KeyPtr(key);
}

x509::CertPtr issue(const CertSpec& spec, EVP_PKEY* subject_key, X509* issuer, EVP_PKEY* issuer_key) {
  x509::CertPtr cert(X509_new());
  X509* x = cert.get();
  X509_set_version(x, 2);
  ASN1_INTEGER_set_uint64(X509_get_serialNumber(x), spec.serial);
  ASN1_TIME_set(X509_getm_notBefore(x), spec.not_before);
  ASN1_TIME_set(X509_getm_notAfter(x), spec.not_after);
  X509_set_pubkey(x, subject_key);

  X509_NAME* name = X509_get_subject_name(x);
  X509_NAME_add_entry_by_txt(name, "O", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("certgate fixtures"),
                             -1, -1, 0);
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC,
                             reinterpret_cast<const unsigned char*>(spec.common_name.c_str()), -1, -1, 0);
  X509* signer = issuer != nullptr ? issuer : x;
  X509_set_issuer_name(x, X509_get_subject_name(signer));

  add_extension(x, signer, NID_basic_constraints, spec.is_ca ? "critical,CA:TRUE" : "critical,CA:FALSE");
  add_extension(x, signer, NID_key_usage,
                spec.is_ca ? "critical,keyCertSign,cRLSign" : "critical,digitalSignature,keyEncipherment");
  add_extension(x, signer, NID_subject_key_identifier, "hash");
  if (issuer != nullptr) add_extension(x, signer, NID_authority_key_identifier, "keyid:always");
  if (!spec.dns_names.empty()) {
    std::string sans;
    for (const auto& dns : spec.dns_names) sans += (sans.empty() ? "DNS:" : ",DNS:") + dns;
    add_extension(x, signer, NID_subject_alt_name, sans);
  }
  if (spec.ocsp_url) add_extension(x, signer, NID_info_access, "OCSP;URI:" + *spec.ocsp_url);

  check(X509_sign(x, issuer_key != nullptr ? issuer_key : subject_key, EVP_sha256()) > 0, "X509_sign");
  return cert;
}

Identity make_identity(const CertSpec& spec, std::string_view key_label, const Identity* issuer) {
  Identity id;
  id.key = derive_key(key_label);
  id.cert = issue(spec, id.key.get(), issuer ? issuer->cert.get() : nullptr, issuer ? issuer->key.get() : nullptr);
  return id;
}

FixturePki FixturePki::generate(std::time_t now) {
  constexpr std::time_t kDay = 24 * 3600;
  const std::time_t from = now - 30 * kDay;
  const std::time_t until = now + 365 * kDay;

  auto leaf = [&](std::string cn, std::uint64_t serial) {
    CertSpec spec;
    spec.common_name = cn;
    spec.dns_names = {cn, "www." + cn};
    spec.not_before = from;
    spec.not_after = until;
    spec.serial = serial;
    spec.ocsp_url = kOcspUrl;
    return spec;
  };

  FixturePki pki;
  pki.root = make_identity({"certgate fixture root", {}, true, from, now + 3650 * kDay, 1, {}}, "root", nullptr);
  pki.intermediate =
      make_identity({"certgate fixture intermediate", {}, true, from, now + 1825 * kDay, 2, {}}, "intermediate",
                    &pki.root);
  pki.genuine = make_identity(leaf(kHost, 100), "genuine", &pki.intermediate);
  pki.coerced = make_identity(leaf(kHost, 101), "coerced", &pki.intermediate);
  pki.wrong_host = make_identity(leaf(kOtherHost, 102), "wrong-host", &pki.intermediate);
  pki.revoked = make_identity(leaf(kHost, 103), "revoked", &pki.intermediate);

  auto expired = leaf(kHost, 104);
  expired.not_before = now - 400 * kDay;
  expired.not_after = now - 35 * kDay;
  pki.expired = make_identity(expired, "expired", &pki.intermediate);

  auto self = leaf(kHost, 105);
  self.ocsp_url.reset();
  pki.self_signed = make_identity(self, "self-signed", nullptr);
  pki.mail = make_identity(leaf(kMailHost, 106), "mail", &pki.intermediate);

  pki.rogue_root = make_identity({"certgate rogue root", {}, true, from, now + 3650 * kDay, 7, {}}, "rogue-root", nullptr);
  auto rogue = leaf(kHost, 107);
  rogue.ocsp_url.reset();
  pki.rogue_leaf = make_identity(rogue, "rogue-leaf", &pki.rogue_root);
  return pki;
}

std::vector<Bytes> FixturePki::chain_for(const Identity& leaf) const {
  std::vector<Bytes> chain{leaf.der()};
  if (x509::names_match(X509_get_issuer_name(leaf.cert.get()), X509_get_subject_name(intermediate.cert.get()))) {
    chain.push_back(intermediate.der());
  }
  return chain;
}

namespace {

template <typename Pki, typename Fn>
void for_each_identity(Pki& pki, Fn&& fn) {
  fn("root", pki.root);
  fn("intermediate", pki.intermediate);
  fn("genuine", pki.genuine);
  fn("coerced", pki.coerced);
  fn("wrong_host", pki.wrong_host);
  fn("revoked", pki.revoked);
  fn("expired", pki.expired);
  fn("self_signed", pki.self_signed);
  fn("mail", pki.mail);
  fn("rogue_root", pki.rogue_root);
  fn("rogue_leaf", pki.rogue_leaf);
}

}  // namespace

void FixturePki::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir / "anchors");
  std::filesystem::create_directories(dir / "rogue");
  write_pem_cert(dir / "anchors" / "root.pem", root.cert.get());
  write_pem_cert(dir / "rogue" / "rogue_root.pem", rogue_root.cert.get());

  for_each_identity(*this, [&](const std::string& name, const Identity& id) {
    write_file(dir / (name + ".der"), id.der());
    write_pem_key(dir / (name + ".key.pem"), id.key.get());
  });
  std::ofstream revoked_list(dir / "revoked.txt", std::ios::trunc);
  revoked_list << x509::sha256_hex(revoked.der()) << "\n";
}

FixturePki FixturePki::load(const std::filesystem::path& dir) {
  FixturePki pki;
  for_each_identity(pki, [&](const std::string& name, Identity& id) {
    id.cert = x509::load_file(dir / (name + ".der"));
    const auto key_path = dir / (name + ".key.pem");
    BIO* bio = BIO_new_file(key_path.c_str(), "r");
    if (!bio) throw std::runtime_error("cannot read " + key_path.string());
    id.key.reset(PEM_read_bio_PrivateKey(bio, nullptr, nullptr, nullptr));
    BIO_free(bio);
    if (!id.cert || !id.key) throw std::runtime_error("bad fixture identity " + name);
  });
  return pki;
}

}  // namespace certgate::harness
