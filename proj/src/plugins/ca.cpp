#include "certgate/plugins/ca.hpp"

#include <algorithm>
#include <cctype>

#include <spdlog/spdlog.h>

namespace certgate::plugins {
namespace {

constexpr std::size_t kMaxPathLength = 10;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool same_cert(X509* a, X509* b) { return X509_cmp(a, b) == 0; }

}  // namespace

TrustAnchorStore TrustAnchorStore::load(const std::filesystem::path& dir, std::time_t now) {
  TrustAnchorStore store;
  store.source_ = dir;
  std::error_code ec;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  if (ec) spdlog::warn("trust anchors: cannot read {}: {}", dir.string(), ec.message());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    auto cert = x509::load_file(file);
    if (!cert) {
      spdlog::warn("trust anchors: {} is not a certificate", file.string());
      continue;
    }
    if (!store.add(std::move(cert), now)) spdlog::warn("trust anchors: skipping {}", file.string());
  }
  return store;
}

bool TrustAnchorStore::add(x509::CertPtr cert, std::time_t now) {
  if (!x509::self_signed(cert.get()) || !x509::within_validity(cert.get(), now)) return false;
  anchors_.push_back(std::move(cert));
  return true;
}

bool hostname_matches(std::string_view pattern_in, std::string_view host_in) {
  const auto pattern = lower(pattern_in);
  const auto host = lower(host_in);
  if (pattern.empty() || host.empty()) return false;
  if (pattern.rfind("*.", 0) != 0) return pattern == host;

  const std::string_view suffix = std::string_view(pattern).substr(1);  // ".example.com"
  if (suffix.find('*') != std::string_view::npos) return false;
  if (std::count(suffix.begin(), suffix.end(), '.') < 2) return false;
  const auto dot = host.find('.');
  if (dot == std::string::npos || dot == 0) return false;
  return std::string_view(host).substr(dot) == suffix;
}

bool certificate_matches_host(const X509* cert, std::string_view host) {
  const auto names = x509::dns_names(cert);
  if (!names.empty()) {
    return std::any_of(names.begin(), names.end(), [&](const std::string& n) { return hostname_matches(n, host); });
  }
  auto cn = x509::common_name(cert);
  return cn && hostname_matches(*cn, host);
}

engine::PluginVerdict ca_validate(const engine::ValidationQuery& query, const TrustAnchorStore& anchors,
                                  std::time_t now) {
  using engine::PluginVerdict;
  if (query.chain.empty()) return PluginVerdict::Error;
  std::vector<x509::CertPtr> supplied;
  for (const auto& der : query.chain) {
    auto cert = x509::parse_der(der);
    if (!cert) return PluginVerdict::Error;
    supplied.push_back(std::move(cert));
  }

  X509* current = supplied.front().get();
  std::vector<bool> used(supplied.size(), false);
  used[0] = true;
  bool anchored = false;
  for (std::size_t depth = 0; depth < kMaxPathLength && !anchored; ++depth) {
    if (!x509::within_validity(current, now)) return PluginVerdict::Invalid;
    for (const auto& anchor : anchors.anchors()) {
      if (same_cert(current, anchor.get()) || x509::signed_by(current, anchor.get())) {
        if (!x509::within_validity(anchor.get(), now)) return PluginVerdict::Invalid;
        anchored = true;
        break;
      }
    }
    if (anchored) break;
    X509* next = nullptr;
    for (std::size_t i = 1; i < supplied.size(); ++i) {
      if (used[i] || !x509::is_ca(supplied[i].get())) continue;
      if (x509::signed_by(current, supplied[i].get())) {
        used[i] = true;
        next = supplied[i].get();
        break;
      }
    }
    if (!next) return PluginVerdict::Invalid;
    current = next;
  }
  if (!anchored) return PluginVerdict::Invalid;

  if (query.hostname.empty()) return PluginVerdict::Abstain;
  return certificate_matches_host(supplied.front().get(), query.hostname) ? PluginVerdict::Valid
                                                                           : PluginVerdict::Invalid;
}

}  // namespace certgate::plugins
