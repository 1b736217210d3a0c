#include "certgate/plugins/revocation.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <spdlog/spdlog.h>

#include "certgate/plugins/x509.hpp"

namespace certgate::plugins {

RevocationList RevocationList::load(const std::filesystem::path& path) {
  RevocationList list;
  std::ifstream in(path);
  if (!in) {
    spdlog::warn("revocation list {} unavailable", path.string());
    return list;
  }
  list.revoked_.emplace();
  std::string line;
  while (std::getline(in, line)) {
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
    std::transform(line.begin(), line.end(), line.begin(), [](unsigned char c) { return std::tolower(c); });
    if (!line.empty() && line.front() != '#') list.revoked_->insert(line);
  }
  return list;
}

engine::PluginVerdict RevocationList::check(const engine::ValidationQuery& query) const {
  using engine::PluginVerdict;
  if (query.chain.empty()) return PluginVerdict::Error;
  auto leaf = x509::parse_der(query.chain.front());
  if (!leaf) return PluginVerdict::Error;
  if (!x509::ocsp_url(leaf.get())) return PluginVerdict::Abstain;
  if (!revoked_) return PluginVerdict::Error;
  return revoked_->count(x509::sha256_hex(query.chain.front())) ? PluginVerdict::Invalid : PluginVerdict::Valid;
}

}  // namespace certgate::plugins
