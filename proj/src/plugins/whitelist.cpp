#include "certgate/plugins/whitelist.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "certgate/plugins/ca.hpp"
#include "certgate/plugins/x509.hpp"

namespace certgate::plugins {
namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool is_sha256_hex(const std::string& s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isxdigit(c); });
}

}  // namespace

std::vector<WhitelistEntry> load_whitelist(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw WhitelistError("cannot read whitelist " + path.string());
  std::vector<WhitelistEntry> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) throw WhitelistError("whitelist line " + std::to_string(n) + ": expected two fields");
    WhitelistEntry e{lower(line.substr(0, tab)), lower(line.substr(tab + 1))};
    if (e.pattern.empty() || !is_sha256_hex(e.fingerprint)) {
      throw WhitelistError("whitelist line " + std::to_string(n) + ": bad entry");
    }
    out.push_back(std::move(e));
  }
  return out;
}

engine::PluginVerdict whitelist_check(const engine::ValidationQuery& query, const std::vector<WhitelistEntry>& entries) {
  if (query.chain.empty() || query.hostname.empty() || entries.empty()) return engine::PluginVerdict::Abstain;
  const auto fingerprint = x509::sha256_hex(query.chain.front());
  for (const auto& e : entries) {
    if (e.fingerprint == fingerprint && hostname_matches(e.pattern, query.hostname)) return engine::PluginVerdict::Valid;
  }
  return engine::PluginVerdict::Abstain;
}

}  // namespace certgate::plugins
