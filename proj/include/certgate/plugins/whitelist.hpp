#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "certgate/engine/types.hpp"

namespace certgate::plugins {

struct WhitelistEntry {
  std::string pattern;      // exact host or "*.suffix"
  std::string fingerprint;  // SHA-256 hex of the leaf DER, lowercase
};

class WhitelistError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// TSV: pattern<TAB>sha256hex per line. Blank lines and '#' lines are skipped.
std::vector<WhitelistEntry> load_whitelist(const std::filesystem::path& path);

// Valid when an entry matches both the leaf fingerprint and the host; Abstain otherwise.
engine::PluginVerdict whitelist_check(const engine::ValidationQuery& query, const std::vector<WhitelistEntry>& entries);

}  // namespace certgate::plugins
