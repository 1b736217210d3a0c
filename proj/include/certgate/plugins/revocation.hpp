#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "certgate/engine/types.hpp"

namespace certgate::plugins {

// Local stand-in for an OCSP-backed check, driven by a list of revoked leaf fingerprints.
// Leaf without an OCSP responder URL: Abstain. Listed: Invalid. Otherwise Valid.
// When the list cannot be read every query is Error, as for an unreachable responder.
class RevocationList {
 public:
  static RevocationList load(const std::filesystem::path& path);

  engine::PluginVerdict check(const engine::ValidationQuery& query) const;

  bool available() const { return revoked_.has_value(); }

 private:
  std::optional<std::set<std::string>> revoked_;
};

}  // namespace certgate::plugins
