#pragma once

#include <ctime>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <utility>

#include "certgate/engine/types.hpp"

namespace certgate::plugins {

class StoreIo : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PinEntry {
  std::string host;
  std::uint16_t port = 0;
  std::string fingerprint;
  std::time_t not_after = 0;

  friend bool operator==(const PinEntry&, const PinEntry&) = default;
};

enum class PinOutcome { FirstUse, Match, ExpiredReplaced, Mismatch, StoreFailure, Unusable };

// Trust-on-first-use pins keyed by (host, port). The file is TSV
// host<TAB>port<TAB>sha256hex<TAB>not_after and is rewritten through a temporary file.
class PinStore {
 public:
  // An empty path keeps pins in memory only. Throws StoreIo for unreadable or corrupt files.
  explicit PinStore(std::filesystem::path path);

  struct Result {
    engine::PluginVerdict verdict;
    PinOutcome outcome;
  };

  Result check(const engine::ValidationQuery& query, std::time_t now);

  std::optional<PinEntry> find(const std::string& host, std::uint16_t port) const;
  std::size_t size() const;

  // The host part of the key: the hostname, or the address when there is none.
  static std::string key_host(const engine::ValidationQuery& query);

 private:
  void persist_locked() const;

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::uint16_t>, PinEntry> pins_;
};

}  // namespace certgate::plugins
