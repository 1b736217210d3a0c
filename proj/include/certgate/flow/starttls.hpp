#pragma once

#include <ctime>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>

namespace certgate::flow {

struct StarttlsHostRecord {
  std::string host;  // hostname, or the address when none is known
  std::uint16_t port = 0;
  bool offers_starttls = false;
  std::time_t first_seen = 0;
};

// Hosts seen offering STARTTLS. Backed by an append-only TSV file
// (host<TAB>port<TAB>offers<TAB>first_seen) that is compacted when loaded.
// An empty path keeps records in memory.
class StarttlsStore {
 public:
  explicit StarttlsStore(std::filesystem::path path = {});

  std::optional<StarttlsHostRecord> find(const std::string& host, std::uint16_t port) const;
  // Records that the host offered STARTTLS. Existing offering records are kept unchanged.
  void mark_offered(const std::string& host, std::uint16_t port, std::time_t now);

  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::uint16_t>, StarttlsHostRecord> records_;
};

enum class Enforcement { Permit, Sever };

// Sever only when the host is known to offer STARTTLS and this session's server did not.
Enforcement enforce_starttls(const std::optional<StarttlsHostRecord>& record, bool session_offered);

}  // namespace certgate::flow
