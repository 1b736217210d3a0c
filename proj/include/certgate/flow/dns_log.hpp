#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>

#include "certgate/core/address.hpp"
#include "certgate/core/socket.hpp"

namespace certgate::flow {

struct DnsObservation {
  IpAddress address;
  std::string hostname;
  std::time_t observed_at = 0;
};

// Address to hostname map fed by DNS observations. The newest observation per address wins
// and entries older than the TTL are not returned.
class DnsLog {
 public:
  explicit DnsLog(std::chrono::seconds ttl = std::chrono::seconds(300)) : ttl_(ttl) {}

  void record(const DnsObservation& obs);
  std::optional<std::string> infer_host(const IpAddress& address, std::time_t now) const;

  // "<unix-ts> <ip> <hostname>"; returns false for lines that do not parse.
  bool ingest_line(std::string_view line);

  std::size_t size() const;

 private:
  std::chrono::seconds ttl_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<IpAddress, DnsObservation> entries_;
};

// Feeds a DnsLog from a file (lines appended over time are picked up) or, for paths of the
// form "unix:<path>", from a local stream socket accepting any number of writers.
class DnsFeed {
 public:
  DnsFeed(DnsLog& log, std::string source);
  ~DnsFeed();

  void start();
  void stop();

 private:
  void follow_file(const std::filesystem::path& path);
  void serve_socket();

  DnsLog& log_;
  std::string source_;
  std::atomic<bool> stopping_{false};
  UniqueFd listener_;
  UniqueFd wake_;
  std::thread worker_;
};

}  // namespace certgate::flow
