#include "certgate/flow/starttls.hpp"

#include <unistd.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

namespace certgate::flow {
namespace {

template <typename T>
bool parse_int(const std::string& s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

StarttlsStore::StarttlsStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty()) return;
  std::ifstream in(path_);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    std::istringstream fields(line);
    std::string host, port, offers, seen;
    StarttlsHostRecord r;
    if (!std::getline(fields, host, '\t') || !std::getline(fields, port, '\t') ||
        !std::getline(fields, offers, '\t') || !std::getline(fields, seen) || host.empty() ||
        !parse_int(port, r.port) || (offers != "0" && offers != "1") || !parse_int(seen, r.first_seen)) {
      spdlog::warn("starttls store: skipping malformed line {}", lines);
      continue;
    }
    r.host = host;
    r.offers_starttls = offers == "1";
    auto& slot = records_[{r.host, r.port}];
    // An offering record is never downgraded; the earliest first_seen is kept.
    if (slot.host.empty()) {
      slot = r;
    } else {
      slot.offers_starttls = slot.offers_starttls || r.offers_starttls;
      slot.first_seen = std::min(slot.first_seen, r.first_seen);
    }
  }
  if (lines == records_.size()) return;

  auto tmp = path_;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& [key, r] : records_) {
      out << r.host << '\t' << r.port << '\t' << (r.offers_starttls ? 1 : 0) << '\t' << r.first_seen << '\n';
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path_, ec);
  if (ec) spdlog::warn("starttls store: compaction failed: {}", ec.message());
}

std::optional<StarttlsHostRecord> StarttlsStore::find(const std::string& host, std::uint16_t port) const {
  std::shared_lock lock(mutex_);
  auto it = records_.find({host, port});
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void StarttlsStore::mark_offered(const std::string& host, std::uint16_t port, std::time_t now) {
  std::unique_lock lock(mutex_);
  auto& r = records_[{host, port}];
  if (r.offers_starttls) return;
  r = {host, port, true, r.host.empty() ? now : r.first_seen};
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  out << host << '\t' << port << "\t1\t" << r.first_seen << '\n';
  if (!out) spdlog::error("starttls store: cannot append to {}", path_.string());
}

std::size_t StarttlsStore::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

Enforcement enforce_starttls(const std::optional<StarttlsHostRecord>& record, bool session_offered) {
  return record && record->offers_starttls && !session_offered ? Enforcement::Sever : Enforcement::Permit;
}

}  // namespace certgate::flow
