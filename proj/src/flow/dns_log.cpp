#include "certgate/flow/dns_log.hpp"

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

namespace certgate::flow {

void DnsLog::record(const DnsObservation& obs) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.try_emplace(obs.address, obs);
  if (!inserted && obs.observed_at >= it->second.observed_at) it->second = obs;
}

std::optional<std::string> DnsLog::infer_host(const IpAddress& address, std::time_t now) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(address);
  if (it == entries_.end() || now - it->second.observed_at > ttl_.count()) return std::nullopt;
  return it->second.hostname;
}

bool DnsLog::ingest_line(std::string_view line) {
  std::istringstream in{std::string(line)};
  std::string ts, ip, host, extra;
  if (!(in >> ts >> ip >> host) || (in >> extra)) return false;
  std::time_t when = 0;
  auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), when);
  if (ec != std::errc{} || ptr != ts.data() + ts.size()) return false;
  auto address = IpAddress::parse(ip);
  if (!address) return false;
  std::transform(host.begin(), host.end(), host.begin(), [](unsigned char c) { return std::tolower(c); });
  record({*address, host, when});
  return true;
}

std::size_t DnsLog::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

DnsFeed::DnsFeed(DnsLog& log, std::string source) : log_(log), source_(std::move(source)) {}

DnsFeed::~DnsFeed() { stop(); }

void DnsFeed::start() {
  int fd = eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
  if (fd < 0) throw SocketError("eventfd failed");
  wake_ = UniqueFd(fd);
  if (source_.rfind("unix:", 0) == 0) {
    const std::filesystem::path path = source_.substr(5);
    std::error_code ec;
    std::filesystem::remove(path, ec);
    listener_ = listen_unix(path, 0600);
    worker_ = std::thread([this] { serve_socket(); });
  } else {
    worker_ = std::thread([this] { follow_file(source_); });
  }
}

void DnsFeed::stop() {
  if (stopping_.exchange(true)) return;
  if (wake_) {
    std::uint64_t one = 1;
    [[maybe_unused]] auto n = write(wake_.get(), &one, sizeof one);
  }
  if (worker_.joinable()) worker_.join();
  if (listener_ && source_.rfind("unix:", 0) == 0) {
    std::error_code ec;
    std::filesystem::remove(source_.substr(5), ec);
  }
}

void DnsFeed::follow_file(const std::filesystem::path& path) {
  std::streamoff offset = 0;
  std::string partial;
  while (!stopping_) {
    std::ifstream in(path, std::ios::binary);
    if (in) {
      in.seekg(0, std::ios::end);
      const auto end = in.tellg();
      if (end < offset) offset = 0;  // truncated or replaced
      in.seekg(offset);
      std::string chunk(static_cast<std::size_t>(end - offset), '\0');
      in.read(chunk.data(), static_cast<std::streamsize>(chunk.size()));
      offset = end;
      partial += chunk;
      std::size_t pos;
      while ((pos = partial.find('\n')) != std::string::npos) {
        if (!log_.ingest_line(std::string_view(partial).substr(0, pos))) spdlog::debug("dns feed: bad line");
        partial.erase(0, pos + 1);
      }
    }
    pollfd p{wake_.get(), POLLIN, 0};
    poll(&p, 1, 200);
  }
}

void DnsFeed::serve_socket() {
  struct Reader {
    UniqueFd fd;
    std::string partial;
  };
  std::vector<Reader> readers;
  while (!stopping_) {
    std::vector<pollfd> fds{{wake_.get(), POLLIN, 0}, {listener_.get(), POLLIN, 0}};
    for (auto& r : readers) fds.push_back({r.fd.get(), POLLIN, 0});
    if (poll(fds.data(), fds.size(), -1) < 0 && errno != EINTR) break;
    if (fds[0].revents) break;
    if (fds[1].revents & POLLIN) {
      int fd = accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd >= 0) readers.push_back({UniqueFd(fd), {}});
    }
    for (std::size_t i = 2; i < fds.size(); ++i) {
      if (!fds[i].revents) continue;
      auto& r = readers[i - 2];
      char buf[4096];
      const auto n = read(r.fd.get(), buf, sizeof buf);
      if (n <= 0) {
        r.fd.reset();
        continue;
      }
      r.partial.append(buf, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = r.partial.find('\n')) != std::string::npos) {
        log_.ingest_line(std::string_view(r.partial).substr(0, pos));
        r.partial.erase(0, pos + 1);
      }
      if (r.partial.size() > 4096) r.partial.clear();
    }
    readers.erase(std::remove_if(readers.begin(), readers.end(), [](const Reader& r) { return !r.fd; }), readers.end());
  }
}

}  // namespace certgate::flow
