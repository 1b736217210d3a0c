#include "certgate/plugins/pinning.hpp"

#include <unistd.h>

#include <charconv>
#include <fstream>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "certgate/plugins/x509.hpp"

namespace certgate::plugins {
namespace {

template <typename T>
bool parse_int(const std::string& s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace

PinStore::PinStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw StoreIo("cannot read pin store " + path_.string());
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string host, port, fp, expiry;
    PinEntry e;
    if (!std::getline(fields, host, '\t') || !std::getline(fields, port, '\t') || !std::getline(fields, fp, '\t') ||
        !std::getline(fields, expiry) || host.empty() || fp.size() != 64 || !parse_int(port, e.port) ||
        !parse_int(expiry, e.not_after)) {
      throw StoreIo("pin store " + path_.string() + " line " + std::to_string(n) + " is corrupt");
    }
    e.host = host;
    e.fingerprint = fp;
    pins_[{e.host, e.port}] = e;
  }
}

std::string PinStore::key_host(const engine::ValidationQuery& query) {
  return query.hostname.empty() ? query.address.to_string() : query.hostname;
}

PinStore::Result PinStore::check(const engine::ValidationQuery& query, std::time_t now) {
  using engine::PluginVerdict;
  if (query.chain.empty()) return {PluginVerdict::Error, PinOutcome::Unusable};
  auto leaf = x509::parse_der(query.chain.front());
  if (!leaf) return {PluginVerdict::Error, PinOutcome::Unusable};

  PinEntry fresh{key_host(query), query.port, x509::sha256_hex(query.chain.front()), x509::not_after(leaf.get())};
  const auto key = std::make_pair(fresh.host, fresh.port);

  {
    std::shared_lock lock(mutex_);
    auto it = pins_.find(key);
    if (it != pins_.end() && it->second.fingerprint == fresh.fingerprint) return {PluginVerdict::Valid, PinOutcome::Match};
    if (it != pins_.end() && it->second.not_after >= now) return {PluginVerdict::Invalid, PinOutcome::Mismatch};
  }

  std::unique_lock lock(mutex_);
  // Re-evaluate: another query may have changed the entry between the two locks.
  std::optional<PinEntry> previous;
  PinOutcome outcome = PinOutcome::FirstUse;
  if (auto it = pins_.find(key); it != pins_.end()) {
    if (it->second.fingerprint == fresh.fingerprint) return {PluginVerdict::Valid, PinOutcome::Match};
    if (it->second.not_after >= now) return {PluginVerdict::Invalid, PinOutcome::Mismatch};
    previous = it->second;
    outcome = PinOutcome::ExpiredReplaced;
  }
  pins_[key] = fresh;
  try {
    persist_locked();
  } catch (const StoreIo& e) {
    spdlog::error("{}", e.what());
    if (previous) {
      pins_[key] = *previous;
    } else {
      pins_.erase(key);
    }
    return {PluginVerdict::Error, PinOutcome::StoreFailure};
  }
  return {PluginVerdict::Valid, outcome};
}

void PinStore::persist_locked() const {
  if (path_.empty()) return;
  auto tmp = path_;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw StoreIo("cannot write pin store " + tmp.string());
    for (const auto& [key, e] : pins_) {
      out << e.host << '\t' << e.port << '\t' << e.fingerprint << '\t' << e.not_after << '\n';
    }
    out.flush();
    if (!out) throw StoreIo("cannot write pin store " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path_, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw StoreIo("cannot replace pin store " + path_.string());
  }
}

std::optional<PinEntry> PinStore::find(const std::string& host, std::uint16_t port) const {
  std::shared_lock lock(mutex_);
  auto it = pins_.find({host, port});
  if (it == pins_.end()) return std::nullopt;
  return it->second;
}

std::size_t PinStore::size() const {
  std::shared_lock lock(mutex_);
  return pins_.size();
}

}  // namespace certgate::plugins
