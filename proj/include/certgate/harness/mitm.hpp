#pragma once

#include <atomic>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "certgate/harness/fixtures.hpp"
#include "certgate/harness/pki.hpp"

namespace certgate::harness {

enum class MitmMode {
  None,           // plain TCP relay
  SelfSigned,     // self-signed certificate for the victim host
  WrongHostname,  // valid chain issued for another host
  RogueRoot,      // certificate issued by a root the attacker planted locally
  CoercedCa,      // certificate for the victim host from the legitimate CA, attacker's key
  StripStarttls,  // SMTP relay that removes the STARTTLS capability
};

const char* to_string(MitmMode mode);
std::optional<MitmMode> mitm_mode_from_string(std::string_view text);

// Leaf the attacker presents in this mode (the genuine leaf for None and StripStarttls,
// where the attacker does not terminate TLS).
const Identity& presented_identity(const FixturePki& pki, MitmMode mode, const Identity& genuine);

// Terminates client TLS with a forged identity and relays plaintext to the upstream over a
// fresh TLS connection. The mode may be switched between connections.
class Mitm {
 public:
  Mitm(const FixturePki& pki, Endpoint upstream, MitmMode mode, Endpoint listen = *Endpoint::parse("127.0.0.1:0"));
  ~Mitm();

  void start();
  void stop();
  void set_mode(MitmMode mode);
  MitmMode mode() const;

  Endpoint endpoint() const { return endpoint_; }
  std::size_t handshake_failures() const { return failures_.load(); }

 private:
  void accept_loop();
  void serve(int fd);
  void relay_plain(int client, int server, bool strip);
  void relay_tls(int client, MitmMode mode);

  const FixturePki& pki_;
  Endpoint upstream_;
  Endpoint listen_;
  Endpoint endpoint_;
  mutable std::mutex mutex_;
  MitmMode mode_;
  UniqueFd listener_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> failures_{0};
  ConnectionSet connections_;
};

}  // namespace certgate::harness
