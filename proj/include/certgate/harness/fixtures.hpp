#pragma once

#include <openssl/ssl.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "certgate/core/socket.hpp"
#include "certgate/harness/pki.hpp"

namespace certgate::harness {

struct SslCtxDeleter {
  void operator()(SSL_CTX* ctx) const { SSL_CTX_free(ctx); }
};
struct SslDeleter {
  void operator()(SSL* ssl) const { SSL_free(ssl); }
};
using SslCtxPtr = std::unique_ptr<SSL_CTX, SslCtxDeleter>;
using SslPtr = std::unique_ptr<SSL, SslDeleter>;

// Server context presenting leaf followed by the given chain certificates.
SslCtxPtr make_server_ctx(const Identity& leaf, const std::vector<const Identity*>& chain);
// Client context that performs no validation at all and speaks at most TLS 1.2, so the
// server's Certificate message travels in the clear.
SslCtxPtr make_client_ctx();

// Live connection fds of a fixture server; close_all shuts them down and waits for the
// serving threads to finish.
class ConnectionSet {
 public:
  void add(int fd);
  void remove(int fd);
  void close_all();

 private:
  std::mutex mutex_;
  std::condition_variable idle_;
  std::set<int> fds_;
};

enum class ServeMode {
  Echo,    // echo application data until the peer closes
  Source,  // read a u64 byte count, send that many bytes, close
};

// Listens on 127.0.0.1 and serves TLS with a fixed identity, one thread per connection.
class TlsFixtureServer {
 public:
  TlsFixtureServer(const Identity& leaf, std::vector<const Identity*> chain, ServeMode mode = ServeMode::Echo,
                   Endpoint listen = *Endpoint::parse("127.0.0.1:0"));
  ~TlsFixtureServer();

  void start();
  void stop();

  Endpoint endpoint() const { return endpoint_; }
  std::size_t handshakes() const { return handshakes_.load(); }

 private:
  void accept_loop();
  void serve(int fd);

  SslCtxPtr ctx_;
  ServeMode mode_;
  Endpoint listen_;
  Endpoint endpoint_;
  UniqueFd listener_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> handshakes_{0};
  ConnectionSet connections_;
};

// Scripted SMTP server: greeting, EHLO (optionally advertising STARTTLS), STARTTLS upgrade
// followed by TLS echo, QUIT.
class SmtpFixtureServer {
 public:
  SmtpFixtureServer(const Identity& leaf, std::vector<const Identity*> chain, bool offer_starttls = true,
                    Endpoint listen = *Endpoint::parse("127.0.0.1:0"));
  ~SmtpFixtureServer();

  void start();
  void stop();

  Endpoint endpoint() const { return endpoint_; }

 private:
  void accept_loop();
  void serve(int fd);

  SslCtxPtr ctx_;
  bool offer_;
  Endpoint listen_;
  Endpoint endpoint_;
  UniqueFd listener_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  ConnectionSet connections_;
};

// Where a fixture client connects. With a target the client first sends the explicit-mode
// preamble "CONNECT <target>\n".
struct Route {
  Endpoint via;
  std::optional<std::string> connect_target;
};

UniqueFd open_route(const Route& route, std::chrono::milliseconds io_timeout);

// Non-validating TLS client that records the Certificate message it receives.
class TlsClientSession {
 public:
  TlsClientSession(SSL_CTX* ctx, UniqueFd fd, const std::string& sni);
  ~TlsClientSession();

  bool handshake();
  bool write(ByteView data);
  // Reads exactly n bytes; false on EOF or error.
  bool read_exact(std::uint8_t* out, std::size_t n);
  // Reads until the peer closes, up to limit bytes; returns the count.
  std::size_t drain(std::size_t limit);

  const std::vector<Bytes>& received_chain() const { return chain_; }
  const std::string& error() const { return error_; }
  int fd() const { return fd_.get(); }

 private:
  static void on_message(int write_p, int version, int content_type, const void* buf, std::size_t len, SSL* ssl,
                         void* arg);

  UniqueFd fd_;
  SslPtr ssl_;
  std::vector<Bytes> chain_;
  std::string error_;
};

enum class Outcome { Allowed, Blocked, Severed };
const char* to_string(Outcome outcome);
std::optional<Outcome> outcome_from_string(std::string_view text);

struct ProbeResult {
  bool handshake_ok = false;
  bool echo_ok = false;
  bool plaintext_only = false;  // SMTP session completed without TLS
  bool starttls_offered = false;
  std::vector<Bytes> received_chain;
  std::string detail;
};

struct ProbeOptions {
  Route route;
  std::string sni;
  bool smtp = false;
  std::chrono::milliseconds timeout{5000};
};

// Connects, handshakes, and round-trips one application message.
ProbeResult probe(const ProbeOptions& options);

// Allowed: the session completed with the presented leaf. Blocked: the client received the
// scrambled form of the presented leaf and was then disconnected. Otherwise Severed. A
// plaintext-only SMTP session counts as Allowed (nothing stopped it).
Outcome classify(const ProbeResult& result, ByteView presented_leaf);

}  // namespace certgate::harness
