#include "certgate/harness/fixtures.hpp"

#include <openssl/err.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/time.h>

#include <cstring>

#include <spdlog/spdlog.h>

#include "certgate/tls/scramble.hpp"

namespace certgate::harness {
namespace {

constexpr std::uint8_t kCertificateMessage = 11;

std::string ssl_error() {
  std::string out;
  while (auto e = ERR_get_error()) {
    char buf[256];
    ERR_error_string_n(e, buf, sizeof buf);
    if (!out.empty()) out += "; ";
    out += buf;
  }
  return out.empty() ? "connection closed" : out;
}

void set_timeouts(int fd, std::chrono::milliseconds timeout) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(timeout.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((timeout.count() % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

bool ssl_write_all(SSL* ssl, ByteView data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const int n = SSL_write(ssl, data.data() + off, static_cast<int>(data.size() - off));
    if (n <= 0) return false;
    off += static_cast<std::size_t>(n);
  }
  return true;
}

// Reads one CRLF-terminated line from a plain socket, byte at a time so no TLS bytes that
// follow are consumed.
std::optional<std::string> read_line(int fd) {
  std::string line;
  for (;;) {
    std::uint8_t c;
    std::size_t n = 0;
    try {
      n = read_some(fd, &c, 1);
    } catch (const SocketError&) {
      return std::nullopt;
    }
    if (n == 0) return std::nullopt;
    if (c == '\n') {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    line.push_back(static_cast<char>(c));
    if (line.size() > 4096) return std::nullopt;
  }
}

bool send_line(int fd, const std::string& line) {
  try {
    const auto s = line + "\r\n";
    write_all(fd, ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    return true;
  } catch (const SocketError&) {
    return false;
  }
}

void echo_tls(SSL* ssl) {
  std::uint8_t buf[16384];
  for (;;) {
    const int n = SSL_read(ssl, buf, sizeof buf);
    if (n <= 0) return;
    if (!ssl_write_all(ssl, ByteView(buf, static_cast<std::size_t>(n)))) return;
  }
}

std::vector<Bytes> parse_certificate_message(ByteView msg) {
  std::vector<Bytes> chain;
  if (msg.size() < 7) return chain;
  auto u24 = [&](std::size_t at) { return (std::size_t{msg[at]} << 16) | (std::size_t{msg[at + 1]} << 8) | msg[at + 2]; };
  std::size_t pos = 4;
  const std::size_t list_end = pos + 3 + u24(pos);
  pos += 3;
  if (list_end > msg.size()) return {};
  while (pos + 3 <= list_end) {
    const auto len = u24(pos);
    pos += 3;
    if (pos + len > list_end) return {};
    chain.emplace_back(msg.begin() + static_cast<std::ptrdiff_t>(pos), msg.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return chain;
}

}  // namespace

SslCtxPtr make_server_ctx(const Identity& leaf, const std::vector<const Identity*>& chain) {
  SslCtxPtr ctx(SSL_CTX_new(TLS_server_method()));
  if (!ctx) throw std::runtime_error("SSL_CTX_new: " + ssl_error());
  if (SSL_CTX_use_certificate(ctx.get(), leaf.cert.get()) != 1 ||
      SSL_CTX_use_PrivateKey(ctx.get(), leaf.key.get()) != 1) {
    throw std::runtime_error("server identity: " + ssl_error());
  }
  for (const auto* extra : chain) {
    if (SSL_CTX_add1_chain_cert(ctx.get(), extra->cert.get()) != 1) {
      throw std::runtime_error("server chain: " + ssl_error());
    }
  }
  return ctx;
}

SslCtxPtr make_client_ctx() {
  SslCtxPtr ctx(SSL_CTX_new(TLS_client_method()));
  if (!ctx) throw std::runtime_error("SSL_CTX_new: " + ssl_error());
  SSL_CTX_set_verify(ctx.get(), SSL_VERIFY_NONE, nullptr);
  SSL_CTX_set_min_proto_version(ctx.get(), TLS1_VERSION);
  SSL_CTX_set_max_proto_version(ctx.get(), TLS1_2_VERSION);
  SSL_CTX_set_session_cache_mode(ctx.get(), SSL_SESS_CACHE_OFF);
  return ctx;
}

void ConnectionSet::add(int fd) {
  std::lock_guard lock(mutex_);
  fds_.insert(fd);
}

void ConnectionSet::remove(int fd) {
  std::lock_guard lock(mutex_);
  fds_.erase(fd);
  if (fds_.empty()) idle_.notify_all();
}

void ConnectionSet::close_all() {
  std::unique_lock lock(mutex_);
  for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
  idle_.wait(lock, [&] { return fds_.empty(); });
}

// ---------------------------------------------------------------- TLS server

TlsFixtureServer::TlsFixtureServer(const Identity& leaf, std::vector<const Identity*> chain, ServeMode mode,
                                   Endpoint listen)
    : ctx_(make_server_ctx(leaf, chain)), mode_(mode), listen_(listen) {}

TlsFixtureServer::~TlsFixtureServer() { stop(); }

void TlsFixtureServer::start() {
  listener_ = listen_tcp(listen_);
  endpoint_ = local_endpoint(listener_.get());
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void TlsFixtureServer::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  acceptor_.join();
  listener_.reset();
  connections_.close_all();
}

void TlsFixtureServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listener_.get(), POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    UniqueFd fd(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!fd) continue;
    connections_.add(fd.get());
    std::thread([this, raw = fd.release()] {
      UniqueFd owned(raw);
      serve(raw);
      connections_.remove(raw);
    }).detach();
  }
}

void TlsFixtureServer::serve(int fd) {
  set_timeouts(fd, std::chrono::milliseconds(10000));
  SslPtr ssl(SSL_new(ctx_.get()));
  SSL_set_fd(ssl.get(), fd);
  if (SSL_accept(ssl.get()) != 1) {
    ERR_clear_error();
    return;
  }
  ++handshakes_;
  if (mode_ == ServeMode::Echo) {
    echo_tls(ssl.get());
  } else {
    std::uint8_t req[8];
    std::size_t got = 0;
    while (got < sizeof req) {
      const int n = SSL_read(ssl.get(), req + got, static_cast<int>(sizeof req - got));
      if (n <= 0) return;
      got += static_cast<std::size_t>(n);
    }
    std::uint64_t remaining = 0;
    for (auto b : req) remaining = (remaining << 8) | b;
    std::vector<std::uint8_t> block(16384, 0x5a);
    while (remaining > 0) {
      const auto n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, block.size()));
      if (!ssl_write_all(ssl.get(), ByteView(block.data(), n))) return;
      remaining -= n;
    }
  }
  SSL_shutdown(ssl.get());
  ERR_clear_error();
}

// ---------------------------------------------------------------- SMTP server

SmtpFixtureServer::SmtpFixtureServer(const Identity& leaf, std::vector<const Identity*> chain, bool offer_starttls,
                                     Endpoint listen)
    : ctx_(make_server_ctx(leaf, chain)), offer_(offer_starttls), listen_(listen) {}

SmtpFixtureServer::~SmtpFixtureServer() { stop(); }

void SmtpFixtureServer::start() {
  listener_ = listen_tcp(listen_);
  endpoint_ = local_endpoint(listener_.get());
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void SmtpFixtureServer::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  acceptor_.join();
  listener_.reset();
  connections_.close_all();
}

void SmtpFixtureServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listener_.get(), POLLIN, 0};
    if (::poll(&p, 1, 100) <= 0) continue;
    UniqueFd fd(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!fd) continue;
    connections_.add(fd.get());
    std::thread([this, raw = fd.release()] {
      UniqueFd owned(raw);
      serve(raw);
      connections_.remove(raw);
    }).detach();
  }
}

void SmtpFixtureServer::serve(int s) {
  set_timeouts(s, std::chrono::milliseconds(10000));
  if (!send_line(s, "220 smtp.test ESMTP fixture")) return;
  while (auto line = read_line(s)) {
    std::string verb = line->substr(0, line->find(' '));
    for (auto& c : verb) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (verb == "EHLO") {
      send_line(s, "250-smtp.test greets you");
      send_line(s, "250-SIZE 10485760");
      if (offer_) send_line(s, "250-STARTTLS");
      send_line(s, "250 8BITMIME");
    } else if (verb == "HELO") {
      send_line(s, "250 smtp.test");
    } else if (verb == "STARTTLS" && offer_) {
      if (!send_line(s, "220 Go ahead")) return;
      SslPtr ssl(SSL_new(ctx_.get()));
      SSL_set_fd(ssl.get(), s);
      if (SSL_accept(ssl.get()) == 1) {
        echo_tls(ssl.get());
        SSL_shutdown(ssl.get());
      }
      ERR_clear_error();
      return;
    } else if (verb == "QUIT") {
      send_line(s, "221 Bye");
      return;
    } else if (verb == "NOOP") {
      send_line(s, "250 OK");
    } else {
      send_line(s, "502 Command not implemented");
    }
  }
}

// ---------------------------------------------------------------- client

UniqueFd open_route(const Route& route, std::chrono::milliseconds io_timeout) {
  auto fd = connect_tcp(route.via);
  set_timeouts(fd.get(), io_timeout);
  if (route.connect_target) {
    const auto line = "CONNECT " + *route.connect_target + "\n";
    write_all(fd.get(), ByteView(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
  }
  return fd;
}

TlsClientSession::TlsClientSession(SSL_CTX* ctx, UniqueFd fd, const std::string& sni)
    : fd_(std::move(fd)), ssl_(SSL_new(ctx)) {
  SSL_set_fd(ssl_.get(), fd_.get());
  if (!sni.empty()) SSL_set_tlsext_host_name(ssl_.get(), sni.c_str());
  SSL_set_msg_callback(ssl_.get(), &TlsClientSession::on_message);
  SSL_set_msg_callback_arg(ssl_.get(), this);
}

TlsClientSession::~TlsClientSession() { ERR_clear_error(); }

void TlsClientSession::on_message(int write_p, int, int content_type, const void* buf, std::size_t len, SSL*,
                                  void* arg) {
  if (write_p || content_type != SSL3_RT_HANDSHAKE || len < 4) return;
  const auto* bytes = static_cast<const std::uint8_t*>(buf);
  if (bytes[0] != kCertificateMessage) return;
  static_cast<TlsClientSession*>(arg)->chain_ = parse_certificate_message(ByteView(bytes, len));
}

bool TlsClientSession::handshake() {
  if (SSL_connect(ssl_.get()) == 1) return true;
  error_ = ssl_error();
  return false;
}

bool TlsClientSession::write(ByteView data) { return ssl_write_all(ssl_.get(), data); }

bool TlsClientSession::read_exact(std::uint8_t* out, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const int r = SSL_read(ssl_.get(), out + got, static_cast<int>(std::min<std::size_t>(n - got, 1 << 30)));
    if (r <= 0) {
      error_ = ssl_error();
      return false;
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::size_t TlsClientSession::drain(std::size_t limit) {
  std::vector<std::uint8_t> buf(65536);
  std::size_t total = 0;
  while (total < limit) {
    const int r = SSL_read(ssl_.get(), buf.data(), static_cast<int>(buf.size()));
    if (r <= 0) break;
    total += static_cast<std::size_t>(r);
  }
  ERR_clear_error();
  return total;
}

const char* to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::Allowed: return "Allowed";
    case Outcome::Blocked: return "Blocked";
    case Outcome::Severed: return "Severed";
  }
  return "?";
}

std::optional<Outcome> outcome_from_string(std::string_view text) {
  if (text == "Allowed") return Outcome::Allowed;
  if (text == "Blocked") return Outcome::Blocked;
  if (text == "Severed") return Outcome::Severed;
  return std::nullopt;
}

ProbeResult probe(const ProbeOptions& options) {
  ProbeResult result;
  UniqueFd fd;
  try {
    fd = open_route(options.route, options.timeout);
  } catch (const SocketError& e) {
    result.detail = e.what();
    return result;
  }

  if (options.smtp) {
    const int s = fd.get();
    auto greeting = read_line(s);
    if (!greeting || greeting->rfind("220", 0) != 0) {
      result.detail = "no SMTP greeting";
      return result;
    }
    if (!send_line(s, "EHLO client.test")) {
      result.detail = "EHLO not sent";
      return result;
    }
    for (;;) {
      auto line = read_line(s);
      if (!line) {
        result.detail = "connection closed during EHLO";
        return result;
      }
      if (line->size() > 4 && line->substr(4) == "STARTTLS") result.starttls_offered = true;
      if (line->size() < 4 || (*line)[3] != '-') break;
    }
    if (!result.starttls_offered) {
      // Opportunistic client: carry on in plaintext.
      send_line(s, "QUIT");
      auto bye = read_line(s);
      result.plaintext_only = bye && bye->rfind("221", 0) == 0;
      result.detail = result.plaintext_only ? "plaintext session" : "closed before QUIT reply";
      return result;
    }
    send_line(s, "STARTTLS");
    auto go = read_line(s);
    if (!go || go->rfind("220", 0) != 0) {
      result.detail = "STARTTLS refused";
      return result;
    }
  }

  auto ctx = make_client_ctx();
  TlsClientSession session(ctx.get(), std::move(fd), options.sni);
  result.handshake_ok = session.handshake();
  result.received_chain = session.received_chain();
  if (!result.handshake_ok) {
    result.detail = session.error();
    return result;
  }
  const std::string ping = "ping certgate fixture";
  Bytes echo(ping.size());
  result.echo_ok = session.write(ByteView(reinterpret_cast<const std::uint8_t*>(ping.data()), ping.size())) &&
                   session.read_exact(echo.data(), echo.size()) &&
                   std::equal(echo.begin(), echo.end(), ping.begin());
  result.detail = result.echo_ok ? "echo ok" : session.error();
  return result;
}

Outcome classify(const ProbeResult& result, ByteView presented_leaf) {
  if (result.plaintext_only) return Outcome::Allowed;
  const Bytes leaf(presented_leaf.begin(), presented_leaf.end());
  if (result.handshake_ok && result.echo_ok && !result.received_chain.empty() && result.received_chain[0] == leaf) {
    return Outcome::Allowed;
  }
  if (!result.handshake_ok && !result.received_chain.empty()) {
    try {
      if (result.received_chain[0] == tls::scramble_certificate(leaf)) return Outcome::Blocked;
    } catch (const std::exception&) {
    }
  }
  return Outcome::Severed;
}

}  // namespace certgate::harness
