#include "certgate/harness/mitm.hpp"

#include <openssl/err.h>
#include <poll.h>
#include <sys/socket.h>

#include <spdlog/spdlog.h>

namespace certgate::harness {
namespace {

constexpr std::string_view kStartTls = "STARTTLS";

// Rewrites the capability in EHLO replies the way stripping middleboxes do.
void strip_line(std::string& line) {
  if (line.size() < 4 || line.compare(0, 3, "250") != 0) return;
  auto pos = line.find(kStartTls, 4);
  if (pos != std::string::npos) line.replace(pos, kStartTls.size(), "XXXXXXXA");
}

bool pump_plain(int from, int to) {
  std::uint8_t buf[16384];
  std::size_t n = 0;
  try {
    n = read_some(from, buf, sizeof buf);
    if (n == 0) return false;
    write_all(to, ByteView(buf, n));
  } catch (const SocketError&) {
    return false;
  }
  return true;
}

bool pump_tls(SSL* from, SSL* to) {
  std::uint8_t buf[16384];
  do {
    const int n = SSL_read(from, buf, sizeof buf);
    if (n <= 0) return false;
    std::size_t off = 0;
    while (off < static_cast<std::size_t>(n)) {
      const int w = SSL_write(to, buf + off, n - static_cast<int>(off));
      if (w <= 0) return false;
      off += static_cast<std::size_t>(w);
    }
  } while (SSL_pending(from) > 0);
  return true;
}

}  // namespace

const char* to_string(MitmMode mode) {
  switch (mode) {
    case MitmMode::None: return "none";
    case MitmMode::SelfSigned: return "self-signed";
    case MitmMode::WrongHostname: return "wrong-hostname-valid-ca";
    case MitmMode::RogueRoot: return "rogue-local-root";
    case MitmMode::CoercedCa: return "coerced-ca";
    case MitmMode::StripStarttls: return "strip-starttls";
  }
  return "?";
}

std::optional<MitmMode> mitm_mode_from_string(std::string_view text) {
  for (auto m : {MitmMode::None, MitmMode::SelfSigned, MitmMode::WrongHostname, MitmMode::RogueRoot,
                 MitmMode::CoercedCa, MitmMode::StripStarttls}) {
    if (text == to_string(m)) return m;
  }
  return std::nullopt;
}

const Identity& presented_identity(const FixturePki& pki, MitmMode mode, const Identity& genuine) {
  switch (mode) {
    case MitmMode::SelfSigned: return pki.self_signed;
    case MitmMode::WrongHostname: return pki.wrong_host;
    case MitmMode::RogueRoot: return pki.rogue_leaf;
    case MitmMode::CoercedCa: return pki.coerced;
    default: return genuine;
  }
}

Mitm::Mitm(const FixturePki& pki, Endpoint upstream, MitmMode mode, Endpoint listen)
    : pki_(pki), upstream_(upstream), listen_(listen), mode_(mode) {}

Mitm::~Mitm() { stop(); }

void Mitm::set_mode(MitmMode mode) {
  std::lock_guard lock(mutex_);
  mode_ = mode;
}

MitmMode Mitm::mode() const {
  std::lock_guard lock(mutex_);
  return mode_;
}

void Mitm::start() {
  listener_ = listen_tcp(listen_);
  endpoint_ = local_endpoint(listener_.get());
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Mitm::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  acceptor_.join();
  listener_.reset();
  connections_.close_all();
}

void Mitm::accept_loop() {
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

void Mitm::serve(int client) {
  const auto mode = this->mode();
  if (mode == MitmMode::None || mode == MitmMode::StripStarttls) {
    UniqueFd server;
    try {
      server = connect_tcp(upstream_);
    } catch (const SocketError& e) {
      spdlog::warn("mitm: upstream: {}", e.what());
      return;
    }
    relay_plain(client, server.get(), mode == MitmMode::StripStarttls);
    return;
  }
  relay_tls(client, mode);
}

void Mitm::relay_plain(int client, int server, bool strip) {
  std::string line;
  for (;;) {
    pollfd fds[2] = {{client, POLLIN, 0}, {server, POLLIN, 0}};
    if (::poll(fds, 2, 30000) <= 0) return;
    if (fds[0].revents && !pump_plain(client, server)) return;
    if (!fds[1].revents) continue;
    if (!strip) {
      if (!pump_plain(server, client)) return;
      continue;
    }
    std::uint8_t buf[4096];
    std::size_t n = 0;
    try {
      n = read_some(server, buf, sizeof buf);
    } catch (const SocketError&) {
      return;
    }
    if (n == 0) return;
    for (std::size_t i = 0; i < n; ++i) {
      line.push_back(static_cast<char>(buf[i]));
      if (buf[i] != '\n') continue;
      strip_line(line);
      try {
        write_all(client, ByteView(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
      } catch (const SocketError&) {
        return;
      }
      line.clear();
    }
  }
}

void Mitm::relay_tls(int client, MitmMode mode) {
  const auto& forged = presented_identity(pki_, mode, pki_.genuine);
  std::vector<const Identity*> chain;
  if (mode == MitmMode::WrongHostname || mode == MitmMode::CoercedCa) chain = {&pki_.intermediate};
  if (mode == MitmMode::RogueRoot) chain = {&pki_.rogue_root};

  auto server_ctx = make_server_ctx(forged, chain);
  SslPtr front(SSL_new(server_ctx.get()));
  SSL_set_fd(front.get(), client);
  if (SSL_accept(front.get()) != 1) {
    ++failures_;
    spdlog::info("mitm: client handshake failed ({})", to_string(mode));
    ERR_clear_error();
    return;
  }

  UniqueFd server;
  try {
    server = connect_tcp(upstream_);
  } catch (const SocketError& e) {
    spdlog::warn("mitm: upstream: {}", e.what());
    return;
  }
  auto client_ctx = make_client_ctx();
  SslPtr back(SSL_new(client_ctx.get()));
  SSL_set_fd(back.get(), server.get());
  const char* sni = SSL_get_servername(front.get(), TLSEXT_NAMETYPE_host_name);
  if (sni) SSL_set_tlsext_host_name(back.get(), sni);
  if (SSL_connect(back.get()) != 1) {
    ++failures_;
    spdlog::info("mitm: upstream handshake failed");
    ERR_clear_error();
    return;
  }

  for (;;) {
    pollfd fds[2] = {{client, POLLIN, 0}, {server.get(), POLLIN, 0}};
    if (SSL_pending(front.get()) == 0 && SSL_pending(back.get()) == 0 && ::poll(fds, 2, 30000) <= 0) break;
    if ((fds[0].revents || SSL_pending(front.get()) > 0) && !pump_tls(front.get(), back.get())) break;
    if ((fds[1].revents || SSL_pending(back.get()) > 0) && !pump_tls(back.get(), front.get())) break;
    fds[0].revents = fds[1].revents = 0;
  }
  SSL_shutdown(front.get());
  SSL_shutdown(back.get());
  ERR_clear_error();
}

}  // namespace certgate::harness
