#include "certgate/core/socket.hpp"

#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/stat.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace certgate {

namespace {

[[noreturn]] void throw_errno(const std::string& what) {
  throw SocketError(what + ": " + std::strerror(errno));
}

sockaddr_un unix_address(const std::filesystem::path& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  const auto& s = path.native();
  if (s.size() >= sizeof(addr.sun_path)) throw SocketError("unix socket path too long: " + s);
  std::memcpy(addr.sun_path, s.c_str(), s.size() + 1);
  return addr;
}

}  // namespace

void UniqueFd::reset(int fd) {
  if (fd_ >= 0) ::close(fd_);
  fd_ = fd;
}

void write_all(int fd, ByteView data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == ENOTSOCK) {
        const ssize_t w = ::write(fd, data.data() + sent, data.size() - sent);
        if (w < 0) {
          if (errno == EINTR) continue;
          throw_errno("write");
        }
        sent += static_cast<std::size_t>(w);
        continue;
      }
      throw_errno("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::size_t read_some(int fd, std::uint8_t* out, std::size_t n) {
  for (;;) {
    const ssize_t r = ::read(fd, out, n);
    if (r >= 0) return static_cast<std::size_t>(r);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw_errno("read");
  }
}

bool read_exact(int fd, std::uint8_t* out, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const std::size_t r = read_some(fd, out + got, n - got);
    if (r == 0) {
      if (got == 0) return false;
      throw SocketError("unexpected end of stream");
    }
    got += r;
  }
  return true;
}

UniqueFd listen_tcp(const Endpoint& endpoint, int backlog) {
  sockaddr_storage storage{};
  const auto len = endpoint.to_sockaddr(storage);
  UniqueFd fd(::socket(storage.ss_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&storage), len) != 0) throw_errno("bind " + endpoint.to_string());
  if (::listen(fd.get(), backlog) != 0) throw_errno("listen");
  return fd;
}

UniqueFd connect_tcp(const Endpoint& endpoint) {
  sockaddr_storage storage{};
  const auto len = endpoint.to_sockaddr(storage);
  UniqueFd fd(::socket(storage.ss_family, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd) throw_errno("socket");
  int one = 1;
  ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  while (::connect(fd.get(), reinterpret_cast<sockaddr*>(&storage), len) != 0) {
    if (errno == EINTR) continue;
    throw_errno("connect " + endpoint.to_string());
  }
  return fd;
}

Endpoint local_endpoint(int fd) {
  sockaddr_storage storage{};
  socklen_t len = sizeof(storage);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&storage), &len) != 0) throw_errno("getsockname");
  auto ep = Endpoint::from_sockaddr(reinterpret_cast<sockaddr*>(&storage));
  if (!ep) throw SocketError("unsupported address family");
  return *ep;
}

Endpoint peer_endpoint(int fd) {
  sockaddr_storage storage{};
  socklen_t len = sizeof(storage);
  if (::getpeername(fd, reinterpret_cast<sockaddr*>(&storage), &len) != 0) throw_errno("getpeername");
  auto ep = Endpoint::from_sockaddr(reinterpret_cast<sockaddr*>(&storage));
  if (!ep) throw SocketError("unsupported address family");
  return *ep;
}

UniqueFd listen_unix(const std::filesystem::path& path, unsigned mode, int backlog) {
  auto addr = unix_address(path);
  std::error_code ec;
  std::filesystem::remove(path, ec);
  UniqueFd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd) throw_errno("socket");
  if (::bind(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) throw_errno("bind " + path.string());
  if (::chmod(path.c_str(), mode) != 0) throw_errno("chmod " + path.string());
  if (::listen(fd.get(), backlog) != 0) throw_errno("listen");
  return fd;
}

UniqueFd connect_unix(const std::filesystem::path& path) {
  auto addr = unix_address(path);
  UniqueFd fd(::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!fd) throw_errno("socket");
  if (::connect(fd.get(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    throw_errno("connect " + path.string());
  }
  return fd;
}

bool wait_readable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  for (;;) {
    const int r = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw_errno("poll");
    return r > 0;
  }
}

}  // namespace certgate
