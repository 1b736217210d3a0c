#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "certgate/core/address.hpp"
#include "certgate/core/bytes.hpp"

namespace certgate {

class SocketError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  UniqueFd& operator=(UniqueFd&& other) noexcept {
    if (this != &other) reset(std::exchange(other.fd_, -1));
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() { reset(); }

  int get() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  explicit operator bool() const { return valid(); }
  int release() { return std::exchange(fd_, -1); }
  void reset(int fd = -1);

 private:
  int fd_ = -1;
};

// Blocking helpers. write_all throws SocketError; read_exact returns false on clean EOF
// before the first byte and throws on EOF mid-buffer.
void write_all(int fd, ByteView data);
bool read_exact(int fd, std::uint8_t* out, std::size_t n);
// Returns bytes read, 0 on EOF, throws on error.
std::size_t read_some(int fd, std::uint8_t* out, std::size_t n);

UniqueFd listen_tcp(const Endpoint& endpoint, int backlog = 128);
UniqueFd connect_tcp(const Endpoint& endpoint);
Endpoint local_endpoint(int fd);
Endpoint peer_endpoint(int fd);

// Unix stream socket bound at path with the given permission bits.
UniqueFd listen_unix(const std::filesystem::path& path, unsigned mode = 0600, int backlog = 64);
UniqueFd connect_unix(const std::filesystem::path& path);

// Waits for readability; false on timeout.
bool wait_readable(int fd, std::chrono::milliseconds timeout);

}  // namespace certgate
