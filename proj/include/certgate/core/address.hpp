#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

struct sockaddr;
struct sockaddr_storage;

namespace certgate {

// IPv4 addresses are stored IPv6-mapped (::ffff:a.b.c.d), matching the engine wire format.
class IpAddress {
 public:
  IpAddress() = default;
  explicit IpAddress(const std::array<std::uint8_t, 16>& raw) : raw_(raw) {}

  static std::optional<IpAddress> parse(std::string_view text);
  static IpAddress v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d);

  bool is_v4_mapped() const;
  const std::array<std::uint8_t, 16>& raw() const { return raw_; }
  std::string to_string() const;

  friend bool operator==(const IpAddress&, const IpAddress&) = default;
  friend auto operator<=>(const IpAddress&, const IpAddress&) = default;

 private:
  std::array<std::uint8_t, 16> raw_{};
};

struct Endpoint {
  IpAddress address;
  std::uint16_t port = 0;

  // "a.b.c.d:port" or "[v6]:port"
  std::string to_string() const;
  static std::optional<Endpoint> parse(std::string_view text);
  static std::optional<Endpoint> from_sockaddr(const sockaddr* sa);
  // Fills storage and returns the length to pass to connect/bind.
  unsigned to_sockaddr(sockaddr_storage& storage) const;

  friend bool operator==(const Endpoint&, const Endpoint&) = default;
  friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

}  // namespace certgate

template <>
struct std::hash<certgate::IpAddress> {
  std::size_t operator()(const certgate::IpAddress& a) const noexcept {
    std::size_t h = 1469598103934665603ull;
    for (auto b : a.raw()) h = (h ^ b) * 1099511628211ull;
    return h;
  }
};

template <>
struct std::hash<certgate::Endpoint> {
  std::size_t operator()(const certgate::Endpoint& e) const noexcept {
    return std::hash<certgate::IpAddress>{}(e.address) * 31 + e.port;
  }
};
