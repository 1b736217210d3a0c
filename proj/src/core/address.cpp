#include "certgate/core/address.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>

#include <charconv>
#include <cstring>

namespace certgate {

namespace {

constexpr std::array<std::uint8_t, 12> kMappedPrefix = {0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0xff, 0xff};

}  // namespace

std::optional<IpAddress> IpAddress::parse(std::string_view text) {
  std::string s(text);
  std::array<std::uint8_t, 16> raw{};
  in_addr v4{};
  if (inet_pton(AF_INET, s.c_str(), &v4) == 1) {
    std::copy(kMappedPrefix.begin(), kMappedPrefix.end(), raw.begin());
    std::memcpy(raw.data() + 12, &v4, 4);
    return IpAddress(raw);
  }
  in6_addr v6{};
  if (inet_pton(AF_INET6, s.c_str(), &v6) == 1) {
    std::memcpy(raw.data(), &v6, 16);
    return IpAddress(raw);
  }
  return std::nullopt;
}

IpAddress IpAddress::v4(std::uint8_t a, std::uint8_t b, std::uint8_t c, std::uint8_t d) {
  std::array<std::uint8_t, 16> raw{};
  std::copy(kMappedPrefix.begin(), kMappedPrefix.end(), raw.begin());
  raw[12] = a;
  raw[13] = b;
  raw[14] = c;
  raw[15] = d;
  return IpAddress(raw);
}

bool IpAddress::is_v4_mapped() const {
  return std::equal(kMappedPrefix.begin(), kMappedPrefix.end(), raw_.begin());
}

std::string IpAddress::to_string() const {
  char buf[INET6_ADDRSTRLEN] = {};
  if (is_v4_mapped()) {
    inet_ntop(AF_INET, raw_.data() + 12, buf, sizeof(buf));
  } else {
    inet_ntop(AF_INET6, raw_.data(), buf, sizeof(buf));
  }
  return buf;
}

std::string Endpoint::to_string() const {
  if (address.is_v4_mapped()) return address.to_string() + ":" + std::to_string(port);
  return "[" + address.to_string() + "]:" + std::to_string(port);
}

std::optional<Endpoint> Endpoint::parse(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) return std::nullopt;
  auto host = text.substr(0, colon);
  auto port_text = text.substr(colon + 1);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) return std::nullopt;
  auto addr = IpAddress::parse(host);
  if (!addr) return std::nullopt;
  return Endpoint{*addr, static_cast<std::uint16_t>(port)};
}

std::optional<Endpoint> Endpoint::from_sockaddr(const sockaddr* sa) {
  if (sa->sa_family == AF_INET) {
    const auto* in = reinterpret_cast<const sockaddr_in*>(sa);
    const auto* b = reinterpret_cast<const std::uint8_t*>(&in->sin_addr);
    return Endpoint{IpAddress::v4(b[0], b[1], b[2], b[3]), ntohs(in->sin_port)};
  }
  if (sa->sa_family == AF_INET6) {
    const auto* in6 = reinterpret_cast<const sockaddr_in6*>(sa);
    std::array<std::uint8_t, 16> raw{};
    std::memcpy(raw.data(), &in6->sin6_addr, 16);
    return Endpoint{IpAddress(raw), ntohs(in6->sin6_port)};
  }
  return std::nullopt;
}

unsigned Endpoint::to_sockaddr(sockaddr_storage& storage) const {
  std::memset(&storage, 0, sizeof(storage));
  if (address.is_v4_mapped()) {
    auto* in = reinterpret_cast<sockaddr_in*>(&storage);
    in->sin_family = AF_INET;
    in->sin_port = htons(port);
    std::memcpy(&in->sin_addr, address.raw().data() + 12, 4);
    return sizeof(sockaddr_in);
  }
  auto* in6 = reinterpret_cast<sockaddr_in6*>(&storage);
  in6->sin6_family = AF_INET6;
  in6->sin6_port = htons(port);
  std::memcpy(&in6->sin6_addr, address.raw().data(), 16);
  return sizeof(sockaddr_in6);
}

}  // namespace certgate
