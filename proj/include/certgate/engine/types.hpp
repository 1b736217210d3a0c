#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "certgate/core/address.hpp"
#include "certgate/core/bytes.hpp"

namespace certgate::engine {

// Numeric values are the wire encoding.
enum class PluginVerdict : std::uint8_t { Invalid = 0, Valid = 1, Abstain = 2, Error = 3 };
enum class Decision : std::uint8_t { Invalid = 0, Valid = 1 };

const char* to_string(PluginVerdict verdict);
const char* to_string(Decision decision);
std::optional<PluginVerdict> verdict_from_wire(std::uint8_t value);

struct PolicyDecision {
  Decision value = Decision::Invalid;
  std::optional<Bytes> scrambled_leaf;
};

struct ValidationQuery {
  std::uint64_t id = 0;
  std::string hostname;
  IpAddress address;
  std::uint16_t port = 0;
  Bytes client_hello_raw;
  Bytes server_hello_raw;
  std::vector<Bytes> chain;  // DER, leaf first
};

using VerdictList = std::vector<std::pair<std::string, PluginVerdict>>;

}  // namespace certgate::engine
