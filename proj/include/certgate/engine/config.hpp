#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "certgate/engine/types.hpp"

namespace certgate::engine {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

enum class PluginKind { Native, Addon };
enum class PluginGroup { Necessary, Voting };
enum class Tls13Mode { Allow, Block };

// Exact rational so thresholds such as 3/4 compare without rounding.
struct Threshold {
  std::uint64_t numerator = 1;
  std::uint64_t denominator = 2;

  // valid / total >= numerator / denominator
  bool met_by(std::uint64_t valid, std::uint64_t total) const {
    return valid * denominator >= numerator * total;
  }
};

struct PluginSpec {
  std::string name;
  PluginKind kind = PluginKind::Native;
  std::string path;
  std::string data;
  PluginGroup group = PluginGroup::Voting;
  bool serialized = false;
};

struct InterceptorSettings {
  std::set<std::uint16_t> starttls_ports;
  std::filesystem::path starttls_store;
  std::filesystem::path dns_feed;
  std::uint32_t dns_ttl_s = 300;
  std::string notify_command;
  std::filesystem::path event_log;
};

struct PolicyConfig {
  std::vector<PluginSpec> plugins;
  Threshold threshold;
  std::uint32_t plugin_timeout_ms = 2000;
  std::uint32_t engine_timeout_ms = 5000;
  Decision abstain_maps_to = Decision::Valid;
  Decision error_maps_to = Decision::Invalid;
  bool starttls_enforce = false;
  Tls13Mode tls13_mode = Tls13Mode::Allow;
  InterceptorSettings interceptor;
};

// Parses the line-oriented configuration format. Throws ConfigError.
PolicyConfig load_config(std::string_view text);
PolicyConfig load_config_file(const std::filesystem::path& path);

}  // namespace certgate::engine
