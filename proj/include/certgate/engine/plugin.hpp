#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "certgate/engine/config.hpp"
#include "certgate/engine/types.hpp"

namespace certgate::engine {

// Authentication service interface. Synchronous plugins return a verdict from query;
// asynchronous ones return nullopt and later call the Report callback with the query id.
class Plugin {
 public:
  using Report = std::function<void(std::uint64_t query_id, PluginVerdict verdict)>;

  virtual ~Plugin() = default;

  virtual void initialize(Report report) { (void)report; }
  virtual void finalize() {}
  virtual std::optional<PluginVerdict> query(const ValidationQuery& query) = 0;
};

struct LoadedPlugin {
  PluginSpec spec;
  std::shared_ptr<Plugin> plugin;
};

// Builds a builtin plugin ("builtin:<name>" paths). Returns nullptr for unknown names.
using BuiltinFactory = std::function<std::unique_ptr<Plugin>(const PluginSpec& spec)>;

// Instantiates every configured plugin. Throws ConfigError for unknown builtins and for
// shared objects that are missing or lack the query symbol.
std::vector<LoadedPlugin> load_plugins(const PolicyConfig& cfg, const BuiltinFactory& builtins);

std::unique_ptr<Plugin> load_shared_object(const PluginSpec& spec);

// Runs an addon host process (spec.path is its command line, spec.data is appended as the
// last argument) and exchanges Query / AddonVerdict frames with it over stdin/stdout.
// A host that fails to start or report ready answers Error to every query.
std::unique_ptr<Plugin> make_addon_plugin(const PluginSpec& spec, std::chrono::milliseconds ready_timeout);

}  // namespace certgate::engine
