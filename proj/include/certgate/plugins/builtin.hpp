#pragma once

#include <ctime>
#include <functional>
#include <memory>

#include "certgate/engine/plugin.hpp"

namespace certgate::plugins {

using Clock = std::function<std::time_t()>;

// Factory for "builtin:<name>" plugin paths. The plugin's data key names its input:
//   builtin:ca          directory of trust anchors
//   builtin:whitelist   whitelist TSV file
//   builtin:pinning     pin store TSV file (empty keeps pins in memory)
//   builtin:revocation  file of revoked leaf fingerprints
// Returns nullptr for unknown names.
std::unique_ptr<engine::Plugin> make_builtin(const engine::PluginSpec& spec, Clock clock = nullptr);

engine::BuiltinFactory builtin_factory(Clock clock = nullptr);

}  // namespace certgate::plugins
