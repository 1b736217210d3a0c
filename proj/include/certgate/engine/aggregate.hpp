#pragma once

#include <map>
#include <string>

#include "certgate/engine/config.hpp"
#include "certgate/engine/types.hpp"

namespace certgate::engine {

Decision map_verdict(PluginVerdict verdict, const PolicyConfig& cfg);

// Every necessary plugin must map to Valid; then the voting group's mapped-valid share must
// reach the threshold. An empty voting group passes. Plugins absent from verdicts count as Error.
Decision aggregate(const std::map<std::string, PluginVerdict>& verdicts, const PolicyConfig& cfg);

}  // namespace certgate::engine
