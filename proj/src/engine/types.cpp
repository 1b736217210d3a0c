#include "certgate/engine/types.hpp"

namespace certgate::engine {

const char* to_string(PluginVerdict verdict) {
  switch (verdict) {
    case PluginVerdict::Invalid: return "invalid";
    case PluginVerdict::Valid: return "valid";
    case PluginVerdict::Abstain: return "abstain";
    case PluginVerdict::Error: return "error";
  }
  return "error";
}

const char* to_string(Decision decision) { return decision == Decision::Valid ? "valid" : "invalid"; }

std::optional<PluginVerdict> verdict_from_wire(std::uint8_t value) {
  if (value > 3) return std::nullopt;
  return static_cast<PluginVerdict>(value);
}

}  // namespace certgate::engine
