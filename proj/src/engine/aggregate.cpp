#include "certgate/engine/aggregate.hpp"

namespace certgate::engine {

Decision map_verdict(PluginVerdict verdict, const PolicyConfig& cfg) {
  switch (verdict) {
    case PluginVerdict::Valid: return Decision::Valid;
    case PluginVerdict::Invalid: return Decision::Invalid;
    case PluginVerdict::Abstain: return cfg.abstain_maps_to;
    case PluginVerdict::Error: return cfg.error_maps_to;
  }
  return Decision::Invalid;
}

Decision aggregate(const std::map<std::string, PluginVerdict>& verdicts, const PolicyConfig& cfg) {
  std::uint64_t voters = 0;
  std::uint64_t valid_votes = 0;
  for (const auto& plugin : cfg.plugins) {
    auto it = verdicts.find(plugin.name);
    const auto mapped = map_verdict(it == verdicts.end() ? PluginVerdict::Error : it->second, cfg);
    if (plugin.group == PluginGroup::Necessary) {
      if (mapped == Decision::Invalid) return Decision::Invalid;
      continue;
    }
    ++voters;
    if (mapped == Decision::Valid) ++valid_votes;
  }
  if (voters == 0) return Decision::Valid;
  return cfg.threshold.met_by(valid_votes, voters) ? Decision::Valid : Decision::Invalid;
}

}  // namespace certgate::engine
