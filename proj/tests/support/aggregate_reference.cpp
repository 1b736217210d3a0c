#include "aggregate_reference.hpp"

#include <sstream>

namespace certgate::testing {

using engine::PluginVerdict;

bool reference_valid(const std::vector<PluginVerdict>& verdicts, const std::vector<bool>& necessary,
                     double threshold, bool abstain_is_valid, bool error_is_valid) {
  auto counts_as_valid = [&](PluginVerdict v) {
    if (v == PluginVerdict::Valid) return true;
    if (v == PluginVerdict::Abstain) return abstain_is_valid;
    if (v == PluginVerdict::Error) return error_is_valid;
    return false;
  };

  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (necessary[i] && !counts_as_valid(verdicts[i])) return false;
  }

  int voters = 0, yes = 0;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    if (necessary[i]) continue;
    voters++;
    if (counts_as_valid(verdicts[i])) yes++;
  }
  if (voters == 0) return true;
  return static_cast<double>(yes) / voters >= threshold;
}

engine::PolicyConfig AggregateCase::config() const {
  engine::PolicyConfig cfg;
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    engine::PluginSpec spec;
    spec.name = "p" + std::to_string(i);
    spec.path = "builtin:none";
    spec.group = necessary[i] ? engine::PluginGroup::Necessary : engine::PluginGroup::Voting;
    cfg.plugins.push_back(spec);
  }
  cfg.threshold = exact_threshold;
  cfg.abstain_maps_to = abstain_is_valid ? engine::Decision::Valid : engine::Decision::Invalid;
  cfg.error_maps_to = error_is_valid ? engine::Decision::Valid : engine::Decision::Invalid;
  return cfg;
}

std::string AggregateCase::describe() const {
  std::ostringstream out;
  out << "threshold=" << threshold << " abstain->" << (abstain_is_valid ? "valid" : "invalid") << " error->"
      << (error_is_valid ? "valid" : "invalid") << " plugins:";
  for (std::size_t i = 0; i < verdicts.size(); ++i) {
    out << " " << (necessary[i] ? "N:" : "V:") << engine::to_string(verdicts[i]);
  }
  return out.str();
}

std::size_t for_each_aggregate_case(std::size_t max_plugins, const std::function<void(const AggregateCase&)>& fn) {
  static const std::pair<double, engine::Threshold> kThresholds[] = {
      {0.0, {0, 1}}, {0.25, {1, 4}}, {0.5, {1, 2}}, {0.75, {3, 4}}, {1.0, {1, 1}}};
  std::size_t count = 0;
  AggregateCase c;
  for (std::size_t k = 1; k <= max_plugins; ++k) {
    c.verdicts.assign(k, PluginVerdict::Invalid);
    c.necessary.assign(k, false);
    std::size_t assignments = 1;
    for (std::size_t i = 0; i < k; ++i) assignments *= 4;
    for (std::size_t a = 0; a < assignments; ++a) {
      std::size_t rest = a;
      for (std::size_t i = 0; i < k; ++i, rest /= 4) c.verdicts[i] = static_cast<PluginVerdict>(rest % 4);
      for (std::size_t split = 0; split < (1u << k); ++split) {
        for (std::size_t i = 0; i < k; ++i) c.necessary[i] = (split >> i) & 1;
        for (const auto& [t, exact] : kThresholds) {
          c.threshold = t;
          c.exact_threshold = exact;
          for (int mapping = 0; mapping < 4; ++mapping) {
            c.abstain_is_valid = mapping & 1;
            c.error_is_valid = mapping & 2;
            fn(c);
            ++count;
          }
        }
      }
    }
  }
  return count;
}

}  // namespace certgate::testing
