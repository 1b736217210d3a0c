#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "certgate/engine/config.hpp"
#include "certgate/engine/types.hpp"

namespace certgate::testing {

// Straight reading of the aggregation rule, kept separate from the production code.
// Thresholds are doubles; every threshold the enumeration uses is exact in binary.
bool reference_valid(const std::vector<engine::PluginVerdict>& verdicts, const std::vector<bool>& necessary,
                     double threshold, bool abstain_is_valid, bool error_is_valid);

struct AggregateCase {
  std::vector<engine::PluginVerdict> verdicts;
  std::vector<bool> necessary;
  double threshold = 0;
  engine::Threshold exact_threshold;
  bool abstain_is_valid = false;
  bool error_is_valid = false;

  engine::PolicyConfig config() const;
  std::string describe() const;
};

// Every verdict assignment for 1..max_plugins plugins, every group split, thresholds
// {0, 1/4, 1/2, 3/4, 1} and all four abstain/error mappings. Returns the case count.
std::size_t for_each_aggregate_case(std::size_t max_plugins, const std::function<void(const AggregateCase&)>& fn);

}  // namespace certgate::testing
