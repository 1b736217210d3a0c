#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "certgate/engine/plugin.hpp"

namespace certgate::engine {

// Fans a query out to every plugin concurrently and joins with a per-plugin timeout.
// Plugins that miss the deadline or throw are recorded as Error; late answers are dropped.
class Dispatcher {
 public:
  Dispatcher(std::vector<LoadedPlugin> plugins, std::chrono::milliseconds timeout);
  ~Dispatcher();

  Dispatcher(const Dispatcher&) = delete;
  Dispatcher& operator=(const Dispatcher&) = delete;

  void initialize();
  void finalize();

  std::map<std::string, PluginVerdict> dispatch(const ValidationQuery& query);

  std::size_t size() const { return slots_.size(); }

 private:
  struct Slot;
  struct Join;
  struct PendingTable;

  std::vector<std::shared_ptr<Slot>> slots_;
  std::shared_ptr<PendingTable> pending_;
  std::chrono::milliseconds timeout_;
  std::atomic<std::uint64_t> next_id_{1};
  bool initialized_ = false;
  bool finalized_ = false;
};

}  // namespace certgate::engine
