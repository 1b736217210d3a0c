#pragma once

#include <functional>
#include <memory>
#include <mutex>

#include "certgate/engine/config.hpp"
#include "certgate/engine/dispatch.hpp"
#include "certgate/engine/plugin.hpp"
#include "certgate/engine/types.hpp"

namespace certgate::engine {

struct Evaluation {
  PolicyDecision decision;
  VerdictList verdicts;  // configuration order
};

class Engine {
 public:
  using Observer = std::function<void(const ValidationQuery&, const Evaluation&)>;

  Engine(PolicyConfig cfg, std::vector<LoadedPlugin> plugins);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  // Safe to call concurrently. Invalid decisions carry the scrambled leaf when the query had
  // a chain. A query without a chain is Invalid unless its ServerHello selected TLS 1.3, in
  // which case tls13_mode decides.
  Evaluation evaluate(const ValidationQuery& query);

  void set_observer(Observer observer);
  void shutdown();

  const PolicyConfig& config() const { return cfg_; }

 private:
  PolicyConfig cfg_;
  Dispatcher dispatcher_;
  std::mutex observer_mutex_;
  std::shared_ptr<Observer> observer_;
};

}  // namespace certgate::engine
