#include "certgate/engine/engine.hpp"

#include <spdlog/spdlog.h>

#include "certgate/engine/aggregate.hpp"
#include "certgate/tls/errors.hpp"
#include "certgate/tls/handshake.hpp"
#include "certgate/tls/record.hpp"
#include "certgate/tls/scramble.hpp"

namespace certgate::engine {
namespace {

bool selects_tls13(const Bytes& server_hello) {
  if (server_hello.empty()) return false;
  try {
    return tls::server_hello_version(server_hello) == tls::kTls13;
  } catch (const tls::WireError&) {
    return false;
  }
}

}  // namespace

Engine::Engine(PolicyConfig cfg, std::vector<LoadedPlugin> plugins)
    : cfg_(std::move(cfg)), dispatcher_(std::move(plugins), std::chrono::milliseconds(cfg_.plugin_timeout_ms)) {
  dispatcher_.initialize();
}

Engine::~Engine() { shutdown(); }

void Engine::shutdown() { dispatcher_.finalize(); }

void Engine::set_observer(Observer observer) {
  std::lock_guard lock(observer_mutex_);
  observer_ = observer ? std::make_shared<Observer>(std::move(observer)) : nullptr;
}

Evaluation Engine::evaluate(const ValidationQuery& query) {
  Evaluation out;
  if (query.chain.empty()) {
    const bool opaque = selects_tls13(query.server_hello_raw);
    out.decision.value = opaque && cfg_.tls13_mode == Tls13Mode::Allow ? Decision::Valid : Decision::Invalid;
  } else {
    auto verdicts = dispatcher_.dispatch(query);
    out.decision.value = aggregate(verdicts, cfg_);
    for (const auto& spec : cfg_.plugins) out.verdicts.emplace_back(spec.name, verdicts[spec.name]);
    if (out.decision.value == Decision::Invalid) {
      try {
        out.decision.scrambled_leaf = tls::scramble_certificate(query.chain.front());
      } catch (const tls::WireError& e) {
        spdlog::debug("leaf not scramblable: {}", e.what());
      }
    }
  }

  std::shared_ptr<Observer> observer;
  {
    std::lock_guard lock(observer_mutex_);
    observer = observer_;
  }
  if (observer) (*observer)(query, out);
  return out;
}

}  // namespace certgate::engine
