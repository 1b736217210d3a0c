#include "certgate/engine/dispatch.hpp"

#include <condition_variable>
#include <mutex>
#include <optional>
#include <thread>
#include <unordered_map>

namespace certgate::engine {

struct Dispatcher::Slot {
  PluginSpec spec;
  std::shared_ptr<Plugin> plugin;
  std::mutex serial;
};

struct Dispatcher::Join {
  std::mutex mutex;
  std::condition_variable cv;
  std::vector<std::optional<PluginVerdict>> results;
  std::size_t outstanding = 0;
  bool closed = false;

  void deliver(std::size_t index, PluginVerdict verdict) {
    std::lock_guard lock(mutex);
    if (closed || results[index]) return;
    results[index] = verdict;
    if (--outstanding == 0) cv.notify_all();
  }
};

struct Dispatcher::PendingTable {
  std::mutex mutex;
  std::unordered_map<std::uint64_t, std::shared_ptr<Join>> joins;

  void report(std::uint64_t id, std::size_t index, PluginVerdict verdict) {
    std::shared_ptr<Join> join;
    {
      std::lock_guard lock(mutex);
      auto it = joins.find(id);
      if (it == joins.end()) return;
      join = it->second;
    }
    join->deliver(index, verdict);
  }
};

Dispatcher::Dispatcher(std::vector<LoadedPlugin> plugins, std::chrono::milliseconds timeout)
    : pending_(std::make_shared<PendingTable>()), timeout_(timeout) {
  for (auto& p : plugins) {
    auto slot = std::make_shared<Slot>();
    slot->spec = std::move(p.spec);
    slot->plugin = std::move(p.plugin);
    slots_.push_back(std::move(slot));
  }
}

Dispatcher::~Dispatcher() { finalize(); }

void Dispatcher::initialize() {
  if (initialized_) return;
  initialized_ = true;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    std::weak_ptr<PendingTable> table = pending_;
    slots_[i]->plugin->initialize([table, i](std::uint64_t id, PluginVerdict verdict) {
      if (auto t = table.lock()) t->report(id, i, verdict);
    });
  }
}

void Dispatcher::finalize() {
  if (!initialized_ || finalized_) return;
  finalized_ = true;
  for (auto& slot : slots_) {
    try {
      slot->plugin->finalize();
    } catch (...) {
    }
  }
}

std::map<std::string, PluginVerdict> Dispatcher::dispatch(const ValidationQuery& query) {
  auto shared_query = std::make_shared<ValidationQuery>(query);
  shared_query->id = next_id_.fetch_add(1);
  const auto id = shared_query->id;

  auto join = std::make_shared<Join>();
  join->results.resize(slots_.size());
  join->outstanding = slots_.size();
  {
    std::lock_guard lock(pending_->mutex);
    pending_->joins.emplace(id, join);
  }

  for (std::size_t i = 0; i < slots_.size(); ++i) {
    std::thread([slot = slots_[i], join, shared_query, i] {
      std::optional<PluginVerdict> verdict;
      try {
        std::unique_lock<std::mutex> serial;
        if (slot->spec.serialized) serial = std::unique_lock(slot->serial);
        verdict = slot->plugin->query(*shared_query);
      } catch (...) {
        verdict = PluginVerdict::Error;
      }
      if (verdict) join->deliver(i, *verdict);
    }).detach();
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::map<std::string, PluginVerdict> out;
  {
    std::unique_lock lock(join->mutex);
    join->cv.wait_until(lock, deadline, [&] { return join->outstanding == 0; });
    join->closed = true;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      out[slots_[i]->spec.name] = join->results[i].value_or(PluginVerdict::Error);
    }
  }
  std::lock_guard lock(pending_->mutex);
  pending_->joins.erase(id);
  return out;
}

}  // namespace certgate::engine
