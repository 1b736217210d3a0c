#include "certgate/plugins/builtin.hpp"

#include <spdlog/spdlog.h>

#include "certgate/plugins/ca.hpp"
#include "certgate/plugins/pinning.hpp"
#include "certgate/plugins/revocation.hpp"
#include "certgate/plugins/whitelist.hpp"

namespace certgate::plugins {
namespace {

using engine::PluginVerdict;
using engine::ValidationQuery;

class CaPlugin final : public engine::Plugin {
 public:
  CaPlugin(engine::PluginSpec spec, Clock clock) : spec_(std::move(spec)), clock_(std::move(clock)) {}

  void initialize(Report) override {
    anchors_ = TrustAnchorStore::load(spec_.data, clock_());
    spdlog::info("plugin {}: {} trust anchors from {}", spec_.name, anchors_.anchors().size(), spec_.data);
  }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override { return ca_validate(q, anchors_, clock_()); }

 private:
  engine::PluginSpec spec_;
  Clock clock_;
  TrustAnchorStore anchors_;
};

class WhitelistPlugin final : public engine::Plugin {
 public:
  explicit WhitelistPlugin(engine::PluginSpec spec) : spec_(std::move(spec)) {}

  void initialize(Report) override {
    if (spec_.data.empty()) return;
    try {
      entries_ = load_whitelist(spec_.data);
    } catch (const WhitelistError& e) {
      spdlog::error("plugin {}: {}", spec_.name, e.what());
    }
  }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override { return whitelist_check(q, entries_); }

 private:
  engine::PluginSpec spec_;
  std::vector<WhitelistEntry> entries_;
};

class PinningPlugin final : public engine::Plugin {
 public:
  PinningPlugin(engine::PluginSpec spec, Clock clock) : spec_(std::move(spec)), clock_(std::move(clock)) {}

  void initialize(Report) override {
    try {
      store_ = std::make_unique<PinStore>(spec_.data);
    } catch (const StoreIo& e) {
      spdlog::error("plugin {}: {}", spec_.name, e.what());
    }
  }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override {
    if (!store_) return PluginVerdict::Error;
    return store_->check(q, clock_()).verdict;
  }

 private:
  engine::PluginSpec spec_;
  Clock clock_;
  std::unique_ptr<PinStore> store_;
};

class RevocationPlugin final : public engine::Plugin {
 public:
  explicit RevocationPlugin(engine::PluginSpec spec) : spec_(std::move(spec)) {}

  void initialize(Report) override { list_ = RevocationList::load(spec_.data); }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override { return list_.check(q); }

 private:
  engine::PluginSpec spec_;
  RevocationList list_;
};

}  // namespace

std::unique_ptr<engine::Plugin> make_builtin(const engine::PluginSpec& spec, Clock clock) {
  if (!clock) clock = [] { return std::time(nullptr); };
  const std::string_view path = spec.path;
  if (path == "builtin:ca") return std::make_unique<CaPlugin>(spec, clock);
  if (path == "builtin:whitelist") return std::make_unique<WhitelistPlugin>(spec);
  if (path == "builtin:pinning") return std::make_unique<PinningPlugin>(spec, clock);
  if (path == "builtin:revocation") return std::make_unique<RevocationPlugin>(spec);
  return nullptr;
}

engine::BuiltinFactory builtin_factory(Clock clock) {
  return [clock](const engine::PluginSpec& spec) { return make_builtin(spec, clock); };
}

}  // namespace certgate::plugins
