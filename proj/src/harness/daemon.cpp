#include "certgate/harness/daemon.hpp"

#include <sys/stat.h>

#include <spdlog/spdlog.h>

namespace certgate::harness {
namespace {

void require_protected(const std::filesystem::path& path, const char* what) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) return;  // missing files are reported by the loaders
  if (st.st_mode & (S_IWGRP | S_IWOTH)) {
    throw PermissionError(std::string(what) + " " + path.string() + " is writable by group or others");
  }
}

}  // namespace

void check_permissions(const std::filesystem::path& config_path, const engine::PolicyConfig& cfg) {
  require_protected(config_path, "configuration file");
  for (const auto& plugin : cfg.plugins) {
    if (plugin.kind == engine::PluginKind::Addon) {
      const auto program = plugin.path.substr(0, plugin.path.find(' '));
      require_protected(program, "addon executable");
    } else if (plugin.path.rfind("builtin:", 0) != 0) {
      require_protected(plugin.path, "plugin library");
    }
  }
}

Daemon::Daemon(DaemonOptions options) : options_(std::move(options)) {
  if (options_.engine_only && options_.interceptor_only) {
    throw std::invalid_argument("--engine-only and --interceptor-only are exclusive");
  }
  if (!options_.clock) options_.clock = [] { return std::time(nullptr); };
  config_ = engine::load_config_file(options_.config);
  check_permissions(options_.config, config_);
  dns_ = std::make_unique<flow::DnsLog>(std::chrono::seconds(config_.interceptor.dns_ttl_s));

  if (!options_.interceptor_only) {
    auto plugins = engine::load_plugins(config_, plugins::builtin_factory(options_.clock));
    engine_ = std::make_unique<engine::Engine>(config_, std::move(plugins));
    notifier_ = std::make_unique<Notifier>(config_.interceptor.event_log, config_.interceptor.notify_command);
    engine_->set_observer([this](const engine::ValidationQuery& q, const engine::Evaluation& e) {
      if (auto event = event_for(q, e, options_.clock())) notifier_->notify(*event);
    });
  }
  if (!options_.engine_only) {
    starttls_ = std::make_unique<flow::StarttlsStore>(config_.interceptor.starttls_store);
  }
}

Daemon::~Daemon() { stop(); }

void Daemon::start() {
  if (engine_) {
    query_server_ = std::make_unique<engine::EngineServer>(*engine_, options_.engine_socket,
                                                           engine::EngineServer::Role::Interceptor);
    query_server_->start();
    if (!options_.direct_socket.empty()) {
      direct_server_ = std::make_unique<engine::EngineServer>(*engine_, options_.direct_socket,
                                                              engine::EngineServer::Role::Direct);
      direct_server_->start();
    }
  }
  if (!options_.engine_only) {
    if (!config_.interceptor.dns_feed.empty()) {
      dns_feed_ = std::make_unique<flow::DnsFeed>(*dns_, config_.interceptor.dns_feed.string());
      dns_feed_->start();
    }
    flow::InterceptorOptions io;
    io.listen = options_.listen;
    io.mode = options_.mode;
    io.engine_socket = options_.engine_socket;
    io.engine_timeout = std::chrono::milliseconds(config_.engine_timeout_ms);
    io.env.starttls_ports = config_.interceptor.starttls_ports;
    io.env.enforce_starttls = config_.starttls_enforce;
    io.env.dns = dns_.get();
    io.env.starttls = starttls_.get();
    io.env.clock = options_.clock;
    io.resolver = options_.resolver;
    interceptor_ = std::make_unique<flow::Interceptor>(io);
    interceptor_->set_event_sink([](const flow::FlowEvent& e) {
      spdlog::debug("flow {} -> {} host={} phase={} reason={} up={} down={}", e.key.client.to_string(),
                    e.key.destination.to_string(), e.hostname, flow::to_string(e.phase), flow::to_string(e.reason),
                    e.client_to_server, e.server_to_client);
    });
    interceptor_->start();
  }
  running_ = true;
  spdlog::info("certgate ready: engine={} interceptor={}", engine_ ? options_.engine_socket.string() : "-",
               interceptor_ ? interceptor_->local_endpoint().to_string() : "-");
}

void Daemon::stop() {
  if (!running_) return;
  running_ = false;
  if (interceptor_) interceptor_->stop();
  if (dns_feed_) dns_feed_->stop();
  if (direct_server_) direct_server_->stop();
  if (query_server_) query_server_->stop();
  if (engine_) engine_->shutdown();
}

}  // namespace certgate::harness
