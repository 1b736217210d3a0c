#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>

#include "certgate/engine/config.hpp"
#include "certgate/engine/engine.hpp"
#include "certgate/engine/service.hpp"
#include "certgate/flow/dns_log.hpp"
#include "certgate/flow/interceptor.hpp"
#include "certgate/flow/starttls.hpp"
#include "certgate/harness/notify.hpp"
#include "certgate/plugins/builtin.hpp"

namespace certgate::harness {

class PermissionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Refuses a configuration file, native plugin library or addon executable that is group- or
// world-writable.
void check_permissions(const std::filesystem::path& config_path, const engine::PolicyConfig& cfg);

struct DaemonOptions {
  std::filesystem::path config;
  flow::InterceptMode mode = flow::InterceptMode::Explicit;
  Endpoint listen = *Endpoint::parse("127.0.0.1:9443");
  std::filesystem::path engine_socket = "/tmp/certgate-engine.sock";
  std::filesystem::path direct_socket;  // empty: no direct validation socket
  bool engine_only = false;
  bool interceptor_only = false;
  plugins::Clock clock;  // defaults to time(nullptr)
  std::function<std::vector<Endpoint>(const std::string&, std::uint16_t)> resolver;
};

// Engine and interceptor in one process, or either half alone.
class Daemon {
 public:
  // Loads and checks the configuration and plugins. Throws ConfigError or PermissionError.
  explicit Daemon(DaemonOptions options);
  ~Daemon();

  void start();
  void stop();

  const engine::PolicyConfig& config() const { return config_; }
  engine::Engine* engine() { return engine_.get(); }
  flow::Interceptor* interceptor() { return interceptor_.get(); }
  flow::StarttlsStore* starttls_store() { return starttls_.get(); }
  flow::DnsLog& dns_log() { return *dns_; }
  Notifier* notifier() { return notifier_.get(); }

 private:
  DaemonOptions options_;
  engine::PolicyConfig config_;
  std::unique_ptr<flow::DnsLog> dns_;
  std::unique_ptr<flow::StarttlsStore> starttls_;
  std::unique_ptr<Notifier> notifier_;
  std::unique_ptr<engine::Engine> engine_;
  std::unique_ptr<engine::EngineServer> query_server_;
  std::unique_ptr<engine::EngineServer> direct_server_;
  std::unique_ptr<flow::DnsFeed> dns_feed_;
  std::unique_ptr<flow::Interceptor> interceptor_;
  bool running_ = false;
};

}  // namespace certgate::harness
