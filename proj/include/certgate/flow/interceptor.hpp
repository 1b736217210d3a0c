#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "certgate/core/socket.hpp"
#include "certgate/engine/service.hpp"
#include "certgate/flow/handler.hpp"

namespace certgate::flow {

enum class InterceptMode { Explicit, Transparent };

struct FlowEvent {
  FlowKey key;
  std::string hostname;
  Phase phase = Phase::New;  // phase when the flow ended
  SeverReason reason = SeverReason::None;
  std::uint64_t client_to_server = 0;
  std::uint64_t server_to_client = 0;
};

struct InterceptorOptions {
  Endpoint listen;
  InterceptMode mode = InterceptMode::Explicit;
  std::filesystem::path engine_socket;
  std::chrono::milliseconds engine_timeout{5000};
  FlowEnvironment env;

  // Explicit mode: turns "host", port into candidate addresses. Defaults to getaddrinfo.
  std::function<std::vector<Endpoint>(const std::string&, std::uint16_t)> resolver;
  // Defaults to connect_tcp.
  std::function<UniqueFd(const Endpoint&)> dialer;
};

// Parses "CONNECT host:port" (trailing CR allowed). Returns nullopt when malformed.
std::optional<std::pair<std::string, std::uint16_t>> parse_connect_line(std::string_view line);

// Original destination of a redirected socket; throws DestinationUnknown.
Endpoint original_destination(int fd);

// TCP relay running one FlowHandler per accepted connection.
class Interceptor {
 public:
  explicit Interceptor(InterceptorOptions options);
  ~Interceptor();

  Interceptor(const Interceptor&) = delete;
  Interceptor& operator=(const Interceptor&) = delete;

  void start();
  void stop();

  Endpoint local_endpoint() const { return bound_; }
  void set_event_sink(std::function<void(const FlowEvent&)> sink);

  std::size_t live_flows() const;
  // Sum of FlowHandler::tracked_bytes over live flows.
  std::size_t tracked_bytes() const;
  // Per-flow gauge values.
  std::vector<std::size_t> flow_gauges() const;

  std::size_t flows_started() const { return started_.load(); }

 private:
  struct Slot;

  void accept_loop();
  void run_flow(std::shared_ptr<Slot> slot, UniqueFd client);
  void finish_flow(const std::shared_ptr<Slot>& slot, const FlowEvent& event);

  InterceptorOptions options_;
  std::unique_ptr<engine::EngineClient> engine_;
  UniqueFd listener_;
  UniqueFd wake_;
  Endpoint bound_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::size_t> started_{0};

  mutable std::mutex mutex_;
  std::condition_variable idle_;
  std::map<std::uint64_t, std::shared_ptr<Slot>> flows_;
  std::uint64_t next_flow_ = 1;
  std::function<void(const FlowEvent&)> sink_;
};

}  // namespace certgate::flow
