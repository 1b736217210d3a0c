#pragma once

#include <ctime>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "certgate/core/address.hpp"
#include "certgate/core/bytes.hpp"
#include "certgate/engine/types.hpp"
#include "certgate/flow/dns_log.hpp"
#include "certgate/flow/starttls.hpp"

namespace certgate::flow {

enum class Phase : std::uint8_t {
  New,
  Classifying,
  TlsAwaitClientHello,
  TlsAwaitServerHandshake,
  Validating,
  Allowed,
  Blocked,
  Ignored,
  PlainMonitor,
  StarttlsAwaitServerAck,
};

const char* to_string(Phase phase);

enum class SeverReason : std::uint8_t {
  None,
  PolicyInvalid,       // scrambled leaf delivered, then closed
  ScrambleMissing,     // Invalid without a usable scrambled leaf
  MalformedHandshake,
  EngineTimeout,
  EngineUnavailable,
  StarttlsDowngrade,
  PeerClosed,
};

const char* to_string(SeverReason reason);

struct FlowKey {
  Endpoint client;
  Endpoint destination;

  friend bool operator==(const FlowKey&, const FlowKey&) = default;
};

class DestinationUnknown : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shared by every flow of one interceptor.
struct FlowEnvironment {
  std::set<std::uint16_t> starttls_ports;
  bool enforce_starttls = false;
  DnsLog* dns = nullptr;
  StarttlsStore* starttls = nullptr;
  std::function<std::time_t()> clock = [] { return std::time(nullptr); };
};

// What the relay does after an event. Extra bytes are written first, then the input bytes
// (when forward is set) go to the other side; close shuts both directions afterwards.
struct Action {
  bool forward = false;
  Bytes to_server;
  Bytes to_client;
  bool close = false;
  SeverReason reason = SeverReason::None;
  std::optional<engine::ValidationQuery> query;
};

// One flow's TLS / STARTTLS state machine. Pure: no I/O, no engine access.
class FlowHandler {
 public:
  FlowHandler(FlowKey key, const FlowEnvironment& env, std::string host_hint = {});
  ~FlowHandler();
  FlowHandler(FlowHandler&&) noexcept;
  FlowHandler& operator=(FlowHandler&&) noexcept;

  Phase phase() const { return phase_; }
  const FlowKey& key() const { return key_; }
  // False once the flow is Allowed, Ignored or Blocked and carries no inspection state.
  bool inspecting() const { return inspection_ != nullptr; }

  Action on_client_bytes(ByteView bytes);
  Action on_server_bytes(ByteView bytes);
  Action on_client_eof();
  Action on_server_eof();
  Action apply_decision(const engine::PolicyDecision& decision);
  Action on_engine_failure(SeverReason reason);

  // Hostname used for the engine query (SNI, then the connect hint, then the DNS log).
  std::string hostname() const;

  // Fixed record plus heap owned by the inspection state.
  std::size_t tracked_bytes() const;
  // Payload bytes held (classification prefix, withheld server bytes, capture, line buffers).
  std::size_t retained_bytes() const;

 private:
  struct Inspection;

  Action classify(ByteView bytes);
  Action feed_client_tls(ByteView bytes, Action action);
  Action buffer_server(ByteView bytes);
  Action monitor_client(ByteView bytes);
  Action monitor_server(ByteView bytes);
  Action sever(SeverReason reason);
  void finish(Phase phase);
  std::string starttls_host() const;
  engine::ValidationQuery make_query() const;

  FlowKey key_;
  Phase phase_ = Phase::New;
  const FlowEnvironment* env_;
  std::unique_ptr<Inspection> inspection_;
};

}  // namespace certgate::flow
