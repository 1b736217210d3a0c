#include "certgate/flow/handler.hpp"

#include <algorithm>
#include <cctype>

#include "certgate/tls/errors.hpp"
#include "certgate/tls/handshake.hpp"
#include "certgate/tls/record.hpp"
#include "certgate/tls/rewrite.hpp"

namespace certgate::flow {
namespace {

constexpr std::size_t kMaxLine = 1024;
// Server bytes withheld while a decision is pending; the capture itself stops at 1 MiB.
constexpr std::size_t kMaxWithheld = tls::kMaxCaptureBytes + 64 * 1024;

std::string upper_trimmed(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
  return out;
}

// Splits complete lines out of buffer+bytes; a line longer than kMaxLine is dropped.
template <typename Fn>
void for_each_line(std::string& buffer, ByteView bytes, Fn&& fn) {
  for (auto b : bytes) {
    if (b == '\n') {
      if (buffer.size() <= kMaxLine) fn(std::string_view(buffer));
      buffer.clear();
    } else if (buffer.size() <= kMaxLine) {
      buffer.push_back(static_cast<char>(b));
    }
  }
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::New: return "new";
    case Phase::Classifying: return "classifying";
    case Phase::TlsAwaitClientHello: return "tls-await-client-hello";
    case Phase::TlsAwaitServerHandshake: return "tls-await-server-handshake";
    case Phase::Validating: return "validating";
    case Phase::Allowed: return "allowed";
    case Phase::Blocked: return "blocked";
    case Phase::Ignored: return "ignored";
    case Phase::PlainMonitor: return "plain-monitor";
    case Phase::StarttlsAwaitServerAck: return "starttls-await-server-ack";
  }
  return "?";
}

const char* to_string(SeverReason reason) {
  switch (reason) {
    case SeverReason::None: return "none";
    case SeverReason::PolicyInvalid: return "policy-invalid";
    case SeverReason::ScrambleMissing: return "scramble-missing";
    case SeverReason::MalformedHandshake: return "malformed-handshake";
    case SeverReason::EngineTimeout: return "engine-timeout";
    case SeverReason::EngineUnavailable: return "engine-unavailable";
    case SeverReason::StarttlsDowngrade: return "starttls-downgrade";
    case SeverReason::PeerClosed: return "peer-closed";
  }
  return "?";
}

struct FlowHandler::Inspection {
  std::string host_hint;
  Bytes prefix;  // client bytes held until classification
  tls::CaptureStream capture;
  Bytes withheld;  // server bytes not yet released to the client
  bool server_closed = false;

  // SMTP monitoring
  std::string client_line;
  std::string server_line;
  bool awaiting_ehlo = false;
  bool session_offered = false;

  std::size_t footprint() const {
    return sizeof(Inspection) + host_hint.capacity() + prefix.capacity() + capture.footprint() +
           withheld.capacity() + client_line.capacity() + server_line.capacity();
  }
  std::size_t retained() const {
    return prefix.size() + withheld.size() + capture.capture().buffered_bytes() + client_line.size() +
           server_line.size();
  }
};

FlowHandler::FlowHandler(FlowKey key, const FlowEnvironment& env, std::string host_hint)
    : key_(std::move(key)), env_(&env), inspection_(std::make_unique<Inspection>()) {
  inspection_->host_hint = std::move(host_hint);
  phase_ = env.starttls_ports.count(key_.destination.port) ? Phase::PlainMonitor : Phase::Classifying;
}

FlowHandler::~FlowHandler() = default;
FlowHandler::FlowHandler(FlowHandler&&) noexcept = default;
FlowHandler& FlowHandler::operator=(FlowHandler&&) noexcept = default;

void FlowHandler::finish(Phase phase) {
  phase_ = phase;
  inspection_.reset();
}

Action FlowHandler::sever(SeverReason reason) {
  finish(Phase::Blocked);
  Action a;
  a.close = true;
  a.reason = reason;
  return a;
}

std::string FlowHandler::hostname() const {
  if (!inspection_) return {};
  const auto& sni = inspection_->capture.capture().sni_hostname;
  if (sni) return *sni;
  if (!inspection_->host_hint.empty()) return inspection_->host_hint;
  if (env_->dns) {
    if (auto h = env_->dns->infer_host(key_.destination.address, env_->clock())) return *h;
  }
  return {};
}

std::string FlowHandler::starttls_host() const {
  auto host = hostname();
  return host.empty() ? key_.destination.address.to_string() : host;
}

engine::ValidationQuery FlowHandler::make_query() const {
  const auto& cap = inspection_->capture.capture();
  engine::ValidationQuery q;
  q.hostname = hostname();
  q.address = key_.destination.address;
  q.port = key_.destination.port;
  q.client_hello_raw = cap.client_hello_raw;
  q.server_hello_raw = cap.server_hello_raw;
  q.chain = cap.certificate_chain;
  return q;
}

Action FlowHandler::on_client_bytes(ByteView bytes) {
  switch (phase_) {
    case Phase::Classifying:
      return classify(bytes);
    case Phase::TlsAwaitClientHello: {
      Action a;
      a.forward = true;
      return feed_client_tls(bytes, std::move(a));
    }
    case Phase::PlainMonitor:
    case Phase::StarttlsAwaitServerAck:
      return monitor_client(bytes);
    case Phase::Blocked:
      return sever(SeverReason::None);
    default: {
      Action a;
      a.forward = true;
      return a;
    }
  }
}

Action FlowHandler::classify(ByteView bytes) {
  auto& prefix = inspection_->prefix;
  prefix.insert(prefix.end(), bytes.begin(), bytes.end());
  const auto kind = tls::classify_first_bytes(prefix);
  if (kind == tls::Classification::NeedMoreData) return Action{};

  Action a;
  a.to_server = std::move(prefix);
  if (kind == tls::Classification::NotTls) {
    finish(Phase::Ignored);
    return a;
  }
  phase_ = Phase::TlsAwaitClientHello;
  const Bytes first = a.to_server;
  return feed_client_tls(first, std::move(a));
}

Action FlowHandler::feed_client_tls(ByteView bytes, Action action) {
  try {
    inspection_->capture.feed(tls::Direction::ToServer, bytes);
  } catch (const tls::WireError&) {
    // Not a well-formed TLS client; stop inspecting and pass it through.
    finish(Phase::Ignored);
    return action;
  }
  if (inspection_->capture.client_hello_done()) {
    phase_ = Phase::TlsAwaitServerHandshake;
    if (env_->dns) {
      if (const auto& sni = inspection_->capture.capture().sni_hostname) {
        env_->dns->record({key_.destination.address, *sni, env_->clock()});
      }
    }
  }
  return action;
}

Action FlowHandler::on_server_bytes(ByteView bytes) {
  switch (phase_) {
    case Phase::Classifying: {
      // The server spoke first: not a TLS client flow.
      Action a;
      a.forward = true;
      a.to_server = std::move(inspection_->prefix);
      finish(Phase::Ignored);
      return a;
    }
    case Phase::TlsAwaitClientHello:
    case Phase::TlsAwaitServerHandshake:
    case Phase::Validating:
      return buffer_server(bytes);
    case Phase::PlainMonitor:
    case Phase::StarttlsAwaitServerAck:
      return monitor_server(bytes);
    case Phase::Blocked:
      return sever(SeverReason::None);
    default: {
      Action a;
      a.forward = true;
      return a;
    }
  }
}

Action FlowHandler::buffer_server(ByteView bytes) {
  auto& insp = *inspection_;
  if (insp.withheld.size() + bytes.size() > kMaxWithheld) return sever(SeverReason::MalformedHandshake);
  insp.withheld.insert(insp.withheld.end(), bytes.begin(), bytes.end());
  if (phase_ == Phase::Validating) return Action{};
  try {
    insp.capture.feed(tls::Direction::ToClient, bytes);
  } catch (const tls::WireError&) {
    return sever(SeverReason::MalformedHandshake);
  }
  Action a;
  if (insp.capture.capture().complete) {
    phase_ = Phase::Validating;
    a.query = make_query();
  }
  return a;
}

Action FlowHandler::apply_decision(const engine::PolicyDecision& decision) {
  if (phase_ != Phase::Validating) return Action{};
  auto& insp = *inspection_;
  if (decision.value == engine::Decision::Valid) {
    Action a;
    a.to_client = std::move(insp.withheld);
    a.close = insp.server_closed;
    finish(Phase::Allowed);
    return a;
  }
  const auto& chain = insp.capture.capture().certificate_chain;
  if (!decision.scrambled_leaf || chain.empty() ||
      !tls::rewrite_leaf(insp.withheld, chain.front(), *decision.scrambled_leaf)) {
    return sever(SeverReason::ScrambleMissing);
  }
  Action a;
  a.to_client = std::move(insp.withheld);
  a.close = true;
  a.reason = SeverReason::PolicyInvalid;
  finish(Phase::Blocked);
  return a;
}

Action FlowHandler::on_engine_failure(SeverReason reason) {
  if (phase_ != Phase::Validating) return Action{};
  return sever(reason);
}

Action FlowHandler::on_client_eof() {
  Action a;
  a.close = true;
  if (phase_ == Phase::Classifying && !inspection_->prefix.empty()) {
    a.to_server = std::move(inspection_->prefix);
    finish(Phase::Ignored);
    return a;
  }
  if (phase_ == Phase::Allowed || phase_ == Phase::Ignored) a.close = false;  // the relay half-closes
  if (inspection_ && phase_ != Phase::Validating) a.reason = SeverReason::PeerClosed;
  if (phase_ == Phase::Validating) a.reason = SeverReason::PeerClosed;
  return a;
}

Action FlowHandler::on_server_eof() {
  Action a;
  switch (phase_) {
    case Phase::Validating:
      // Deliver what was withheld once the decision arrives.
      inspection_->server_closed = true;
      return a;
    case Phase::TlsAwaitClientHello:
    case Phase::TlsAwaitServerHandshake:
      return sever(SeverReason::PeerClosed);
    case Phase::Allowed:
    case Phase::Ignored:
      return a;
    default:
      a.close = true;
      a.reason = SeverReason::PeerClosed;
      return a;
  }
}

Action FlowHandler::monitor_client(ByteView bytes) {
  Action a;
  a.forward = true;
  auto& insp = *inspection_;
  for_each_line(insp.client_line, bytes, [&](std::string_view line) {
    const auto command = upper_trimmed(line);
    if (command.rfind("EHLO", 0) == 0) {
      insp.awaiting_ehlo = true;
      insp.session_offered = false;
    } else if (command == "STARTTLS" && phase_ == Phase::PlainMonitor) {
      phase_ = Phase::StarttlsAwaitServerAck;
    }
  });
  return a;
}

Action FlowHandler::monitor_server(ByteView bytes) {
  Action a;
  a.forward = true;
  auto& insp = *inspection_;
  const auto now = env_->clock();
  bool downgrade = false;
  bool upgrade = false;
  for_each_line(insp.server_line, bytes, [&](std::string_view line) {
    if (downgrade || upgrade || line.size() < 3) return;
    const auto code = line.substr(0, 3);
    const bool last = line.size() == 3 || line[3] != '-';
    if (phase_ == Phase::StarttlsAwaitServerAck) {
      if (code == "220") {
        upgrade = true;
      } else {
        phase_ = Phase::PlainMonitor;
      }
      return;
    }
    if (code != "250") return;
    if (line.size() > 4 && upper_trimmed(line.substr(4)) == "STARTTLS") {
      insp.session_offered = true;
      if (env_->starttls) env_->starttls->mark_offered(starttls_host(), key_.destination.port, now);
    }
    if (insp.awaiting_ehlo && last) {
      insp.awaiting_ehlo = false;
      if (env_->enforce_starttls && env_->starttls &&
          enforce_starttls(env_->starttls->find(starttls_host(), key_.destination.port), insp.session_offered) ==
              Enforcement::Sever) {
        downgrade = true;
      }
    }
  });
  if (downgrade) return sever(SeverReason::StarttlsDowngrade);
  if (upgrade) {
    // The TLS handler takes over from the next client byte.
    phase_ = Phase::Classifying;
    auto hint = std::move(insp.host_hint);
    inspection_ = std::make_unique<Inspection>();
    inspection_->host_hint = std::move(hint);
  }
  return a;
}

std::size_t FlowHandler::tracked_bytes() const {
  return sizeof(FlowHandler) + (inspection_ ? inspection_->footprint() : 0);
}

std::size_t FlowHandler::retained_bytes() const { return inspection_ ? inspection_->retained() : 0; }

}  // namespace certgate::flow
