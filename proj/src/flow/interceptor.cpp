#include "certgate/flow/interceptor.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <charconv>
#include <cstring>

#include <spdlog/spdlog.h>

namespace certgate::flow {
namespace {

// From linux/netfilter_ipv4.h and ip6_tables.h, which clash with the libc socket headers.
constexpr int kSoOriginalDst = 80;

constexpr std::size_t kReadChunk = 16384;
constexpr std::size_t kMaxPreamble = 512;
constexpr int kPipeSize = 1 << 20;

using Clock = std::chrono::steady_clock;

std::vector<Endpoint> resolve_default(const std::string& host, std::uint16_t port) {
  if (auto ip = IpAddress::parse(host)) return {Endpoint{*ip, port}};
  addrinfo hints{};
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0) return {};
  std::vector<Endpoint> out;
  for (auto* p = res; p; p = p->ai_next) {
    if (auto ep = Endpoint::from_sockaddr(p->ai_addr)) {
      ep->port = port;
      out.push_back(*ep);
    }
  }
  ::freeaddrinfo(res);
  return out;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL);
  if (flags >= 0) ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void wake(int fd) {
  const std::uint64_t one = 1;
  [[maybe_unused]] auto r = ::write(fd, &one, sizeof(one));
}

void drain(int fd) {
  std::uint64_t v;
  [[maybe_unused]] auto r = ::read(fd, &v, sizeof(v));
}

// Decision handed from the engine client's reader thread to the flow thread.
struct Mailbox {
  std::mutex mutex;
  bool arrived = false;
  std::optional<engine::PolicyDecision> decision;
  UniqueFd event{::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK)};
};

// One direction of the splice relay.
struct Pipe {
  UniqueFd read_end;
  UniqueFd write_end;
  std::size_t pending = 0;
  bool source_done = false;
  bool shut = false;
  std::uint64_t moved = 0;

  bool open() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC | O_NONBLOCK) != 0) return false;
    read_end.reset(fds[0]);
    write_end.reset(fds[1]);
    ::fcntl(fds[1], F_SETPIPE_SZ, kPipeSize);
    return true;
  }
  bool finished() const { return shut; }
};

enum class Step { Progress, Blocked, Failed };

Step pump_in(int src, Pipe& p) {
  const ssize_t n = ::splice(src, nullptr, p.write_end.get(), nullptr, kPipeSize,
                             SPLICE_F_MOVE | SPLICE_F_NONBLOCK);
  if (n > 0) {
    p.pending += static_cast<std::size_t>(n);
    return Step::Progress;
  }
  if (n == 0) {
    p.source_done = true;
    return Step::Progress;
  }
  if (errno == EAGAIN || errno == EINTR) return Step::Blocked;
  if (errno == ECONNRESET) {
    p.source_done = true;
    return Step::Progress;
  }
  return Step::Failed;
}

Step pump_out(Pipe& p, int dst) {
  const ssize_t n = ::splice(p.read_end.get(), nullptr, dst, nullptr, p.pending,
                             SPLICE_F_MOVE | SPLICE_F_NONBLOCK);
  if (n > 0) {
    p.pending -= static_cast<std::size_t>(n);
    p.moved += static_cast<std::uint64_t>(n);
    return Step::Progress;
  }
  if (n < 0 && (errno == EAGAIN || errno == EINTR)) return Step::Blocked;
  return Step::Failed;
}

}  // namespace

std::optional<std::pair<std::string, std::uint16_t>> parse_connect_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  constexpr std::string_view kVerb = "CONNECT ";
  if (line.substr(0, kVerb.size()) != kVerb) return std::nullopt;
  line.remove_prefix(kVerb.size());
  const auto colon = line.rfind(':');
  if (colon == std::string_view::npos || colon == 0) return std::nullopt;
  auto host = line.substr(0, colon);
  const auto port_text = line.substr(colon + 1);
  unsigned port = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port == 0 || port > 65535) {
    return std::nullopt;
  }
  if (host.front() == '[') {
    if (host.back() != ']') return std::nullopt;
    host = host.substr(1, host.size() - 2);
  }
  if (host.empty() || host.find(' ') != std::string_view::npos) return std::nullopt;
  return std::make_pair(std::string(host), static_cast<std::uint16_t>(port));
}

Endpoint original_destination(int fd) {
  sockaddr_storage ss{};
  socklen_t len = sizeof(ss);
  if (::getsockopt(fd, SOL_IP, kSoOriginalDst, &ss, &len) != 0) {
    len = sizeof(ss);
    if (::getsockopt(fd, SOL_IPV6, kSoOriginalDst, &ss, &len) != 0) {
      throw DestinationUnknown(std::string("original destination unavailable: ") + std::strerror(errno));
    }
  }
  auto ep = Endpoint::from_sockaddr(reinterpret_cast<const sockaddr*>(&ss));
  if (!ep) throw DestinationUnknown("original destination has an unsupported family");
  return *ep;
}

struct Interceptor::Slot {
  std::uint64_t id = 0;
  std::atomic<std::size_t> tracked{0};
  std::mutex fd_mutex;
  std::vector<int> fds;  // for stop(): shut down to unblock the flow thread

  void add_fd(int fd) {
    std::lock_guard lock(fd_mutex);
    fds.push_back(fd);
  }
  void shutdown_all() {
    std::lock_guard lock(fd_mutex);
    for (int fd : fds) ::shutdown(fd, SHUT_RDWR);
  }
};

Interceptor::Interceptor(InterceptorOptions options) : options_(std::move(options)) {
  if (!options_.resolver) options_.resolver = resolve_default;
  if (!options_.dialer) options_.dialer = [](const Endpoint& ep) { return connect_tcp(ep); };
  engine_ = std::make_unique<engine::EngineClient>(options_.engine_socket);
}

Interceptor::~Interceptor() { stop(); }

void Interceptor::set_event_sink(std::function<void(const FlowEvent&)> sink) {
  std::lock_guard lock(mutex_);
  sink_ = std::move(sink);
}

void Interceptor::start() {
  listener_ = listen_tcp(options_.listen);
  bound_ = certgate::local_endpoint(listener_.get());
  wake_.reset(::eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK));
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void Interceptor::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  wake(wake_.get());
  acceptor_.join();
  listener_.reset();
  std::unique_lock lock(mutex_);
  for (auto& [id, slot] : flows_) slot->shutdown_all();
  idle_.wait(lock, [&] { return flows_.empty(); });
  lock.unlock();
  engine_->close();
}

std::size_t Interceptor::live_flows() const {
  std::lock_guard lock(mutex_);
  return flows_.size();
}

std::size_t Interceptor::tracked_bytes() const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& [id, slot] : flows_) total += slot->tracked.load();
  return total;
}

std::vector<std::size_t> Interceptor::flow_gauges() const {
  std::lock_guard lock(mutex_);
  std::vector<std::size_t> out;
  out.reserve(flows_.size());
  for (const auto& [id, slot] : flows_) out.push_back(slot->tracked.load());
  return out;
}

void Interceptor::accept_loop() {
  while (!stopping_) {
    pollfd fds[2] = {{listener_.get(), POLLIN, 0}, {wake_.get(), POLLIN, 0}};
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      spdlog::error("interceptor: poll: {}", std::strerror(errno));
      return;
    }
    if (fds[1].revents) break;
    if (!(fds[0].revents & POLLIN)) continue;
    UniqueFd client(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!client) continue;
    auto slot = std::make_shared<Slot>();
    slot->tracked = sizeof(FlowHandler);
    slot->add_fd(client.get());
    {
      std::lock_guard lock(mutex_);
      slot->id = next_flow_++;
      flows_.emplace(slot->id, slot);
    }
    ++started_;
    std::thread([this, slot, fd = client.release()]() mutable { run_flow(slot, UniqueFd(fd)); }).detach();
  }
}

void Interceptor::finish_flow(const std::shared_ptr<Slot>& slot, const FlowEvent& event) {
  std::function<void(const FlowEvent&)> sink;
  {
    std::lock_guard lock(mutex_);
    sink = sink_;
  }
  if (sink) {
    try {
      sink(event);
    } catch (const std::exception& e) {
      spdlog::warn("interceptor: event sink failed: {}", e.what());
    }
  }
  std::lock_guard lock(mutex_);
  flows_.erase(slot->id);
  if (flows_.empty()) idle_.notify_all();
}

void Interceptor::run_flow(std::shared_ptr<Slot> slot, UniqueFd client) {
  FlowEvent event;
  Bytes early;  // client bytes that followed the explicit-mode preamble
  std::string hint;
  UniqueFd server;

  try {
    event.key.client = peer_endpoint(client.get());
    if (options_.mode == InterceptMode::Transparent) {
      event.key.destination = original_destination(client.get());
    } else {
      std::string line;
      std::array<std::uint8_t, kMaxPreamble> buf{};
      for (;;) {
        const auto n = read_some(client.get(), buf.data(), buf.size());
        if (n == 0) throw DestinationUnknown("client closed before the preamble");
        const auto* nl = static_cast<const std::uint8_t*>(std::memchr(buf.data(), '\n', n));
        const std::size_t take = nl ? static_cast<std::size_t>(nl - buf.data()) : n;
        line.append(reinterpret_cast<const char*>(buf.data()), take);
        if (line.size() > kMaxPreamble) throw DestinationUnknown("preamble too long");
        if (nl) {
          early.assign(nl + 1, static_cast<const std::uint8_t*>(buf.data() + n));
          break;
        }
      }
      auto target = parse_connect_line(line);
      if (!target) throw DestinationUnknown("malformed preamble");
      auto candidates = options_.resolver(target->first, target->second);
      if (candidates.empty()) throw DestinationUnknown("cannot resolve " + target->first);
      event.key.destination = candidates.front();
      if (!IpAddress::parse(target->first)) {
        hint = target->first;
        if (options_.env.dns) {
          options_.env.dns->record({event.key.destination.address, hint, options_.env.clock()});
        }
      }
    }
    server = options_.dialer(event.key.destination);
    slot->add_fd(server.get());
  } catch (const std::exception& e) {
    spdlog::info("interceptor: flow refused: {}", e.what());
    event.phase = Phase::New;
    event.reason = SeverReason::PeerClosed;
    client.reset();
    finish_flow(slot, event);
    return;
  }
  if (stopping_) slot->shutdown_all();

  FlowHandler handler(event.key, options_.env, hint);
  auto mailbox = std::make_shared<Mailbox>();
  std::optional<std::uint64_t> query_id;
  Clock::time_point deadline{};
  bool client_open = true;
  bool server_open = true;
  bool done = false;

  auto apply = [&](Action action, ByteView input, bool from_client) {
    if (!action.to_server.empty()) write_all(server.get(), action.to_server);
    if (action.forward && from_client && !input.empty()) write_all(server.get(), input);
    if (!action.to_client.empty()) write_all(client.get(), action.to_client);
    if (action.forward && !from_client && !input.empty()) write_all(client.get(), input);
    event.client_to_server += action.to_server.size() + (action.forward && from_client ? input.size() : 0);
    event.server_to_client += action.to_client.size() + (action.forward && !from_client ? input.size() : 0);
    if (action.query) {
      action.query->id = 0;
      event.hostname = action.query->hostname;
      deadline = Clock::now() + options_.engine_timeout;
      std::weak_ptr<Mailbox> weak = mailbox;
      query_id = engine_->submit(std::move(*action.query), [weak](std::optional<engine::PolicyDecision> d) {
        if (auto box = weak.lock()) {
          {
            std::lock_guard lock(box->mutex);
            box->arrived = true;
            box->decision = std::move(d);
          }
          wake(box->event.get());
        }
      });
    }
    if (action.reason != SeverReason::None) event.reason = action.reason;
    if (action.close) done = true;
    slot->tracked = handler.tracked_bytes();
  };

  try {
    if (!early.empty()) apply(handler.on_client_bytes(early), early, true);
    std::vector<std::uint8_t> buf(kReadChunk);
    while (!done && handler.inspecting()) {
      pollfd fds[3] = {{client_open ? client.get() : -1, POLLIN, 0},
                       {server_open ? server.get() : -1, POLLIN, 0},
                       {mailbox->event.get(), POLLIN, 0}};
      int timeout = -1;
      if (handler.phase() == Phase::Validating) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        timeout = static_cast<int>(std::max<std::int64_t>(0, left.count()));
      }
      const int ready = ::poll(fds, 3, timeout);
      if (ready < 0) {
        if (errno == EINTR) continue;
        break;
      }
      if (ready == 0) {
        if (query_id) engine_->cancel(*query_id);
        apply(handler.on_engine_failure(SeverReason::EngineTimeout), {}, false);
        continue;
      }
      if (fds[2].revents) {
        drain(mailbox->event.get());
        std::unique_lock lock(mailbox->mutex);
        if (mailbox->arrived) {
          mailbox->arrived = false;
          auto decision = std::move(mailbox->decision);
          lock.unlock();
          query_id.reset();
          if (decision) {
            apply(handler.apply_decision(*decision), {}, false);
          } else {
            apply(handler.on_engine_failure(SeverReason::EngineUnavailable), {}, false);
          }
          continue;
        }
      }
      if (fds[1].revents) {
        const auto n = read_some(server.get(), buf.data(), buf.size());
        if (n == 0) {
          server_open = false;
          apply(handler.on_server_eof(), {}, false);
          if (handler.phase() == Phase::Allowed || handler.phase() == Phase::Ignored) {
            ::shutdown(client.get(), SHUT_WR);
          }
        } else {
          apply(handler.on_server_bytes(ByteView(buf.data(), n)), ByteView(buf.data(), n), false);
        }
        continue;
      }
      if (fds[0].revents) {
        const auto n = read_some(client.get(), buf.data(), buf.size());
        if (n == 0) {
          client_open = false;
          apply(handler.on_client_eof(), {}, true);
          ::shutdown(server.get(), SHUT_WR);
        } else {
          apply(handler.on_client_bytes(ByteView(buf.data(), n)), ByteView(buf.data(), n), true);
        }
      }
    }
  } catch (const std::exception& e) {
    spdlog::debug("interceptor: flow {} ended: {}", event.key.destination.to_string(), e.what());
    done = true;
    if (event.reason == SeverReason::None) event.reason = SeverReason::PeerClosed;
  }
  if (query_id) engine_->cancel(*query_id);

  const bool relay = !done && (handler.phase() == Phase::Allowed || handler.phase() == Phase::Ignored);
  slot->tracked = handler.tracked_bytes();
  if (relay) {
    // Verbatim relay: bytes move kernel-to-kernel and nothing is retained.
    Pipe up, down;
    if (up.open() && down.open()) {
      set_nonblocking(client.get());
      set_nonblocking(server.get());
      up.source_done = !client_open;
      up.shut = !client_open;
      down.source_done = !server_open;
      down.shut = !server_open;
      bool failed = false;
      while (!failed && !(up.finished() && down.finished())) {
        pollfd fds[4];
        int n = 0;
        int idx_cin = -1, idx_sin = -1;
        if (!up.source_done) { idx_cin = n; fds[n++] = {client.get(), POLLIN, 0}; }
        if (!down.source_done) { idx_sin = n; fds[n++] = {server.get(), POLLIN, 0}; }
        if (up.pending > 0) fds[n++] = {server.get(), POLLOUT, 0};
        if (down.pending > 0) fds[n++] = {client.get(), POLLOUT, 0};
        if (n == 0) break;
        if (::poll(fds, n, -1) < 0) {
          if (errno == EINTR) continue;
          break;
        }
        auto hit = [&](int idx) { return idx >= 0 && fds[idx].revents != 0; };
        // Keep each direction moving until it would block before polling again.
        auto drive = [&](bool readable, int src, Pipe& p, int dst) {
          for (;;) {
            Step in = Step::Blocked;
            if (readable && !p.source_done && p.pending < kPipeSize) in = pump_in(src, p);
            Step out = Step::Blocked;
            if (p.pending > 0) out = pump_out(p, dst);
            if (in == Step::Failed || out == Step::Failed) return false;
            if (in != Step::Progress && out != Step::Progress) return true;
          }
        };
        if (!drive(hit(idx_cin), client.get(), up, server.get())) failed = true;
        if (!drive(hit(idx_sin), server.get(), down, client.get())) failed = true;
        if (up.source_done && up.pending == 0 && !up.shut) {
          ::shutdown(server.get(), SHUT_WR);
          up.shut = true;
        }
        if (down.source_done && down.pending == 0 && !down.shut) {
          ::shutdown(client.get(), SHUT_WR);
          down.shut = true;
        }
      }
      event.client_to_server += up.moved;
      event.server_to_client += down.moved;
    }
  }

  event.phase = handler.phase();
  if (event.hostname.empty()) event.hostname = hint;
  ::shutdown(client.get(), SHUT_RDWR);
  ::shutdown(server.get(), SHUT_RDWR);
  {
    std::lock_guard lock(slot->fd_mutex);
    slot->fds.clear();
  }
  client.reset();
  server.reset();
  finish_flow(slot, event);
}

}  // namespace certgate::flow
