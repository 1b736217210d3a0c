#include "certgate/engine/service.hpp"

#include <poll.h>
#include <sys/eventfd.h>
#include <sys/socket.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include "certgate/tls/der.hpp"

namespace certgate::engine {

struct EngineServer::Connection {
  UniqueFd fd;
  std::mutex write_mutex;

  void send(const Bytes& frame) {
    std::lock_guard lock(write_mutex);
    try {
      write_all(fd.get(), frame);
    } catch (const SocketError& e) {
      spdlog::debug("engine: response dropped: {}", e.what());
    }
  }
};

namespace {

UniqueFd make_eventfd() {
  int fd = eventfd(0, EFD_CLOEXEC | EFD_NONBLOCK);
  if (fd < 0) throw SocketError("eventfd failed");
  return UniqueFd(fd);
}

}  // namespace

bool well_formed_chain(const std::vector<Bytes>& chain) {
  if (chain.empty()) return false;
  for (const auto& der : chain) {
    auto cert = tls::der::read(der, 0, der.size());
    if (!cert || cert->tag != tls::der::kSequence || cert->end() != der.size()) return false;
    auto parts = tls::der::children(der, *cert);
    if (!parts || parts->size() != 3) return false;
  }
  return true;
}

EngineServer::EngineServer(Engine& engine, std::filesystem::path socket_path, Role role, unsigned mode)
    : engine_(engine), path_(std::move(socket_path)), role_(role), mode_(mode) {}

EngineServer::~EngineServer() { stop(); }

void EngineServer::start() {
  std::error_code ec;
  std::filesystem::remove(path_, ec);
  listener_ = listen_unix(path_, mode_);
  wake_ = make_eventfd();
  acceptor_ = std::thread([this] { accept_loop(); });
}

void EngineServer::accept_loop() {
  const int wake = wake_.get();
  while (!stopping_) {
    pollfd fds[2] = {{listener_.get(), POLLIN, 0}, {wake, POLLIN, 0}};
    if (poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (fds[1].revents) break;
    if (!(fds[0].revents & POLLIN)) continue;
    int fd = accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    auto conn = std::make_shared<Connection>();
    conn->fd = UniqueFd(fd);
    std::lock_guard lock(mutex_);
    if (stopping_) break;
    connections_.push_back(conn);
    ++in_flight_;
    std::thread([this, conn] {
      serve(conn);
      std::lock_guard lock(mutex_);
      connections_.remove(conn);
      if (--in_flight_ == 0) idle_.notify_all();
    }).detach();
  }
}

void EngineServer::serve(std::shared_ptr<Connection> conn) {
  const auto expected = role_ == Role::Interceptor ? ipc::FrameType::Query : ipc::FrameType::DirectRequest;
  try {
    while (auto body = ipc::read_frame(conn->fd.get())) {
      auto frame = ipc::decode(*body);
      auto* q = std::get_if<ipc::QueryFrame>(&frame);
      if (!q || q->type != expected) throw ipc::ProtocolError("unexpected frame type for this socket");
      {
        std::lock_guard lock(mutex_);
        ++in_flight_;
      }
      std::thread([this, conn, query = std::move(q->query), type = q->type]() mutable {
        answer(conn, std::move(query), type);
        std::lock_guard lock(mutex_);
        if (--in_flight_ == 0) idle_.notify_all();
      }).detach();
    }
  } catch (const std::exception& e) {
    spdlog::warn("engine: closing connection: {}", e.what());
  }
  shutdown(conn->fd.get(), SHUT_RDWR);
}

void EngineServer::answer(std::shared_ptr<Connection> conn, ValidationQuery query, ipc::FrameType type) {
  if (type == ipc::FrameType::Query) {
    ipc::ResponseFrame response;
    response.id = query.id;
    try {
      response.decision = engine_.evaluate(query).decision;
    } catch (const std::exception& e) {
      spdlog::error("engine: evaluation failed: {}", e.what());
      response.decision = PolicyDecision{};
    }
    conn->send(ipc::encode(response));
    return;
  }

  ipc::DirectResponseFrame response;
  response.id = query.id;
  if (well_formed_chain(query.chain)) {
    try {
      auto eval = engine_.evaluate(query);
      response.decision = std::move(eval.decision);
      response.verdicts = std::move(eval.verdicts);
    } catch (const std::exception& e) {
      spdlog::error("engine: evaluation failed: {}", e.what());
      response.decision = PolicyDecision{};
    }
  }
  conn->send(ipc::encode(response));
}

void EngineServer::stop() {
  if (stopping_.exchange(true)) return;
  if (wake_) {
    std::uint64_t one = 1;
    [[maybe_unused]] auto n = write(wake_.get(), &one, sizeof one);
  }
  if (acceptor_.joinable()) acceptor_.join();
  wake_.reset();
  std::unique_lock lock(mutex_);
  for (auto& conn : connections_) shutdown(conn->fd.get(), SHUT_RDWR);
  idle_.wait(lock, [this] { return in_flight_ == 0; });
  lock.unlock();
  listener_.reset();
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

// EngineClient

struct EngineClient::Connection {
  UniqueFd fd;
  std::mutex write_mutex;
};

EngineClient::EngineClient(std::filesystem::path socket_path) : path_(std::move(socket_path)) {}

EngineClient::~EngineClient() { close(); }

std::shared_ptr<EngineClient::Connection> EngineClient::connect_locked() {
  if (conn_) return conn_;
  UniqueFd fd;
  try {
    fd = connect_unix(path_);
  } catch (const SocketError& e) {
    spdlog::warn("engine unreachable: {}", e.what());
    return nullptr;
  }
  conn_ = std::make_shared<Connection>();
  conn_->fd = std::move(fd);
  ++readers_;
  std::thread([this, conn = conn_] {
    read_loop(conn);
    {
      std::lock_guard lock(mutex_);
      if (conn_ == conn) conn_.reset();
    }
    fail_all();
    std::lock_guard lock(mutex_);
    if (--readers_ == 0) readers_done_.notify_all();
  }).detach();
  return conn_;
}

void EngineClient::read_loop(const std::shared_ptr<Connection>& conn) {
  try {
    while (auto body = ipc::read_frame(conn->fd.get())) {
      auto frame = ipc::decode(*body);
      auto* response = std::get_if<ipc::ResponseFrame>(&frame);
      if (!response) throw ipc::ProtocolError("unexpected frame from engine");
      Callback cb;
      {
        std::lock_guard lock(mutex_);
        auto it = pending_.find(response->id);
        if (it == pending_.end()) continue;
        cb = std::move(it->second);
        pending_.erase(it);
      }
      cb(std::move(response->decision));
    }
  } catch (const std::exception& e) {
    spdlog::warn("engine connection: {}", e.what());
  }
}

void EngineClient::fail_all() {
  std::unordered_map<std::uint64_t, Callback> failed;
  {
    std::lock_guard lock(mutex_);
    failed.swap(pending_);
  }
  for (auto& [id, cb] : failed) cb(std::nullopt);
}

std::uint64_t EngineClient::submit(ValidationQuery query, Callback callback) {
  std::shared_ptr<Connection> conn;
  {
    std::lock_guard lock(mutex_);
    query.id = next_id_++;
    if (!closed_) conn = connect_locked();
    if (conn) pending_.emplace(query.id, callback);
  }
  const auto id = query.id;
  if (!conn) {
    callback(std::nullopt);
    return id;
  }
  try {
    std::lock_guard lock(conn->write_mutex);
    write_all(conn->fd.get(), ipc::encode(ipc::QueryFrame{ipc::FrameType::Query, std::move(query)}));
  } catch (const SocketError&) {
    // The reader sees the shutdown and fails every pending query, this one included.
    shutdown(conn->fd.get(), SHUT_RDWR);
  }
  return id;
}

void EngineClient::cancel(std::uint64_t id) {
  std::lock_guard lock(mutex_);
  pending_.erase(id);
}

std::size_t EngineClient::outstanding() const {
  std::lock_guard lock(mutex_);
  return pending_.size();
}

void EngineClient::close() {
  std::unique_lock lock(mutex_);
  closed_ = true;
  if (conn_) shutdown(conn_->fd.get(), SHUT_RDWR);
  readers_done_.wait(lock, [this] { return readers_ == 0; });
}

// Direct validation

DirectResult validate_direct(const std::filesystem::path& socket_path, const std::string& hostname,
                             std::uint16_t port, const std::vector<Bytes>& chain,
                             std::chrono::milliseconds timeout) {
  if (chain.empty()) throw MalformedChain("empty certificate chain");
  if (!well_formed_chain(chain)) throw MalformedChain("certificate is not well-formed DER");

  ValidationQuery query;
  query.id = 1;
  query.hostname = hostname;
  query.port = port;
  query.chain = chain;

  auto fd = connect_unix(socket_path);
  write_all(fd.get(), ipc::encode(ipc::QueryFrame{ipc::FrameType::DirectRequest, std::move(query)}));
  if (!wait_readable(fd.get(), timeout)) throw SocketError("direct validation timed out");
  auto body = ipc::read_frame(fd.get());
  if (!body) throw ipc::ProtocolError("engine closed the connection");
  auto frame = ipc::decode(*body);
  auto* response = std::get_if<ipc::DirectResponseFrame>(&frame);
  if (!response || response->id != 1) throw ipc::ProtocolError("unexpected direct response");
  return DirectResult{std::move(response->decision), std::move(response->verdicts)};
}

}  // namespace certgate::engine
