#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "certgate/core/socket.hpp"
#include "certgate/engine/engine.hpp"
#include "certgate/engine/ipc.hpp"

namespace certgate::engine {

// Serves an Engine on a local stream socket. The Interceptor role answers Query frames with
// Response frames; the Direct role answers DirectRequest frames with DirectResponse frames.
// Any other frame, or a malformed one, closes that connection only.
class EngineServer {
 public:
  enum class Role { Interceptor, Direct };

  EngineServer(Engine& engine, std::filesystem::path socket_path, Role role, unsigned mode = 0600);
  ~EngineServer();

  EngineServer(const EngineServer&) = delete;
  EngineServer& operator=(const EngineServer&) = delete;

  void start();
  void stop();

  const std::filesystem::path& path() const { return path_; }

 private:
  struct Connection;

  void accept_loop();
  void serve(std::shared_ptr<Connection> conn);
  void answer(std::shared_ptr<Connection> conn, ValidationQuery query, ipc::FrameType type);

  Engine& engine_;
  std::filesystem::path path_;
  Role role_;
  unsigned mode_;
  UniqueFd listener_;
  UniqueFd wake_;
  std::thread acceptor_;
  std::atomic<bool> stopping_{false};

  std::mutex mutex_;
  std::condition_variable idle_;
  std::list<std::shared_ptr<Connection>> connections_;
  std::size_t in_flight_ = 0;  // connection readers plus queries being answered
};

// Multiplexed client used by the interceptor. Callbacks run on the client's reader thread and
// receive nullopt when the engine connection is lost before a response arrives.
class EngineClient {
 public:
  using Callback = std::function<void(std::optional<PolicyDecision>)>;

  explicit EngineClient(std::filesystem::path socket_path);
  ~EngineClient();

  EngineClient(const EngineClient&) = delete;
  EngineClient& operator=(const EngineClient&) = delete;

  // Assigns the query id and returns it. Connects lazily; on failure the callback runs
  // immediately with nullopt.
  std::uint64_t submit(ValidationQuery query, Callback callback);
  // Drops the callback for an outstanding query.
  void cancel(std::uint64_t id);
  void close();

  std::size_t outstanding() const;

 private:
  struct Connection;

  std::shared_ptr<Connection> connect_locked();
  void read_loop(const std::shared_ptr<Connection>& conn);
  void fail_all();

  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::condition_variable readers_done_;
  std::shared_ptr<Connection> conn_;
  std::size_t readers_ = 0;
  std::unordered_map<std::uint64_t, Callback> pending_;
  std::uint64_t next_id_ = 1;
  bool closed_ = false;
};

class MalformedChain : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DirectResult {
  PolicyDecision decision;
  VerdictList verdicts;
};

// Throws MalformedChain for an empty chain or an entry that is not a single DER SEQUENCE,
// SocketError or ipc::ProtocolError for transport failures.
DirectResult validate_direct(const std::filesystem::path& socket_path, const std::string& hostname,
                             std::uint16_t port, const std::vector<Bytes>& chain,
                             std::chrono::milliseconds timeout = std::chrono::milliseconds(10000));

// Structural DER check shared by the direct client and server.
bool well_formed_chain(const std::vector<Bytes>& chain);

}  // namespace certgate::engine
