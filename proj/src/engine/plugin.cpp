#include "certgate/engine/plugin.hpp"

#include <dlfcn.h>
#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "certgate/core/socket.hpp"
#include "certgate/engine/ipc.hpp"
#include "certgate/engine/plugin_abi.h"

extern char** environ;

namespace certgate::engine {
namespace {

constexpr std::string_view kBuiltinPrefix = "builtin:";

class SharedObjectPlugin final : public Plugin {
 public:
  SharedObjectPlugin(const PluginSpec& spec, void* handle) : spec_(spec), handle_(handle) {
    query_ = reinterpret_cast<cg_plugin_query_fn>(dlsym(handle_, "cg_plugin_query"));
    init_ = reinterpret_cast<cg_plugin_initialize_fn>(dlsym(handle_, "cg_plugin_initialize"));
    fini_ = reinterpret_cast<cg_plugin_finalize_fn>(dlsym(handle_, "cg_plugin_finalize"));
    if (auto* flag = static_cast<const int*>(dlsym(handle_, "cg_plugin_async"))) async_ = *flag != 0;
  }

  ~SharedObjectPlugin() override {
    if (handle_) dlclose(handle_);
  }

  bool valid() const { return query_ && (!async_ || init_); }

  void initialize(Report report) override {
    report_ = std::move(report);
    if (init_ && init_(spec_.data.c_str(), &SharedObjectPlugin::trampoline, this) != 0) {
      spdlog::warn("plugin {}: initialize failed", spec_.name);
      failed_ = true;
    }
  }

  void finalize() override {
    if (fini_ && !finalized_.exchange(true)) fini_();
  }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override {
    if (failed_) return PluginVerdict::Error;
    std::vector<const std::uint8_t*> certs;
    std::vector<std::size_t> lens;
    for (const auto& der : q.chain) {
      certs.push_back(der.data());
      lens.push_back(der.size());
    }
    cg_query cq{};
    cq.id = q.id;
    cq.hostname = q.hostname.c_str();
    cq.address = q.address.raw().data();
    cq.port = q.port;
    cq.client_hello = q.client_hello_raw.data();
    cq.client_hello_len = q.client_hello_raw.size();
    cq.server_hello = q.server_hello_raw.data();
    cq.server_hello_len = q.server_hello_raw.size();
    cq.chain_len = certs.size();
    cq.chain = certs.data();
    cq.chain_lens = lens.data();
    const int rc = query_(&cq);
    if (rc == CG_PLUGIN_PENDING && async_) return std::nullopt;
    if (rc < 0 || rc > 3) return PluginVerdict::Error;
    return static_cast<PluginVerdict>(rc);
  }

 private:
  static void trampoline(void* ctx, std::uint64_t id, int verdict) {
    auto* self = static_cast<SharedObjectPlugin*>(ctx);
    auto v = verdict >= 0 && verdict <= 3 ? static_cast<PluginVerdict>(verdict) : PluginVerdict::Error;
    if (self->report_) self->report_(id, v);
  }

  PluginSpec spec_;
  void* handle_;
  cg_plugin_query_fn query_ = nullptr;
  cg_plugin_initialize_fn init_ = nullptr;
  cg_plugin_finalize_fn fini_ = nullptr;
  bool async_ = false;
  bool failed_ = false;
  std::atomic<bool> finalized_{false};
  Report report_;
};

std::vector<std::string> split_command(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string word; in >> word;) out.push_back(word);
  return out;
}

class AddonProcessPlugin final : public Plugin {
 public:
  AddonProcessPlugin(PluginSpec spec, std::chrono::milliseconds ready_timeout)
      : spec_(std::move(spec)), ready_timeout_(ready_timeout) {}

  ~AddonProcessPlugin() override { finalize(); }

  void initialize(Report report) override {
    report_ = std::move(report);
    try {
      spawn();
    } catch (const std::exception& e) {
      spdlog::warn("addon {}: {}", spec_.name, e.what());
      stop_child();
      return;
    }
    ready_ = true;
    reader_ = std::thread([this] { read_loop(); });
  }

  void finalize() override {
    if (finalized_.exchange(true)) return;
    {
      std::lock_guard lock(write_mutex_);
      to_child_.reset();
    }
    stop_child();
    if (reader_.joinable()) reader_.join();
  }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override {
    if (!ready_ || dead_) return PluginVerdict::Error;
    const auto frame = ipc::encode(ipc::QueryFrame{ipc::FrameType::Query, q});
    try {
      std::lock_guard lock(write_mutex_);
      if (!to_child_) return PluginVerdict::Error;
      write_all(to_child_.get(), frame);
    } catch (const SocketError&) {
      dead_ = true;
      return PluginVerdict::Error;
    }
    return std::nullopt;
  }

 private:
  void spawn() {
    auto argv_text = split_command(spec_.path);
    if (argv_text.empty()) throw std::runtime_error("empty command");
    if (!spec_.data.empty()) argv_text.push_back(spec_.data);
    std::vector<char*> argv;
    for (auto& a : argv_text) argv.push_back(a.data());
    argv.push_back(nullptr);

    int in_pipe[2], out_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
    if (pipe2(out_pipe, O_CLOEXEC) != 0) {
      close(in_pipe[0]);
      close(in_pipe[1]);
      throw std::runtime_error("pipe failed");
    }
    UniqueFd child_in(in_pipe[0]);
    to_child_ = UniqueFd(in_pipe[1]);
    from_child_ = UniqueFd(out_pipe[0]);
    UniqueFd child_out(out_pipe[1]);

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, child_in.get(), 0);
    posix_spawn_file_actions_adddup2(&actions, child_out.get(), 1);
    const int rc = posix_spawnp(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) {
      pid_ = -1;
      throw std::runtime_error("cannot start " + argv_text[0] + ": " + std::strerror(rc));
    }

    if (!wait_readable(from_child_.get(), ready_timeout_)) throw std::runtime_error("host did not report ready");
    auto body = ipc::read_frame(from_child_.get());
    if (!body) throw std::runtime_error("host exited before ready");
    auto frame = ipc::decode(*body);
    auto* ready = std::get_if<ipc::AddonReadyFrame>(&frame);
    if (!ready) throw std::runtime_error("expected ready frame");
    if (!ready->ok) throw std::runtime_error("host not ready: " + ready->message);
  }

  void read_loop() {
    try {
      while (auto body = ipc::read_frame(from_child_.get())) {
        auto frame = ipc::decode(*body);
        if (auto* v = std::get_if<ipc::AddonVerdictFrame>(&frame)) {
          if (report_) report_(v->id, v->verdict);
        } else {
          spdlog::warn("addon {}: unexpected frame", spec_.name);
          break;
        }
      }
    } catch (const std::exception& e) {
      spdlog::warn("addon {}: {}", spec_.name, e.what());
    }
    dead_ = true;
  }

  void stop_child() {
    if (pid_ <= 0) return;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
    int status = 0;
    while (waitpid(pid_, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() > deadline) {
        kill(pid_, SIGKILL);
        waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    pid_ = -1;
  }

  PluginSpec spec_;
  std::chrono::milliseconds ready_timeout_;
  Report report_;
  pid_t pid_ = -1;
  UniqueFd to_child_;
  UniqueFd from_child_;
  std::mutex write_mutex_;
  std::thread reader_;
  std::atomic<bool> ready_{false};
  std::atomic<bool> dead_{false};
  std::atomic<bool> finalized_{false};
};

}  // namespace

std::unique_ptr<Plugin> load_shared_object(const PluginSpec& spec) {
  if (!std::filesystem::exists(spec.path)) {
    throw ConfigError(0, "plugin " + spec.name + ": path not found: " + spec.path);
  }
  void* handle = dlopen(spec.path.c_str(), RTLD_NOW | RTLD_LOCAL);
  if (!handle) throw ConfigError(0, "plugin " + spec.name + ": " + dlerror());
  auto plugin = std::make_unique<SharedObjectPlugin>(spec, handle);
  if (!plugin->valid()) throw ConfigError(0, "plugin " + spec.name + ": missing cg_plugin_query or cg_plugin_initialize");
  return plugin;
}

std::unique_ptr<Plugin> make_addon_plugin(const PluginSpec& spec, std::chrono::milliseconds ready_timeout) {
  return std::make_unique<AddonProcessPlugin>(spec, ready_timeout);
}

std::vector<LoadedPlugin> load_plugins(const PolicyConfig& cfg, const BuiltinFactory& builtins) {
  std::vector<LoadedPlugin> out;
  for (const auto& spec : cfg.plugins) {
    std::shared_ptr<Plugin> plugin;
    if (spec.kind == PluginKind::Addon) {
      plugin = make_addon_plugin(spec, std::chrono::milliseconds(std::max<std::uint32_t>(cfg.engine_timeout_ms, 1000)));
    } else if (spec.path.starts_with(kBuiltinPrefix)) {
      if (builtins) plugin = builtins(spec);
      if (!plugin) throw ConfigError(0, "plugin " + spec.name + ": unknown builtin " + spec.path);
    } else {
      plugin = load_shared_object(spec);
    }
    out.push_back({spec, std::move(plugin)});
  }
  return out;
}

}  // namespace certgate::engine
