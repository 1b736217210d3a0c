#include "certgate/harness/notify.hpp"

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <iostream>

#include <spdlog/spdlog.h>

#include "certgate/core/socket.hpp"

extern char** environ;

namespace certgate::harness {
namespace {

// Tabs and newlines inside a field would break the record layout.
std::string field(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return out.empty() ? "-" : out;
}

}  // namespace

std::string format_log_line(const NotificationEvent& event) {
  std::string verdicts;
  for (const auto& [name, verdict] : event.verdicts) {
    if (!verdicts.empty()) verdicts += ',';
    verdicts += field(name) + '=' + engine::to_string(verdict);
  }
  return std::to_string(event.timestamp) + '\t' + field(event.event) + '\t' + field(event.hostname) + '\t' +
         event.endpoint.to_string() + '\t' + engine::to_string(event.decision) + '\t' + field(verdicts);
}

std::optional<NotificationEvent> event_for(const engine::ValidationQuery& query, const engine::Evaluation& evaluation,
                                           std::time_t now) {
  if (evaluation.decision.value != engine::Decision::Invalid) return std::nullopt;
  NotificationEvent e;
  e.timestamp = now;
  e.hostname = query.hostname;
  e.endpoint = Endpoint{query.address, query.port};
  e.decision = evaluation.decision.value;
  e.verdicts = evaluation.verdicts;
  return e;
}

Notifier::Notifier(std::filesystem::path log_path, std::string command)
    : log_path_(std::move(log_path)), command_(std::move(command)) {
  // A notifier that exits early must not take the process down with SIGPIPE.
  if (!command_.empty()) std::signal(SIGPIPE, SIG_IGN);
  if (!log_path_.empty()) {
    log_.open(log_path_, std::ios::app);
    if (!log_) spdlog::warn("notify: cannot open event log {}", log_path_.string());
  }
}

void Notifier::notify(const NotificationEvent& event) {
  const auto line = format_log_line(event);
  std::lock_guard lock(mutex_);
  if (log_.is_open()) {
    log_ << line << '\n';
    log_.flush();
  } else {
    std::cerr << line << '\n';
  }
  ++delivered_;
  if (!command_.empty() && !run_command(line)) ++failures_;
}

bool Notifier::run_command(const std::string& line) {
  int in[2];
  if (::pipe2(in, O_CLOEXEC) != 0) {
    spdlog::warn("notify: pipe: {}", std::strerror(errno));
    return false;
  }
  UniqueFd read_end(in[0]), write_end(in[1]);

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, read_end.get(), STDIN_FILENO);
  const char* argv[] = {"/bin/sh", "-c", command_.c_str(), nullptr};
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, nullptr, const_cast<char**>(argv), environ);
  posix_spawn_file_actions_destroy(&actions);
  read_end.reset();
  if (rc != 0) {
    spdlog::warn("notify: cannot start notifier: {}", std::strerror(rc));
    return false;
  }
  try {
    write_all(write_end.get(), ByteView(reinterpret_cast<const std::uint8_t*>(line.data()), line.size()));
    write_all(write_end.get(), ByteView(reinterpret_cast<const std::uint8_t*>("\n"), 1));
  } catch (const SocketError&) {
    // The command may exit without reading its input.
  }
  write_end.reset();
  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    spdlog::warn("notify: notifier command failed (status {})", status);
    return false;
  }
  return true;
}

std::size_t Notifier::delivered() const {
  std::lock_guard lock(mutex_);
  return delivered_;
}

std::size_t Notifier::command_failures() const {
  std::lock_guard lock(mutex_);
  return failures_;
}

}  // namespace certgate::harness
