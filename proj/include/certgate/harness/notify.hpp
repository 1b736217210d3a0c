#pragma once

#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>

#include "certgate/core/address.hpp"
#include "certgate/engine/engine.hpp"

namespace certgate::harness {

struct NotificationEvent {
  std::time_t timestamp = 0;
  std::string event = "invalid";
  std::string hostname;
  Endpoint endpoint;
  engine::Decision decision = engine::Decision::Invalid;
  engine::VerdictList verdicts;
};

// ts<TAB>event<TAB>host<TAB>addr:port<TAB>decision<TAB>plugin=verdict,...
std::string format_log_line(const NotificationEvent& event);

// Only Invalid evaluations produce an event.
std::optional<NotificationEvent> event_for(const engine::ValidationQuery& query, const engine::Evaluation& evaluation,
                                           std::time_t now);

// Appends one line per event to the log (or stderr when no log is set) and optionally runs
// a command through /bin/sh with the line on its standard input. A failing command is logged.
class Notifier {
 public:
  Notifier(std::filesystem::path log_path, std::string command);

  void notify(const NotificationEvent& event);

  std::size_t delivered() const;
  std::size_t command_failures() const;

 private:
  bool run_command(const std::string& line);

  std::filesystem::path log_path_;
  std::string command_;
  mutable std::mutex mutex_;
  std::ofstream log_;
  std::size_t delivered_ = 0;
  std::size_t failures_ = 0;
};

}  // namespace certgate::harness
