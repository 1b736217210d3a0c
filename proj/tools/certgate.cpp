#include <signal.h>

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "certgate/engine/service.hpp"
#include "certgate/harness/daemon.hpp"
#include "certgate/harness/fixtures.hpp"
#include "certgate/harness/mitm.hpp"
#include "certgate/harness/scenario.hpp"
#include "certgate/plugins/x509.hpp"

using namespace certgate;
namespace fs = std::filesystem;

namespace {

// Blocks SIGINT/SIGTERM in every thread and waits for one of them.
void block_signals(sigset_t& set) {
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  signal(SIGPIPE, SIG_IGN);
}

void wait_for_signal(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("received signal {}, shutting down", sig);
}

Endpoint parse_endpoint(const std::string& text, const char* flag) {
  auto ep = Endpoint::parse(text);
  if (!ep) throw CLI::ValidationError(flag, "expected ADDR:PORT, got '" + text + "'");
  return *ep;
}

struct RunArgs {
  std::string config;
  std::string mode = "explicit";
  std::string listen = "127.0.0.1:9443";
  std::string engine_socket = "/tmp/certgate-engine.sock";
  std::string direct_socket;
  bool engine_only = false;
  bool interceptor_only = false;
};

int cmd_run(const RunArgs& a) {
  harness::DaemonOptions o;
  o.config = a.config;
  o.mode = a.mode == "transparent" ? flow::InterceptMode::Transparent : flow::InterceptMode::Explicit;
  o.listen = parse_endpoint(a.listen, "--listen");
  o.engine_socket = a.engine_socket;
  o.direct_socket = a.direct_socket;
  o.engine_only = a.engine_only;
  o.interceptor_only = a.interceptor_only;
  sigset_t set;
  block_signals(set);
  harness::Daemon daemon(o);
  daemon.start();
  wait_for_signal(set);
  daemon.stop();
  return 0;
}

struct MitmArgs {
  std::string listen = "127.0.0.1:8443";
  std::string upstream;
  std::string mode = "self-signed";
  std::string fixtures_dir = "fixtures";
};

int cmd_mitm(const MitmArgs& a) {
  auto mode = harness::mitm_mode_from_string(a.mode);
  if (!mode) throw CLI::ValidationError("--mitm-mode", "unknown mode '" + a.mode + "'");
  const auto pki = harness::FixturePki::load(a.fixtures_dir);
  sigset_t set;
  block_signals(set);
  harness::Mitm mitm(pki, parse_endpoint(a.upstream, "--upstream"), *mode, parse_endpoint(a.listen, "--listen"));
  mitm.start();
  spdlog::info("mitm ({}) listening on {}", harness::to_string(*mode), mitm.endpoint().to_string());
  wait_for_signal(set);
  mitm.stop();
  return 0;
}

struct ServeArgs {
  std::string listen = "127.0.0.1:4443";
  std::string identity = "genuine";
  std::string fixtures_dir = "fixtures";
  bool smtp = false;
  bool no_starttls = false;
};

int cmd_serve(const ServeArgs& a) {
  const auto pki = harness::FixturePki::load(a.fixtures_dir);
  const harness::Identity* leaf = nullptr;
  if (a.identity == "genuine") leaf = &pki.genuine;
  if (a.identity == "revoked") leaf = &pki.revoked;
  if (a.identity == "mail") leaf = &pki.mail;
  if (a.identity == "expired") leaf = &pki.expired;
  if (a.identity == "wrong_host") leaf = &pki.wrong_host;
  if (!leaf) throw CLI::ValidationError("--identity", "unknown identity '" + a.identity + "'");
  sigset_t set;
  block_signals(set);
  const auto listen = parse_endpoint(a.listen, "--listen");
  std::unique_ptr<harness::TlsFixtureServer> tls;
  std::unique_ptr<harness::SmtpFixtureServer> smtp;
  if (a.smtp) {
    smtp = std::make_unique<harness::SmtpFixtureServer>(*leaf, std::vector{&pki.intermediate}, !a.no_starttls, listen);
    smtp->start();
    spdlog::info("smtp fixture on {}", smtp->endpoint().to_string());
  } else {
    tls = std::make_unique<harness::TlsFixtureServer>(*leaf, std::vector{&pki.intermediate},
                                                      harness::ServeMode::Echo, listen);
    tls->start();
    spdlog::info("tls fixture on {}", tls->endpoint().to_string());
  }
  wait_for_signal(set);
  return 0;
}

struct ScenarioArgs {
  std::string suite;
  std::string fixtures_dir;
  int repeat = 1;
};

int cmd_scenarios(const ScenarioArgs& a) {
  signal(SIGPIPE, SIG_IGN);
  const auto suite = a.suite.empty() ? harness::default_suite() : harness::load_suite(a.suite);
  const fs::path work = a.fixtures_dir.empty() ? fs::temp_directory_path() / ("certgate-scenarios-" + std::to_string(::getpid()))
                                               : fs::path(a.fixtures_dir);
  harness::ScenarioRunner runner(work, std::time(nullptr));
  int failures = 0;
  for (const auto& s : suite) {
    std::map<std::string, int> seen;
    bool pass = true;
    harness::ScenarioResult last;
    for (int i = 0; i < a.repeat; ++i) {
      last = runner.run(s);
      ++seen[harness::to_string(last.observed)];
      pass = pass && last.passed && last.live_flows_after == 0;
    }
    if (seen.size() != 1) pass = false;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS " : "FAIL ") << s.name << " expected=" << harness::to_string(s.expect);
    for (const auto& [outcome, n] : seen) std::cout << " " << outcome << "x" << n;
    std::cout << " (" << last.detail << ")\n";
  }
  std::cout << (suite.size() - failures) << "/" << suite.size() << " scenarios passed\n";
  return failures == 0 ? 0 : 1;
}

int cmd_fixtures(const std::string& dir) {
  const auto pki = harness::FixturePki::generate(std::time(nullptr));
  harness::write_fixtures(pki, dir);
  std::cout << "fixtures written to " << dir << "\n";
  return 0;
}

struct ValidateArgs {
  std::string direct_socket = "/tmp/certgate-direct.sock";
  std::string host;
  int port = 443;
  std::vector<std::string> chain;
};

int cmd_validate(const ValidateArgs& a) {
  std::vector<Bytes> chain;
  for (const auto& path : a.chain) {
    auto cert = x509::load_file(path);
    if (!cert) throw std::runtime_error("cannot read certificate " + path);
    chain.push_back(x509::to_der(cert.get()));
  }
  auto result = engine::validate_direct(a.direct_socket, a.host, static_cast<std::uint16_t>(a.port), chain);
  std::cout << engine::to_string(result.decision.value);
  for (const auto& [name, verdict] : result.verdicts) std::cout << " " << name << "=" << engine::to_string(verdict);
  std::cout << "\n";
  return result.decision.value == engine::Decision::Valid ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certgate: certificate policy enforcement relay"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "start the engine and interceptor");
  run_cmd->add_option("--config", run.config, "configuration file")->required();
  run_cmd->add_option("--mode", run.mode, "explicit or transparent")->check(CLI::IsMember({"explicit", "transparent"}));
  run_cmd->add_option("--listen", run.listen, "interceptor listen address");
  run_cmd->add_option("--engine-socket", run.engine_socket, "engine query socket");
  run_cmd->add_option("--direct-socket", run.direct_socket, "direct validation socket");
  auto* eo = run_cmd->add_flag("--engine-only", run.engine_only, "run only the policy engine");
  run_cmd->add_flag("--interceptor-only", run.interceptor_only, "run only the interceptor")->excludes(eo);

  MitmArgs mitm;
  auto* mitm_cmd = app.add_subcommand("mitm", "fixture attacker relay");
  mitm_cmd->add_option("--listen", mitm.listen);
  mitm_cmd->add_option("--upstream", mitm.upstream, "real server ADDR:PORT")->required();
  mitm_cmd->add_option("--mitm-mode", mitm.mode,
                       "none, self-signed, wrong-hostname-valid-ca, rogue-local-root, coerced-ca, strip-starttls");
  mitm_cmd->add_option("--fixtures-dir", mitm.fixtures_dir);

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "fixture TLS or SMTP server");
  serve_cmd->add_option("--listen", serve.listen);
  serve_cmd->add_option("--identity", serve.identity, "genuine, revoked, mail, expired, wrong_host");
  serve_cmd->add_option("--fixtures-dir", serve.fixtures_dir);
  serve_cmd->add_flag("--smtp", serve.smtp, "speak SMTP with STARTTLS");
  serve_cmd->add_flag("--no-starttls", serve.no_starttls, "do not advertise STARTTLS");

  ScenarioArgs sc;
  auto* sc_cmd = app.add_subcommand("scenarios", "run the threat scenario suite");
  sc_cmd->add_option("--scenarios", sc.suite, "suite JSON (default: built-in suite)");
  sc_cmd->add_option("--fixtures-dir", sc.fixtures_dir, "working directory");
  sc_cmd->add_option("--repeat", sc.repeat, "repetitions per scenario")->check(CLI::PositiveNumber);

  std::string fixtures_dir = "fixtures";
  auto* fx_cmd = app.add_subcommand("fixtures", "write the fixture PKI, config and suite");
  fx_cmd->add_option("--fixtures-dir", fixtures_dir);

  ValidateArgs va;
  auto* va_cmd = app.add_subcommand("validate", "ask the engine about a certificate chain");
  va_cmd->add_option("--direct-socket", va.direct_socket);
  va_cmd->add_option("--host", va.host, "expected hostname");
  va_cmd->add_option("--port", va.port)->check(CLI::Range(1, 65535));
  va_cmd->add_option("chain", va.chain, "leaf first, DER or PEM")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run_cmd) return cmd_run(run);
    if (*mitm_cmd) return cmd_mitm(mitm);
    if (*serve_cmd) return cmd_serve(serve);
    if (*sc_cmd) return cmd_scenarios(sc);
    if (*fx_cmd) return cmd_fixtures(fixtures_dir);
    if (*va_cmd) return cmd_validate(va);
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "certgate: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
