#include "certgate/harness/scenario.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "certgate/harness/daemon.hpp"

namespace certgate::harness {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path short_socket_path(const fs::path& dir, const std::string& name) {
  // sockaddr_un holds about 108 bytes; fall back to /tmp for deep work directories.
  auto p = dir / name;
  if (p.native().size() < 100) return p;
  return fs::temp_directory_path() / ("cg-" + std::to_string(::getpid()) + "-" + name);
}

std::vector<Endpoint> resolve_local(const std::string&, std::uint16_t port) {
  return {Endpoint{IpAddress::v4(127, 0, 0, 1), port}};
}

}  // namespace

std::vector<Scenario> parse_suite(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw SuiteError(std::string("suite is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("scenarios") || !doc["scenarios"].is_array()) {
    throw SuiteError("suite needs a \"scenarios\" array");
  }
  std::vector<Scenario> out;
  for (const auto& item : doc["scenarios"]) {
    try {
      Scenario s;
      s.name = item.at("name").get<std::string>();
      s.description = item.value("description", "");
      const auto protocol = item.value("protocol", "tls");
      if (protocol != "tls" && protocol != "smtp") throw SuiteError("unknown protocol '" + protocol + "'");
      s.smtp = protocol == "smtp";
      s.server = item.value("server", s.smtp ? "mail" : "genuine");
      const auto mitm = item.value("mitm", "none");
      auto mode = mitm_mode_from_string(mitm);
      if (!mode) throw SuiteError("unknown mitm mode '" + mitm + "'");
      s.mitm = *mode;
      s.prime = item.value("prime", false);
      s.starttls_enforce = item.value("starttls_enforce", true);
      const auto expect = item.at("expect").get<std::string>();
      auto outcome = outcome_from_string(expect);
      if (!outcome) throw SuiteError("unknown outcome '" + expect + "'");
      s.expect = *outcome;
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw SuiteError(std::string("bad scenario entry: ") + e.what());
    }
  }
  return out;
}

std::vector<Scenario> load_suite(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SuiteError("cannot read suite " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_suite(buf.str());
}

std::string suite_to_json(const std::vector<Scenario>& suite) {
  json arr = json::array();
  for (const auto& s : suite) {
    arr.push_back({{"name", s.name},
                   {"description", s.description},
                   {"protocol", s.smtp ? "smtp" : "tls"},
                   {"server", s.server},
                   {"mitm", to_string(s.mitm)},
                   {"prime", s.prime},
                   {"starttls_enforce", s.starttls_enforce},
                   {"expect", to_string(s.expect)}});
  }
  return json{{"scenarios", arr}}.dump(2) + "\n";
}

std::vector<Scenario> default_suite() {
  auto make = [](std::string name, std::string description, MitmMode mitm, Outcome expect) {
    Scenario s;
    s.name = std::move(name);
    s.description = std::move(description);
    s.mitm = mitm;
    s.expect = expect;
    return s;
  };
  std::vector<Scenario> suite;
  suite.push_back(make("control", "genuine chain, no attacker", MitmMode::None, Outcome::Allowed));

  auto hacked = make("hacked-ca", "legitimate CA issued a certificate to the attacker; host previously pinned",
                     MitmMode::CoercedCa, Outcome::Blocked);
  hacked.prime = true;
  suite.push_back(hacked);

  auto rogue = make("local-root", "attacker root planted in the local store, not among the engine anchors",
                    MitmMode::RogueRoot, Outcome::Blocked);
  rogue.prime = true;
  suite.push_back(rogue);

  auto revoked = make("revocation", "server presents a revoked certificate to a client that never checks status",
                      MitmMode::None, Outcome::Blocked);
  revoked.server = "revoked";
  suite.push_back(revoked);

  suite.push_back(make("wrong-hostname", "valid chain issued for another host", MitmMode::WrongHostname,
                       Outcome::Blocked));
  suite.push_back(make("no-validation", "self-signed certificate offered to a client that validates nothing",
                       MitmMode::SelfSigned, Outcome::Blocked));

  auto smtp_control = make("smtp-control", "SMTP session upgraded with STARTTLS", MitmMode::None, Outcome::Allowed);
  smtp_control.smtp = true;
  smtp_control.server = "mail";
  suite.push_back(smtp_control);

  auto downgrade = make("starttls-downgrade", "attacker strips STARTTLS from a host known to offer it",
                        MitmMode::StripStarttls, Outcome::Severed);
  downgrade.smtp = true;
  downgrade.server = "mail";
  downgrade.prime = true;
  suite.push_back(downgrade);
  return suite;
}

std::string recommended_config(const fs::path& fixtures_dir, const fs::path& state_dir,
                               const std::set<std::uint16_t>& starttls_ports, bool starttls_enforce) {
  std::ostringstream out;
  out << "# CA validation, pinning and revocation must all accept.\n"
      << "[engine]\n"
      << "threshold = 1/2\n"
      << "plugin_timeout_ms = 2000\n"
      << "engine_timeout_ms = 5000\n"
      << "starttls_enforce = " << (starttls_enforce ? "true" : "false") << "\n\n"
      << "[interceptor]\n";
  if (!starttls_ports.empty()) {
    out << "starttls_ports = ";
    bool first = true;
    for (auto p : starttls_ports) {
      out << (first ? "" : ",") << p;
      first = false;
    }
    out << "\n";
  }
  out << "starttls_store = " << (state_dir / "starttls.tsv").string() << "\n"
      << "event_log = " << (state_dir / "events.log").string() << "\n\n"
      << "[plugin ca]\npath = builtin:ca\ndata = " << (fixtures_dir / "anchors").string() << "\ngroup = necessary\n\n"
      << "[plugin pinning]\npath = builtin:pinning\ndata = " << (state_dir / "pins.tsv").string()
      << "\ngroup = necessary\n\n"
      << "[plugin revocation]\npath = builtin:revocation\ndata = " << (fixtures_dir / "revoked.txt").string()
      << "\ngroup = necessary\n";
  return out.str();
}

void write_fixtures(const FixturePki& pki, const fs::path& dir) {
  fs::create_directories(dir / "state");
  pki.write(dir);
  std::ofstream(dir / "certgate.conf") << recommended_config(dir, dir / "state", {25, 587}, true);
  std::ofstream(dir / "suite.json") << suite_to_json(default_suite());
}

ScenarioRunner::ScenarioRunner(fs::path work_dir, std::time_t now)
    : work_(std::move(work_dir)), fixtures_(work_ / "fixtures"), now_(now), pki_(FixturePki::generate(now)) {
  try {
    write_fixtures(pki_, fixtures_);
  } catch (const std::exception& e) {
    throw SuiteError(std::string("fixture generation failed: ") + e.what());
  }
}

const Identity& ScenarioRunner::served_identity(const Scenario& scenario) const {
  if (scenario.server == "genuine") return pki_.genuine;
  if (scenario.server == "revoked") return pki_.revoked;
  if (scenario.server == "mail") return pki_.mail;
  if (scenario.server == "expired") return pki_.expired;
  if (scenario.server == "wrong_host") return pki_.wrong_host;
  throw SuiteError("unknown server identity '" + scenario.server + "'");
}

ScenarioResult ScenarioRunner::run(const Scenario& scenario) {
  ScenarioResult result;
  result.name = scenario.name;
  result.expected = scenario.expect;

  const auto state = work_ / ("run-" + std::to_string(++runs_));
  fs::remove_all(state);
  fs::create_directories(state);

  const auto& served = served_identity(scenario);
  const std::vector<const Identity*> chain{&pki_.intermediate};
  std::unique_ptr<TlsFixtureServer> tls_server;
  std::unique_ptr<SmtpFixtureServer> smtp_server;
  Endpoint upstream;
  if (scenario.smtp) {
    smtp_server = std::make_unique<SmtpFixtureServer>(served, chain, true);
    smtp_server->start();
    upstream = smtp_server->endpoint();
  } else {
    tls_server = std::make_unique<TlsFixtureServer>(served, chain);
    tls_server->start();
    upstream = tls_server->endpoint();
  }

  std::unique_ptr<Mitm> mitm;
  Endpoint target = upstream;
  if (scenario.mitm != MitmMode::None || scenario.prime) {
    mitm = std::make_unique<Mitm>(pki_, upstream, scenario.prime ? MitmMode::None : scenario.mitm);
    mitm->start();
    target = mitm->endpoint();
  }

  std::set<std::uint16_t> starttls_ports;
  if (scenario.smtp) starttls_ports.insert(target.port);
  const auto config_path = state / "certgate.conf";
  std::ofstream(config_path) << recommended_config(fixtures_, state, starttls_ports, scenario.starttls_enforce);

  DaemonOptions options;
  options.config = config_path;
  options.listen = *Endpoint::parse("127.0.0.1:0");
  options.engine_socket = short_socket_path(state, "engine.sock");
  options.resolver = resolve_local;
  const auto now = now_;
  options.clock = [now] { return now; };
  Daemon daemon(options);
  daemon.start();

  const std::string host = scenario.smtp ? FixturePki::kMailHost : FixturePki::kHost;
  ProbeOptions probe_options;
  probe_options.route = Route{daemon.interceptor()->local_endpoint(), host + ":" + std::to_string(target.port)};
  probe_options.sni = host;
  probe_options.smtp = scenario.smtp;

  std::ostringstream detail;
  if (scenario.prime) {
    auto primed = probe(probe_options);
    const auto first = classify(primed, served.der());
    detail << "prime=" << to_string(first) << "; ";
    mitm->set_mode(scenario.mitm);
  }
  const auto presented = presented_identity(pki_, scenario.mitm, served).der();
  const auto observed = probe(probe_options);
  result.observed = classify(observed, presented);
  result.passed = result.observed == scenario.expect;
  detail << observed.detail;
  result.detail = detail.str();

  auto* interceptor = daemon.interceptor();
  for (int i = 0; i < 300 && interceptor->live_flows() > 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  result.live_flows_after = interceptor->live_flows();
  result.tracked_bytes_after = interceptor->tracked_bytes();
  daemon.stop();
  if (mitm) mitm->stop();
  if (tls_server) tls_server->stop();
  if (smtp_server) smtp_server->stop();
  return result;
}

}  // namespace certgate::harness
