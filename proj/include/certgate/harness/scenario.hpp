#pragma once

#include <ctime>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "certgate/harness/fixtures.hpp"
#include "certgate/harness/mitm.hpp"
#include "certgate/harness/pki.hpp"

namespace certgate::harness {

struct Scenario {
  std::string name;
  std::string description;
  bool smtp = false;
  std::string server = "genuine";  // identity the real server presents
  MitmMode mitm = MitmMode::None;
  bool prime = false;  // one clean connection through the MITM (passing through) first
  bool starttls_enforce = true;
  Outcome expect = Outcome::Allowed;
};

struct ScenarioResult {
  std::string name;
  Outcome expected = Outcome::Allowed;
  Outcome observed = Outcome::Severed;
  bool passed = false;
  std::string detail;
  std::size_t live_flows_after = 0;
  std::size_t tracked_bytes_after = 0;
};

class SuiteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// JSON: {"scenarios": [{"name", "description", "protocol": "tls"|"smtp", "server",
// "mitm", "prime", "starttls_enforce", "expect": "Allowed"|"Blocked"|"Severed"}]}
std::vector<Scenario> load_suite(const std::filesystem::path& path);
std::vector<Scenario> parse_suite(const std::string& json_text);
std::string suite_to_json(const std::vector<Scenario>& suite);

// The six threat scenarios plus the genuine-chain controls.
std::vector<Scenario> default_suite();

// Recommended configuration: CA, pinning and revocation as necessary plugins.
std::string recommended_config(const std::filesystem::path& fixtures_dir, const std::filesystem::path& state_dir,
                               const std::set<std::uint16_t>& starttls_ports, bool starttls_enforce);

// Writes the fixture PKI, the recommended configuration and the default suite.
void write_fixtures(const FixturePki& pki, const std::filesystem::path& dir);

// Runs each scenario against a fresh daemon, fixture server and optional MITM.
class ScenarioRunner {
 public:
  ScenarioRunner(std::filesystem::path work_dir, std::time_t now);

  ScenarioResult run(const Scenario& scenario);

  const FixturePki& pki() const { return pki_; }
  const std::filesystem::path& fixtures_dir() const { return fixtures_; }

 private:
  const Identity& served_identity(const Scenario& scenario) const;

  std::filesystem::path work_;
  std::filesystem::path fixtures_;
  std::time_t now_;
  FixturePki pki_;
  std::size_t runs_ = 0;
};

}  // namespace certgate::harness
