#include <gtest/gtest.h>
#include <sys/stat.h>

#include <atomic>
#include <condition_variable>
#include <future>
#include <set>
#include <thread>

#include "certgate/engine/engine.hpp"
#include "certgate/engine/service.hpp"
#include "certgate/harness/pki.hpp"
#include "certgate/tls/scramble.hpp"
#include "handshake_corpus.hpp"

using namespace certgate;
using namespace certgate::engine;
using namespace std::chrono_literals;

namespace {

const harness::FixturePki& pki() {
  static const auto p = harness::FixturePki::generate(std::time(nullptr));
  return p;
}

class ScriptedPlugin : public Plugin {
 public:
  using Fn = std::function<std::optional<PluginVerdict>(const ValidationQuery&, const Report&)>;

  explicit ScriptedPlugin(Fn fn) : fn_(std::move(fn)) {}

  void initialize(Report report) override { report_ = std::move(report); }
  void finalize() override { finalized = true; }

  std::optional<PluginVerdict> query(const ValidationQuery& q) override {
    const int now = ++active;
    int seen = max_active.load();
    while (now > seen && !max_active.compare_exchange_weak(seen, now)) {
    }
    ++calls;
    auto out = fn_(q, report_);
    --active;
    return out;
  }

  std::atomic<bool> finalized{false};
  std::atomic<int> active{0};
  std::atomic<int> max_active{0};
  std::atomic<int> calls{0};

 private:
  Fn fn_;
  Report report_;
};

ScriptedPlugin::Fn constant(PluginVerdict v) {
  return [v](const ValidationQuery&, const Plugin::Report&) { return std::optional(v); };
}

// Verdict chosen from the hostname's first label; "sleepN-" prefixes delay by N ms.
std::optional<PluginVerdict> by_hostname(const ValidationQuery& q, const Plugin::Report&) {
  std::string host = q.hostname;
  if (host.rfind("sleep", 0) == 0) {
    auto dash = host.find('-');
    std::this_thread::sleep_for(std::chrono::milliseconds(std::stoi(host.substr(5, dash - 5))));
    host = host.substr(dash + 1);
  }
  if (host.rfind("valid", 0) == 0) return PluginVerdict::Valid;
  if (host.rfind("invalid", 0) == 0) return PluginVerdict::Invalid;
  return PluginVerdict::Abstain;
}

PluginSpec spec(const std::string& name, PluginGroup group = PluginGroup::Necessary, bool serialized = false) {
  PluginSpec s;
  s.name = name;
  s.path = "builtin:test";
  s.group = group;
  s.serialized = serialized;
  return s;
}

PolicyConfig config_for(const std::vector<PluginSpec>& specs, std::uint32_t timeout_ms = 200) {
  PolicyConfig cfg;
  cfg.plugins = specs;
  cfg.plugin_timeout_ms = timeout_ms;
  return cfg;
}

ValidationQuery query_for(const std::string& host, std::vector<Bytes> chain = pki().chain_for(pki().genuine)) {
  ValidationQuery q;
  q.hostname = host;
  q.address = IpAddress::v4(127, 0, 0, 1);
  q.port = 443;
  q.chain = std::move(chain);
  return q;
}

std::filesystem::path socket_path(const std::string& tag) {
  return std::filesystem::temp_directory_path() / ("cg_" + tag + "_" + std::to_string(::getpid()) + ".sock");
}

}  // namespace

TEST(Dispatch, PromptValid) {
  auto p = std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Valid));
  Dispatcher d({{spec("a"), p}}, 500ms);
  d.initialize();
  EXPECT_EQ(d.dispatch(query_for("x")).at("a"), PluginVerdict::Valid);
}

TEST(Dispatch, SlowPluginBecomesError) {
  auto slow = std::make_shared<ScriptedPlugin>([](const ValidationQuery&, const Plugin::Report&) {
    std::this_thread::sleep_for(200ms);
    return std::optional(PluginVerdict::Valid);
  });
  auto fast = std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Valid));
  Dispatcher d({{spec("slow"), slow}, {spec("fast"), fast}}, 100ms);
  d.initialize();
  const auto start = std::chrono::steady_clock::now();
  auto verdicts = d.dispatch(query_for("x"));
  EXPECT_LT(std::chrono::steady_clock::now() - start, 180ms);
  EXPECT_EQ(verdicts.at("slow"), PluginVerdict::Error);
  EXPECT_EQ(verdicts.at("fast"), PluginVerdict::Valid);
}

TEST(Dispatch, FaultBecomesError) {
  auto p = std::make_shared<ScriptedPlugin>([](const ValidationQuery&, const Plugin::Report&) -> std::optional<PluginVerdict> {
    throw std::runtime_error("boom");
  });
  Dispatcher d({{spec("a"), p}}, 500ms);
  d.initialize();
  EXPECT_EQ(d.dispatch(query_for("x")).at("a"), PluginVerdict::Error);
}

TEST(Dispatch, AsynchronousReport) {
  auto p = std::make_shared<ScriptedPlugin>([](const ValidationQuery& q, const Plugin::Report& report) {
    std::thread([report, id = q.id] {
      std::this_thread::sleep_for(10ms);
      report(id, PluginVerdict::Invalid);
    }).detach();
    return std::optional<PluginVerdict>();
  });
  Dispatcher d({{spec("a"), p}}, 500ms);
  d.initialize();
  EXPECT_EQ(d.dispatch(query_for("x")).at("a"), PluginVerdict::Invalid);
}

TEST(Dispatch, LateAsynchronousAnswerDiscarded) {
  std::vector<std::uint64_t> ids;
  std::mutex m;
  auto p = std::make_shared<ScriptedPlugin>([&](const ValidationQuery& q, const Plugin::Report&) {
    std::lock_guard lock(m);
    ids.push_back(q.id);
    return std::optional<PluginVerdict>();
  });
  Dispatcher d({{spec("a"), p}}, 50ms);
  d.initialize();
  EXPECT_EQ(d.dispatch(query_for("x")).at("a"), PluginVerdict::Error);
  // Reporting for the finished query must not leak into the next one.
  auto second = std::async(std::launch::async, [&] { return d.dispatch(query_for("y")); });
  std::this_thread::sleep_for(20ms);
  {
    std::lock_guard lock(m);
    ASSERT_EQ(ids.size(), 2u);
    EXPECT_NE(ids[0], ids[1]);
  }
  EXPECT_EQ(second.get().at("a"), PluginVerdict::Error);
}

TEST(Dispatch, StaleReportIgnored) {
  Plugin::Report saved;
  std::atomic<std::uint64_t> first_id{0};
  auto p = std::make_shared<ScriptedPlugin>([&](const ValidationQuery& q, const Plugin::Report& report) {
    if (!first_id) {
      first_id = q.id;
      saved = report;
      return std::optional<PluginVerdict>();
    }
    // Answer the stale query first, then this one.
    saved(first_id, PluginVerdict::Valid);
    report(q.id, PluginVerdict::Invalid);
    return std::optional<PluginVerdict>();
  });
  Dispatcher d({{spec("a"), p}}, 50ms);
  d.initialize();
  EXPECT_EQ(d.dispatch(query_for("x")).at("a"), PluginVerdict::Error);
  EXPECT_EQ(d.dispatch(query_for("y")).at("a"), PluginVerdict::Invalid);
}

TEST(Dispatch, PluginsRunConcurrently) {
  auto make = [] {
    return std::make_shared<ScriptedPlugin>([](const ValidationQuery&, const Plugin::Report&) {
      std::this_thread::sleep_for(100ms);
      return std::optional(PluginVerdict::Valid);
    });
  };
  Dispatcher d({{spec("a"), make()}, {spec("b"), make()}, {spec("c"), make()}}, 1000ms);
  d.initialize();
  const auto start = std::chrono::steady_clock::now();
  auto v = d.dispatch(query_for("x"));
  EXPECT_LT(std::chrono::steady_clock::now() - start, 250ms);
  EXPECT_EQ(v.size(), 3u);
}

TEST(Dispatch, SerializedPluginNeverOverlaps) {
  auto slow = [] {
    return std::make_shared<ScriptedPlugin>([](const ValidationQuery&, const Plugin::Report&) {
      std::this_thread::sleep_for(20ms);
      return std::optional(PluginVerdict::Valid);
    });
  };
  auto serial = slow();
  auto parallel = slow();
  Dispatcher d({{spec("serial", PluginGroup::Necessary, true), serial}, {spec("parallel"), parallel}}, 2000ms);
  d.initialize();
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { d.dispatch(query_for("x")); });
  for (auto& t : threads) t.join();
  EXPECT_EQ(serial->max_active.load(), 1);
  EXPECT_GT(parallel->max_active.load(), 1);
}

TEST(Engine, InvalidCarriesScrambledLeaf) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}), {{spec("a"), p}});
  auto q = query_for("invalid.test");
  auto eval = engine.evaluate(q);
  EXPECT_EQ(eval.decision.value, Decision::Invalid);
  ASSERT_TRUE(eval.decision.scrambled_leaf);
  EXPECT_EQ(*eval.decision.scrambled_leaf, tls::scramble_certificate(q.chain[0]));
  ASSERT_EQ(eval.verdicts.size(), 1u);
  EXPECT_EQ(eval.verdicts[0], (std::pair<std::string, PluginVerdict>{"a", PluginVerdict::Invalid}));

  auto ok = engine.evaluate(query_for("valid.test"));
  EXPECT_EQ(ok.decision.value, Decision::Valid);
  EXPECT_FALSE(ok.decision.scrambled_leaf);
}

TEST(Engine, EmptyChainHandling) {
  auto p = std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Valid));
  auto cfg = config_for({spec("a")});
  Engine allow(cfg, {{spec("a"), p}});
  auto tls13 = certgate::testing::generate_handshake({tls::kTls13, "site.test", &pki().genuine, {}, 0, 0});
  auto tls12 = certgate::testing::generate_handshake({tls::kTls12, "site.test", &pki().genuine, {}, 0, 0});

  auto q = query_for("valid.test", {});
  q.server_hello_raw = tls13.server_hello;
  EXPECT_EQ(allow.evaluate(q).decision.value, Decision::Valid);

  q.server_hello_raw = tls12.server_hello;
  auto severed = allow.evaluate(q);
  EXPECT_EQ(severed.decision.value, Decision::Invalid);
  EXPECT_FALSE(severed.decision.scrambled_leaf);
  EXPECT_EQ(p->calls.load(), 0);

  cfg.tls13_mode = Tls13Mode::Block;
  Engine block(cfg, {{spec("a"), std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Valid))}});
  q.server_hello_raw = tls13.server_hello;
  EXPECT_EQ(block.evaluate(q).decision.value, Decision::Invalid);
}

TEST(Engine, ObserverSeesEveryEvaluation) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}), {{spec("a"), p}});
  std::vector<std::string> seen;
  engine.set_observer([&](const ValidationQuery& q, const Evaluation& e) {
    seen.push_back(q.hostname + "=" + to_string(e.decision.value));
  });
  engine.evaluate(query_for("valid.a"));
  engine.evaluate(query_for("invalid.b"));
  EXPECT_EQ(seen, (std::vector<std::string>{"valid.a=valid", "invalid.b=invalid"}));
}

TEST(Engine, ShutdownFinalizesPlugins) {
  auto p = std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Valid));
  {
    Engine engine(config_for({spec("a")}), {{spec("a"), p}});
    EXPECT_FALSE(p->finalized);
  }
  EXPECT_TRUE(p->finalized);
}

TEST(EngineServer, InterleavedQueriesMatchedById) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}, 2000), {{spec("a"), p}});
  EngineServer server(engine, socket_path("interleave"), EngineServer::Role::Interceptor);
  server.start();

  struct stat st {};
  ASSERT_EQ(::stat(server.path().c_str(), &st), 0);
  EXPECT_EQ(st.st_mode & 0777, 0600u);

  EngineClient client(server.path());
  std::mutex m;
  std::condition_variable cv;
  std::vector<std::pair<std::string, Decision>> order;
  // The callback may run before submit() returns, so it records a label rather than the id.
  auto record = [&](std::string label) {
    return [&, label](std::optional<PolicyDecision> d) {
      std::lock_guard lock(m);
      order.emplace_back(label, d ? d->value : Decision::Invalid);
      cv.notify_all();
    };
  };
  const auto slow_id = client.submit(query_for("sleep150-valid.test"), record("slow"));
  const auto fast_id = client.submit(query_for("invalid.test"), record("fast"));
  EXPECT_NE(slow_id, fast_id);
  std::unique_lock lock(m);
  ASSERT_TRUE(cv.wait_for(lock, 3s, [&] { return order.size() == 2; }));
  EXPECT_EQ(order[0], std::make_pair(std::string("fast"), Decision::Invalid));
  EXPECT_EQ(order[1], std::make_pair(std::string("slow"), Decision::Valid));
}

TEST(EngineServer, ExactlyOneResponsePerId) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}, 2000), {{spec("a"), p}});
  EngineServer server(engine, socket_path("once"), EngineServer::Role::Interceptor);
  server.start();
  EngineClient client(server.path());

  constexpr int kQueries = 200;
  std::mutex m;
  std::condition_variable cv;
  std::map<std::uint64_t, int> answers;
  std::set<std::uint64_t> sent;
  int total = 0;
  for (int i = 0; i < kQueries; ++i) {
    auto id = client.submit(query_for(i % 2 ? "valid.x" : "invalid.x"), [&, i](std::optional<PolicyDecision> d) {
      std::lock_guard lock(m);
      ASSERT_TRUE(d);
      EXPECT_EQ(d->value, i % 2 ? Decision::Valid : Decision::Invalid);
      ++total;
      cv.notify_all();
    });
    std::lock_guard lock(m);
    sent.insert(id);
  }
  std::unique_lock lock(m);
  ASSERT_TRUE(cv.wait_for(lock, 10s, [&] { return total == kQueries; }));
  EXPECT_EQ(sent.size(), static_cast<std::size_t>(kQueries));
  EXPECT_EQ(client.outstanding(), 0u);
}

TEST(EngineServer, ProtocolViolationClosesOnlyThatConnection) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}), {{spec("a"), p}});
  EngineServer server(engine, socket_path("violation"), EngineServer::Role::Interceptor);
  server.start();

  auto bad = connect_unix(server.path());
  write_all(bad.get(), Bytes{0, 0, 0, 1, 0x09});
  ASSERT_TRUE(wait_readable(bad.get(), 2s));
  std::uint8_t byte;
  EXPECT_EQ(read_some(bad.get(), &byte, 1), 0u);

  // A response frame type is a violation on the query socket too.
  auto wrong = connect_unix(server.path());
  write_all(wrong.get(), ipc::encode(ipc::ResponseFrame{1, {Decision::Valid, std::nullopt}}));
  ASSERT_TRUE(wait_readable(wrong.get(), 2s));
  EXPECT_EQ(read_some(wrong.get(), &byte, 1), 0u);

  EngineClient client(server.path());
  std::promise<std::optional<PolicyDecision>> done;
  client.submit(query_for("valid.x"), [&](std::optional<PolicyDecision> d) { done.set_value(d); });
  auto result = done.get_future().get();
  ASSERT_TRUE(result);
  EXPECT_EQ(result->value, Decision::Valid);
}

TEST(EngineClient, UnreachableEngineFailsQuery) {
  EngineClient client(socket_path("nobody"));
  std::optional<PolicyDecision> got{PolicyDecision{Decision::Valid, std::nullopt}};
  client.submit(query_for("valid.x"), [&](std::optional<PolicyDecision> d) { got = d; });
  EXPECT_FALSE(got);
}

TEST(EngineClient, ServerStopFailsOutstanding) {
  auto p = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}, 2000), {{spec("a"), p}});
  auto server = std::make_unique<EngineServer>(engine, socket_path("stop"), EngineServer::Role::Interceptor);
  server->start();
  EngineClient client(server->path());
  std::promise<std::optional<PolicyDecision>> done;
  client.submit(query_for("sleep300-valid.x"), [&](std::optional<PolicyDecision> d) { done.set_value(d); });
  std::this_thread::sleep_for(50ms);
  server->stop();
  auto fut = done.get_future();
  ASSERT_EQ(fut.wait_for(2s), std::future_status::ready);
  EXPECT_FALSE(fut.get());
}

TEST(DirectValidation, ReturnsVerdicts) {
  auto a = std::make_shared<ScriptedPlugin>(by_hostname);
  auto b = std::make_shared<ScriptedPlugin>(constant(PluginVerdict::Abstain));
  auto cfg = config_for({spec("a"), spec("b", PluginGroup::Voting)});
  Engine engine(cfg, {{cfg.plugins[0], a}, {cfg.plugins[1], b}});
  EngineServer server(engine, socket_path("direct"), EngineServer::Role::Direct);
  server.start();

  auto chain = pki().chain_for(pki().genuine);
  auto ok = validate_direct(server.path(), "valid.test", 443, chain);
  EXPECT_EQ(ok.decision.value, Decision::Valid);
  EXPECT_EQ(ok.verdicts, (VerdictList{{"a", PluginVerdict::Valid}, {"b", PluginVerdict::Abstain}}));

  auto bad = validate_direct(server.path(), "invalid.test", 443, chain);
  EXPECT_EQ(bad.decision.value, Decision::Invalid);
  ASSERT_TRUE(bad.decision.scrambled_leaf);
  EXPECT_EQ(*bad.decision.scrambled_leaf, tls::scramble_certificate(chain[0]));
  EXPECT_EQ(bad.verdicts[0].second, PluginVerdict::Invalid);

  EXPECT_THROW(validate_direct(server.path(), "valid.test", 443, {}), MalformedChain);
  EXPECT_THROW(validate_direct(server.path(), "valid.test", 443, {Bytes{1, 2, 3}}), MalformedChain);
  auto truncated = chain[0];
  truncated.pop_back();
  EXPECT_THROW(validate_direct(server.path(), "valid.test", 443, {truncated}), MalformedChain);

  // A client that skips the local check still gets a fail-closed answer.
  auto fd = connect_unix(server.path());
  ValidationQuery raw = query_for("valid.test", {Bytes{0x30, 0x01}});
  raw.id = 42;
  write_all(fd.get(), ipc::encode(ipc::QueryFrame{ipc::FrameType::DirectRequest, raw}));
  auto body = ipc::read_frame(fd.get());
  ASSERT_TRUE(body);
  auto resp = std::get<ipc::DirectResponseFrame>(ipc::decode(*body));
  EXPECT_EQ(resp.id, 42u);
  EXPECT_EQ(resp.decision.value, Decision::Invalid);
  EXPECT_TRUE(resp.verdicts.empty());
}

TEST(DirectValidation, QuerySocketRejectsDirectFrames) {
  auto a = std::make_shared<ScriptedPlugin>(by_hostname);
  Engine engine(config_for({spec("a")}), {{spec("a"), a}});
  EngineServer server(engine, socket_path("mix"), EngineServer::Role::Interceptor);
  server.start();
  EXPECT_THROW(validate_direct(server.path(), "valid.test", 443, pki().chain_for(pki().genuine)),
               ipc::ProtocolError);
}

TEST(SharedObjectPlugin, SynchronousAndAsynchronous) {
  PolicyConfig cfg;
  auto s = spec("so");
  s.path = CG_SAMPLE_PLUGIN;
  cfg.plugins = {s};
  cfg.plugin_timeout_ms = 1000;
  Engine engine(cfg, load_plugins(cfg, nullptr));
  auto verdict = [&](const std::string& host) { return engine.evaluate(query_for(host)).verdicts.at(0).second; };
  EXPECT_EQ(verdict("valid.test"), PluginVerdict::Valid);
  EXPECT_EQ(verdict("invalid.test"), PluginVerdict::Invalid);
  EXPECT_EQ(verdict("error.test"), PluginVerdict::Error);
  EXPECT_EQ(verdict("other.test"), PluginVerdict::Abstain);
  EXPECT_EQ(verdict("later-valid.test"), PluginVerdict::Valid);
  EXPECT_EQ(verdict("later-invalid.test"), PluginVerdict::Invalid);
}

TEST(SharedObjectPlugin, DataReachesInitialize) {
  PolicyConfig cfg;
  auto s = spec("so");
  s.path = CG_SAMPLE_PLUGIN;
  s.data = "valid";
  cfg.plugins = {s};
  Engine engine(cfg, load_plugins(cfg, nullptr));
  EXPECT_EQ(engine.evaluate(query_for("other.test")).verdicts.at(0).second, PluginVerdict::Valid);
}

TEST(SharedObjectPlugin, LoadFailuresAreConfigErrors) {
  PolicyConfig cfg;
  auto s = spec("so");
  s.path = "/nonexistent/plugin.so";
  cfg.plugins = {s};
  EXPECT_THROW(load_plugins(cfg, nullptr), ConfigError);
  cfg.plugins[0].path = CG_BROKEN_PLUGIN;
  EXPECT_THROW(load_plugins(cfg, nullptr), ConfigError);
  cfg.plugins[0].path = "builtin:unknown";
  EXPECT_THROW(load_plugins(cfg, [](const PluginSpec&) { return std::unique_ptr<Plugin>(); }), ConfigError);
}

class AddonPlugin : public ::testing::Test {
 protected:
  Evaluation run(const std::string& mode, const std::string& host, std::uint32_t timeout_ms = 1000) {
    PolicyConfig cfg;
    PluginSpec s = spec("addon");
    s.kind = PluginKind::Addon;
    s.path = std::string(CG_PYTHON) + " " + CG_ADDON_HOST;
    s.data = mode;
    cfg.plugins = {s};
    cfg.plugin_timeout_ms = timeout_ms;
    cfg.engine_timeout_ms = 5000;
    Engine engine(cfg, load_plugins(cfg, nullptr));
    return engine.evaluate(query_for(host));
  }
};

TEST_F(AddonPlugin, AnswersQueries) {
  EXPECT_EQ(run("ok", "valid.test").verdicts[0].second, PluginVerdict::Valid);
  auto bad = run("ok", "invalid.test");
  EXPECT_EQ(bad.verdicts[0].second, PluginVerdict::Invalid);
  EXPECT_EQ(bad.decision.value, Decision::Invalid);
  EXPECT_EQ(run("ok", "abstain.test").verdicts[0].second, PluginVerdict::Abstain);
}

TEST_F(AddonPlugin, FailuresBecomeError) {
  EXPECT_EQ(run("notready", "valid.test").verdicts[0].second, PluginVerdict::Error);
  EXPECT_EQ(run("silent", "valid.test", 200).verdicts[0].second, PluginVerdict::Error);
  EXPECT_EQ(run("crash", "valid.test", 500).verdicts[0].second, PluginVerdict::Error);
  EXPECT_EQ(run("ok", "slow-valid.test", 200).verdicts[0].second, PluginVerdict::Error);
}
