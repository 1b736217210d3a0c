#include "certgate/engine/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

namespace certgate::engine {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  PolicyConfig run() {
    std::size_t start = 0;
    while (start <= text_.size()) {
      auto end = text_.find('\n', start);
      if (end == std::string_view::npos) end = text_.size();
      ++line_;
      handle_line(text_.substr(start, end - start));
      start = end + 1;
    }
    if (cfg_.plugins.empty()) throw ConfigError(0, "no plugins configured");
    for (const auto& plugin : cfg_.plugins) {
      if (plugin.path.empty()) throw ConfigError(0, "plugin '" + plugin.name + "' has no path");
    }
    return std::move(cfg_);
  }

 private:
  enum class Section { None, Engine, Interceptor, Plugin };

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(line_, what); }

  void handle_line(std::string_view raw) {
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    auto line = trim(raw);
    if (line.empty()) return;

    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      open_section(trim(line.substr(1, line.size() - 2)));
      return;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected key = value");
    auto key = lower(trim(line.substr(0, eq)));
    auto value = trim(line.substr(eq + 1));
    switch (section_) {
      case Section::None: fail("key outside of any section");
      case Section::Engine: engine_key(key, value); break;
      case Section::Interceptor: interceptor_key(key, value); break;
      case Section::Plugin: plugin_key(key, value); break;
    }
  }

  void open_section(std::string_view header) {
    if (header == "engine") {
      section_ = Section::Engine;
      return;
    }
    if (header == "interceptor") {
      section_ = Section::Interceptor;
      return;
    }
    if (header.substr(0, 6) == "plugin" && header.size() > 6 && std::isspace(static_cast<unsigned char>(header[6]))) {
      auto name = std::string(trim(header.substr(6)));
      if (name.empty()) fail("plugin section needs a name");
      for (const auto& p : cfg_.plugins) {
        if (p.name == name) fail("duplicate plugin name '" + name + "'");
      }
      PluginSpec spec;
      spec.name = name;
      cfg_.plugins.push_back(std::move(spec));
      section_ = Section::Plugin;
      return;
    }
    fail("unknown section [" + std::string(header) + "]");
  }

  Decision decision(std::string_view v) const {
    auto s = lower(v);
    if (s == "valid") return Decision::Valid;
    if (s == "invalid") return Decision::Invalid;
    fail("expected valid or invalid, got '" + std::string(v) + "'");
  }

  bool boolean(std::string_view v) const {
    auto s = lower(v);
    if (s == "true" || s == "yes" || s == "1" || s == "on") return true;
    if (s == "false" || s == "no" || s == "0" || s == "off") return false;
    fail("expected a boolean, got '" + std::string(v) + "'");
  }

  std::uint32_t positive(std::string_view v) const {
    auto n = parse_number<std::uint32_t>(v);
    if (!n || *n == 0) fail("expected a positive integer, got '" + std::string(v) + "'");
    return *n;
  }

  Threshold threshold(std::string_view v) const {
    Threshold t;
    if (auto slash = v.find('/'); slash != std::string_view::npos) {
      auto num = parse_number<std::uint64_t>(trim(v.substr(0, slash)));
      auto den = parse_number<std::uint64_t>(trim(v.substr(slash + 1)));
      if (!num || !den || *den == 0) fail("bad threshold '" + std::string(v) + "'");
      t = {*num, *den};
    } else {
      auto dot = v.find('.');
      auto whole = v.substr(0, dot);
      auto frac = dot == std::string_view::npos ? std::string_view{} : v.substr(dot + 1);
      if ((whole.empty() && frac.empty()) || frac.size() > 9) fail("bad threshold '" + std::string(v) + "'");
      std::uint64_t den = 1;
      for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
      auto w = whole.empty() ? std::optional<std::uint64_t>(0) : parse_number<std::uint64_t>(whole);
      auto f = frac.empty() ? std::optional<std::uint64_t>(0) : parse_number<std::uint64_t>(frac);
      if (!w || !f || *w > 1) fail("bad threshold '" + std::string(v) + "'");
      t = {*w * den + *f, den};
    }
    if (t.numerator > t.denominator) fail("threshold must be within [0,1], got '" + std::string(v) + "'");
    return t;
  }

  void engine_key(const std::string& key, std::string_view value) {
    if (key == "threshold") {
      cfg_.threshold = threshold(value);
    } else if (key == "plugin_timeout_ms") {
      cfg_.plugin_timeout_ms = positive(value);
    } else if (key == "engine_timeout_ms") {
      cfg_.engine_timeout_ms = positive(value);
    } else if (key == "abstain_maps_to") {
      cfg_.abstain_maps_to = decision(value);
    } else if (key == "error_maps_to") {
      cfg_.error_maps_to = decision(value);
    } else if (key == "starttls_enforce") {
      cfg_.starttls_enforce = boolean(value);
    } else if (key == "tls13_mode") {
      auto s = lower(value);
      if (s == "allow") {
        cfg_.tls13_mode = Tls13Mode::Allow;
      } else if (s == "block") {
        cfg_.tls13_mode = Tls13Mode::Block;
      } else {
        fail("tls13_mode must be allow or block");
      }
    } else {
      fail("unknown engine key '" + key + "'");
    }
  }

  void interceptor_key(const std::string& key, std::string_view value) {
    auto& s = cfg_.interceptor;
    if (key == "starttls_ports") {
      s.starttls_ports.clear();
      std::string list(value);
      std::replace(list.begin(), list.end(), ',', ' ');
      std::istringstream in(list);
      std::string item;
      while (in >> item) {
        auto port = parse_number<std::uint16_t>(item);
        if (!port || *port == 0) fail("bad port '" + item + "'");
        s.starttls_ports.insert(*port);
      }
    } else if (key == "starttls_store") {
      s.starttls_store = std::string(value);
    } else if (key == "dns_feed") {
      s.dns_feed = std::string(value);
    } else if (key == "dns_ttl_s") {
      s.dns_ttl_s = positive(value);
    } else if (key == "notify_command") {
      s.notify_command = std::string(value);
    } else if (key == "event_log") {
      s.event_log = std::string(value);
    } else {
      fail("unknown interceptor key '" + key + "'");
    }
  }

  void plugin_key(const std::string& key, std::string_view value) {
    auto& p = cfg_.plugins.back();
    if (key == "kind") {
      auto s = lower(value);
      if (s == "native") {
        p.kind = PluginKind::Native;
      } else if (s == "addon") {
        p.kind = PluginKind::Addon;
      } else {
        fail("kind must be native or addon");
      }
    } else if (key == "path") {
      if (value.empty()) fail("empty plugin path");
      p.path = std::string(value);
    } else if (key == "data") {
      p.data = std::string(value);
    } else if (key == "group") {
      auto s = lower(value);
      if (s == "necessary") {
        p.group = PluginGroup::Necessary;
      } else if (s == "voting") {
        p.group = PluginGroup::Voting;
      } else {
        fail("group must be necessary or voting");
      }
    } else if (key == "serialized") {
      p.serialized = boolean(value);
    } else {
      fail("unknown plugin key '" + key + "'");
    }
  }

  std::string_view text_;
  std::size_t line_ = 0;
  Section section_ = Section::None;
  PolicyConfig cfg_;
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  return base / p;
}

}  // namespace

PolicyConfig load_config(std::string_view text) { return Parser(text).run(); }

PolicyConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot read config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto cfg = load_config(buffer.str());

  // Relative paths are taken relative to the configuration file.
  const auto base = std::filesystem::absolute(path).parent_path();
  for (auto& plugin : cfg.plugins) {
    if (plugin.kind == PluginKind::Native && plugin.path.rfind("builtin:", 0) != 0) {
      plugin.path = resolve(base, plugin.path).string();
    }
    if (!plugin.data.empty()) plugin.data = resolve(base, plugin.data).string();
  }
  cfg.interceptor.starttls_store = resolve(base, cfg.interceptor.starttls_store);
  if (cfg.interceptor.dns_feed.native().rfind("unix:", 0) != 0) {
    cfg.interceptor.dns_feed = resolve(base, cfg.interceptor.dns_feed);
  }
  cfg.interceptor.event_log = resolve(base, cfg.interceptor.event_log);
  return cfg;
}

}  // namespace certgate::engine
