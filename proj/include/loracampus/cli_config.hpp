#pragma once

// Run configuration for the command-line front end: a sectioned key = value
// file, flag overrides and typed, validated access to the effective values.
//
//   seed = 7
//   [sim]
//   devices = 20      # read as sim.devices
//
// Keys outside any section are global (seed, in, out).

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "loracampus/core_model.hpp"
#include "loracampus/error.hpp"
#include "loracampus/text.hpp"

namespace loracampus::cli {

struct KeySpec {
  std::string name;      // dotted, e.g. "sim.devices"
  std::string fallback;  // default as text; empty means unset
  std::string help;
  std::string alias;  // optional extra flag name, e.g. "devices"
};

struct FileEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::vector<FileEntry> parse_config(std::string_view content, const std::string& path) {
  std::vector<FileEntry> out;
  std::set<std::string> seen;
  std::string section;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw Error(Errc::ConfigInvalid, path + ":" + std::to_string(line_no) + ": " + why);
  };
  for (auto raw : text::split(content, '\n')) {
    ++line_no;
    if (const auto hash = raw.find_first_of("#;"); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const auto line = text::trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = std::string(text::trim(line.substr(1, line.size() - 2)));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value', got '" + std::string(line) + "'");
    const auto key = text::trim(line.substr(0, eq));
    if (key.empty()) fail("missing key before '='");
    std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (!seen.insert(full).second) fail("key '" + full + "' set twice");
    out.push_back({std::move(full), std::string(text::trim(line.substr(eq + 1))), line_no});
  }
  return out;
}

/// Effective values for one subcommand. Reading a key the subcommand did not
/// register is a programming error (its --help would not list it).
class Settings {
 public:
  explicit Settings(const std::vector<KeySpec>& keys) {
    for (const auto& k : keys) values_[k.name] = {k.fallback, "default"};
  }

  bool knows(const std::string& key) const { return values_.count(key) > 0; }

  void set(const std::string& key, std::string value, std::string origin) {
    if (!knows(key)) throw Error(Errc::ConfigInvalid, origin + ": unknown key '" + key + "'");
    values_[key] = {std::move(value), std::move(origin)};
  }

  const std::string& text(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("config key '" + key + "' read but not registered");
    read_.insert(key);
    return it->second.value;
  }

  const std::string& required(const std::string& key) {
    const auto& v = text(key);
    if (v.empty()) invalid(key, "a value is required");
    return v;
  }

  std::int64_t integer(const std::string& key, std::int64_t min = 0) {
    const auto v = text::parse_int(text::trim(text(key)));
    if (!v) invalid(key, "expected an integer");
    if (*v < min) invalid(key, "must be >= " + std::to_string(min));
    return *v;
  }

  std::size_t count(const std::string& key, std::int64_t min = 0) {
    return static_cast<std::size_t>(integer(key, min));
  }

  std::uint64_t seed(const std::string& key = "seed") { return static_cast<std::uint64_t>(integer(key, 0)); }

  double real(const std::string& key) {
    const auto v = text::parse_double(text::trim(text(key)));
    if (!v) invalid(key, "expected a number");
    return *v;
  }

  bool flag(const std::string& key) {
    const auto v = text::to_lower(text::trim(text(key)));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    invalid(key, "expected true or false");
  }

  std::vector<std::string> list(const std::string& key) {
    std::vector<std::string> out;
    for (auto part : text::split(text(key), ',')) {
      const auto item = text::trim(part);
      if (!item.empty()) out.emplace_back(item);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) {
    std::vector<double> out;
    for (const auto& item : list(key)) {
      const auto v = text::parse_double(item);
      if (!v) invalid(key, "expected comma-separated numbers");
      out.push_back(*v);
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::int64_t min = 1) {
    std::vector<std::size_t> out;
    for (const auto& item : list(key)) {
      const auto v = text::parse_int(item);
      if (!v || *v < min) invalid(key, "expected comma-separated integers >= " + std::to_string(min));
      out.push_back(static_cast<std::size_t>(*v));
    }
    return out;
  }

  Timestamp timestamp(const std::string& key) {
    const auto& v = text(key);
    try {
      return parse_iso8601(text::trim(v));
    } catch (const Error& e) {
      invalid(key, e.what());
    }
  }

  Field field(const std::string& key) {
    const auto f = field_from_name(text::to_lower(text::trim(text(key))));
    if (!f) invalid(key, "not a measurement name");
    return *f;
  }

  std::vector<Field> fields(const std::string& key) {
    std::vector<Field> out;
    for (const auto& item : list(key)) {
      const auto f = field_from_name(text::to_lower(item));
      if (!f) invalid(key, "'" + item + "' is not a measurement name");
      out.push_back(*f);
    }
    return out;
  }

  template <typename T>
  T choice(const std::string& key, const std::map<std::string, T>& options) {
    const auto v = text::to_lower(text::trim(text(key)));
    const auto it = options.find(v);
    if (it == options.end()) {
      std::string names;
      for (const auto& [name, value] : options) names += (names.empty() ? "" : "|") + name;
      invalid(key, "expected one of " + names);
    }
    return it->second;
  }

  /// The keys read so far with their values, in key order.
  nlohmann::json effective() const {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& key : read_) out[key] = values_.at(key).value;
    return out;
  }

  const std::set<std::string>& read() const { return read_; }

  [[noreturn]] void invalid(const std::string& key, const std::string& why) const {
    const auto& s = values_.at(key);
    throw Error(Errc::ConfigInvalid, s.origin + ": " + key + " = '" + s.value + "': " + why);
  }

 private:
  struct Value {
    std::string value;
    std::string origin;  // "default", "flag --x" or "file:line"
  };
  std::map<std::string, Value> values_;
  std::set<std::string> read_;
};

}  // namespace loracampus::cli
