#pragma once

#include <optional>
#include <set>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"

#include "coughgan/error.hpp"

namespace coughgan {

/// Strict reader over one JSON object. Every accessed key is recorded;
/// finish() rejects any key that was never read. Errors carry the dotted
/// path of the offending field.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  /// Assigns `out` if the key is present; leaves the default otherwise.
  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), field(key));
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": required field missing");
    read(key, out);
  }

  /// Nested object reader for `key` (must be present).
  JsonFields child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw ConfigError(field(key) + ": required section missing");
    return JsonFields(j_.at(key), field(key));
  }

  /// Nested object reader for `key`, or nullopt when absent.
  std::optional<JsonFields> optional_child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return JsonFields(j_.at(key), field(key));
  }

  /// The raw value of `key` for a parser of its own, or nullptr when absent.
  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }

  template <typename T>
  static T convert(const nlohmann::json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw ConfigError(path + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::pair<double, double>>) {
      if (!v.is_array() || v.size() != 2) throw ConfigError(path + ": expected a two-element array");
      return {convert<double>(v[0], path + "[0]"), convert<double>(v[1], path + "[1]")};
    } else {
      using E = typename T::value_type;
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) out.push_back(convert<E>(v[i], path + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace coughgan
