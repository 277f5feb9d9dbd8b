#pragma once

#include "elvis/core/types.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace elvis {

/// Flat key=value settings. Readers consume keys as they parse them so that
/// anything left over can be reported as unknown.
class KeyValues {
 public:
  /// Lines of `key = value`; '#' starts a comment. Later keys override earlier ones.
  static KeyValues parse(const std::string& text, const std::string& source);
  static KeyValues load(const std::string& path);

  /// Parses a single "key=value" override.
  void set_override(const std::string& assignment);
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  int get_int(const std::string& key, int fallback);
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::array<double, 2> get_range(const std::string& key, std::array<double, 2> fallback);
  std::array<int, 2> get_int_range(const std::string& key, std::array<int, 2> fallback);
  std::vector<double> get_list(const std::string& key, std::vector<double> fallback);

  /// Throws ContractError naming the first key nobody consumed.
  void reject_unknown() const;

  /// Sorted "key=value" lines.
  std::string dump() const;

 private:
  const std::string* take(const std::string& key);

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

/// Shortest decimal that reads back to the same double.
std::string format_double(double v);
std::string format_range(const std::array<double, 2>& r);
std::string format_int_range(const std::array<int, 2>& r);

}  // namespace elvis
