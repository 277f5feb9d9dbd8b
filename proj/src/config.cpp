#include "elvis/config.hpp"

#include "elvis/io.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

namespace elvis {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v))
    throw ContractError("config key " + key + ": expected a number, got '" + text + "'");
  return v;
}

long long parse_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw ContractError("config key " + key + ": expected an integer, got '" + text + "'");
  return v;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& source) {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || trim(line.substr(0, eq)).empty())
      throw ContractError(source + ":" + std::to_string(number) + ": expected key=value");
    kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::string text;
  try {
    text = io::read_file(path);
  } catch (const RuntimeFailure&) {
    throw ContractError("config: cannot read " + path);
  }
  return parse(text, path);
}

void KeyValues::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || trim(assignment.substr(0, eq)).empty())
    throw ContractError("--set expects key=value, got '" + assignment + "'");
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

const std::string* KeyValues::take(const std::string& key) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? nullptr : &it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) {
  const std::string* v = take(key);
  return v ? *v : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) {
  const std::string* v = take(key);
  return v ? parse_double(key, *v) : fallback;
}

int KeyValues::get_int(const std::string& key, int fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  const long long x = parse_integer(key, *v);
  if (x < -(1LL << 31) || x >= (1LL << 31)) throw ContractError("config key " + key + ": integer out of range");
  return static_cast<int>(x);
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), x);
  if (ec != std::errc() || ptr != v->data() + v->size())
    throw ContractError("config key " + key + ": expected a non-negative integer, got '" + *v + "'");
  return x;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw ContractError("config key " + key + ": expected true or false, got '" + *v + "'");
}

std::array<double, 2> KeyValues::get_range(const std::string& key, std::array<double, 2> fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  const auto parts = split_commas(*v);
  if (parts.size() != 2) throw ContractError("config key " + key + ": expected lo,hi");
  return {parse_double(key, parts[0]), parse_double(key, parts[1])};
}

std::array<int, 2> KeyValues::get_int_range(const std::string& key, std::array<int, 2> fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  const auto parts = split_commas(*v);
  if (parts.size() != 2) throw ContractError("config key " + key + ": expected lo,hi");
  return {static_cast<int>(parse_integer(key, parts[0])), static_cast<int>(parse_integer(key, parts[1]))};
}

std::vector<double> KeyValues::get_list(const std::string& key, std::vector<double> fallback) {
  const std::string* v = take(key);
  if (!v) return fallback;
  std::vector<double> out;
  if (trim(*v).empty()) return out;
  for (const auto& p : split_commas(*v)) out.push_back(parse_double(key, p));
  return out;
}

void KeyValues::reject_unknown() const {
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) throw ContractError("unknown config key: " + key);
}

std::string KeyValues::dump() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string format_range(const std::array<double, 2>& r) { return format_double(r[0]) + "," + format_double(r[1]); }

std::string format_int_range(const std::array<int, 2>& r) {
  return std::to_string(r[0]) + "," + std::to_string(r[1]);
}

}  // namespace elvis
