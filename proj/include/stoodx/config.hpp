#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace stoodx::config {

// A small TOML subset: `key = value` pairs, `#` comments, `[[name]]` array
// tables. Values are strings, integers, floats, booleans, or flat arrays of
// those.
struct Value;
using Array = std::vector<Value>;
struct Value {
  std::variant<std::string, std::int64_t, double, bool, Array> v;

  bool is_string() const { return std::holds_alternative<std::string>(v); }
  bool is_array() const { return std::holds_alternative<Array>(v); }
  std::string as_string() const;
  double as_double() const;
  std::int64_t as_int() const;
  bool as_bool() const;
  const Array& as_array() const;
};

using Table = std::map<std::string, Value>;

struct Document {
  Table root;
  std::map<std::string, std::vector<Table>> array_tables;

  const Value* find(const std::string& key) const;
  std::optional<std::string> get_string(const std::string& key) const;
  std::optional<double> get_double(const std::string& key) const;
  std::optional<std::int64_t> get_int(const std::string& key) const;
};

Document parse(const std::string& text);
Document parse_file(const std::filesystem::path& path);

}  // namespace stoodx::config
