#include "stoodx/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "stoodx/error.hpp"

namespace stoodx::config {

namespace {

constexpr const char* kModule = "config";

[[noreturn]] void fail(std::size_t line, const std::string& why) {
  throw Error(Errc::MalformedHeader, kModule, "line " + std::to_string(line) + ": " + why);
}

class Parser {
 public:
  Parser(std::string_view text, std::size_t line) : s_(text), line_(line) {}

  Value value() {
    skip_ws();
    if (pos_ >= s_.size()) fail(line_, "missing value");
    const char c = s_[pos_];
    if (c == '"' || c == '\'') return {string_literal()};
    if (c == '[') return {array()};
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return {true};
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return {false};
    }
    return number();
  }

  void expect_end() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] != '#') fail(line_, "trailing characters");
  }

 private:
  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  std::string string_literal() {
    const char quote = s_[pos_++];
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != quote) {
      if (quote == '"' && s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
        const char e = s_[++pos_];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
        ++pos_;
        continue;
      }
      out += s_[pos_++];
    }
    if (pos_ >= s_.size()) fail(line_, "unterminated string");
    ++pos_;
    return out;
  }

  Array array() {
    ++pos_;
    Array out;
    while (true) {
      skip_ws();
      if (pos_ >= s_.size()) fail(line_, "unterminated array");
      if (s_[pos_] == ']') {
        ++pos_;
        return out;
      }
      out.push_back(value());
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == ',') ++pos_;
    }
  }

  Value number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                s_[pos_] == '.' || s_[pos_] == '-' || s_[pos_] == '+' ||
                                s_[pos_] == '_'))
      ++pos_;
    std::string token(s_.substr(start, pos_ - start));
    std::erase(token, '_');
    if (token.empty()) fail(line_, "expected a value");
    const bool is_float = token.find_first_of(".eE") != std::string::npos;
    if (!is_float) {
      std::int64_t v = 0;
      const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
      if (ec == std::errc() && ptr == token.data() + token.size()) return {v};
    }
    try {
      std::size_t used = 0;
      const double d = std::stod(token, &used);
      if (used == token.size()) return {d};
    } catch (const std::exception&) {
    }
    fail(line_, "cannot parse value '" + token + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  std::size_t line_;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::string Value::as_string() const {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw Error(Errc::InvalidArgument, kModule, "expected a string");
}

double Value::as_double() const {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw Error(Errc::InvalidArgument, kModule, "expected a number");
}

std::int64_t Value::as_int() const {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  throw Error(Errc::InvalidArgument, kModule, "expected an integer");
}

bool Value::as_bool() const {
  if (const auto* b = std::get_if<bool>(&v)) return *b;
  throw Error(Errc::InvalidArgument, kModule, "expected a boolean");
}

const Array& Value::as_array() const {
  if (const auto* a = std::get_if<Array>(&v)) return *a;
  throw Error(Errc::InvalidArgument, kModule, "expected an array");
}

const Value* Document::find(const std::string& key) const {
  const auto it = root.find(key);
  return it == root.end() ? nullptr : &it->second;
}

std::optional<std::string> Document::get_string(const std::string& key) const {
  if (const auto* v = find(key)) return v->as_string();
  return std::nullopt;
}

std::optional<double> Document::get_double(const std::string& key) const {
  if (const auto* v = find(key)) return v->as_double();
  return std::nullopt;
}

std::optional<std::int64_t> Document::get_int(const std::string& key) const {
  if (const auto* v = find(key)) return v->as_int();
  return std::nullopt;
}

Document parse(const std::string& text) {
  Document doc;
  Table* current = &doc.root;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("[[", 0) == 0) {
      const auto close = line.find("]]");
      if (close == std::string::npos) fail(line_no, "unterminated table header");
      const std::string name = trim(std::string_view(line).substr(2, close - 2));
      auto& tables = doc.array_tables[name];
      tables.emplace_back();
      current = &tables.back();
      continue;
    }
    if (line[0] == '[') fail(line_no, "plain [tables] are not supported; use [[name]]");
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"')
      key = key.substr(1, key.size() - 2);
    if (key.empty()) fail(line_no, "empty key");
    Parser p(std::string_view(line).substr(eq + 1), line_no);
    Value v = p.value();
    p.expect_end();
    if (current->count(key)) fail(line_no, "duplicate key '" + key + "'");
    current->emplace(std::move(key), std::move(v));
  }
  return doc;
}

Document parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, kModule, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace stoodx::config
