#pragma once

// A small TOML subset for hand-edited experiment inputs: [section] headers,
// `key = value` pairs, strings, integers, floats, booleans and (possibly
// multi-line) arrays. No inline tables, dates or multi-line strings.

#include <cctype>
#include <charconv>
#include <cstdint>
#include <locale>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "errors.hpp"

namespace clens::toml {

struct Value;
using Array = std::vector<Value>;

struct Value {
  std::variant<bool, std::int64_t, double, std::string, Array> data;
  std::string source;
  std::size_t line = 0;
  std::size_t column = 0;

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(source, line, column, msg); }

  const std::string& as_string() const {
    if (auto* s = std::get_if<std::string>(&data)) return *s;
    fail("expected a string");
  }
  double as_double() const {
    if (auto* d = std::get_if<double>(&data)) return *d;
    if (auto* i = std::get_if<std::int64_t>(&data)) return static_cast<double>(*i);
    fail("expected a number");
  }
  std::int64_t as_int() const {
    if (auto* i = std::get_if<std::int64_t>(&data)) return *i;
    fail("expected an integer");
  }
  bool as_bool() const {
    if (auto* b = std::get_if<bool>(&data)) return *b;
    fail("expected a boolean");
  }
  const Array& as_array() const {
    if (auto* a = std::get_if<Array>(&data)) return *a;
    fail("expected an array");
  }
  std::vector<std::string> as_string_list() const {
    std::vector<std::string> out;
    for (const auto& v : as_array()) out.push_back(v.as_string());
    return out;
  }
  std::vector<std::int64_t> as_int_list() const {
    std::vector<std::int64_t> out;
    for (const auto& v : as_array()) out.push_back(v.as_int());
    return out;
  }
};

struct Table {
  std::string name;
  std::size_t line = 0;
  std::vector<std::pair<std::string, Value>> entries;

  const Value* find(std::string_view key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return &v;
    return nullptr;
  }
};

struct Document {
  std::string source;
  std::vector<Table> tables;  // tables[0] is the root (unnamed) table

  const Table* find(std::string_view name) const {
    for (const auto& t : tables)
      if (t.name == name) return &t;
    return nullptr;
  }
  bool empty() const {
    for (const auto& t : tables)
      if (!t.entries.empty()) return false;
    return true;
  }
};

namespace detail {

class Parser {
 public:
  Parser(std::string_view text, std::string source) : text_(text), source_(std::move(source)) {}

  Document parse() {
    Document doc;
    doc.source = source_;
    doc.tables.push_back(Table{"", 1, {}});
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        std::size_t line = line_;
        get();
        skip_inline_ws();
        std::string name = parse_key(true);
        skip_inline_ws();
        expect(']');
        end_of_line();
        for (const auto& t : doc.tables)
          if (t.name == name) error("duplicate section [" + name + "]");
        doc.tables.push_back(Table{name, line, {}});
        continue;
      }
      std::size_t kline = line_, kcol = col_;
      std::string key = parse_key(false);
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      Value v = parse_value();
      end_of_line();
      Table& t = doc.tables.back();
      if (t.find(key)) throw ParseError(source_, kline, kcol, "duplicate key '" + key + "'");
      t.entries.emplace_back(std::move(key), std::move(v));
    }
    return doc;
  }

 private:
  bool eof() const { return pos_ >= text_.size(); }
  char peek() const { return eof() ? '\0' : text_[pos_]; }
  char get() {
    char c = text_[pos_++];
    if (c == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    return c;
  }
  [[noreturn]] void error(const std::string& msg) const { throw ParseError(source_, line_, col_, msg); }
  void expect(char c) {
    if (eof() || peek() != c) error(std::string("expected '") + c + "'");
    get();
  }
  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t' || peek() == '\r')) get();
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') get();
  }
  void skip_ws_comments_newlines() {
    while (!eof()) {
      skip_inline_ws();
      skip_comment();
      if (!eof() && peek() == '\n') {
        get();
        continue;
      }
      break;
    }
  }
  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (!eof() && peek() != '\n') error("unexpected trailing characters");
  }

  static bool bare_key_char(char c, bool dotted) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || (dotted && c == '.');
  }

  std::string parse_key(bool section) {
    if (peek() == '"') return parse_string();
    std::string key;
    while (!eof() && bare_key_char(peek(), true)) key.push_back(get());
    if (key.empty()) error(section ? "expected section name" : "expected key");
    return key;
  }

  std::string parse_string() {
    expect('"');
    std::string s;
    while (true) {
      if (eof() || peek() == '\n') error("unterminated string");
      char c = get();
      if (c == '"') break;
      if (c == '\\') {
        if (eof()) error("unterminated escape");
        char e = get();
        switch (e) {
          case 'n': s.push_back('\n'); break;
          case 't': s.push_back('\t'); break;
          case '"': s.push_back('"'); break;
          case '\\': s.push_back('\\'); break;
          default: error(std::string("unknown escape \\") + e);
        }
      } else {
        s.push_back(c);
      }
    }
    return s;
  }

  Value parse_value() {
    Value v;
    v.source = source_;
    v.line = line_;
    v.column = col_;
    if (eof()) error("expected a value");
    char c = peek();
    if (c == '"') {
      v.data = parse_string();
    } else if (c == '[') {
      get();
      Array arr;
      while (true) {
        skip_ws_comments_newlines();
        if (peek() == ']') {
          get();
          break;
        }
        arr.push_back(parse_value());
        skip_ws_comments_newlines();
        if (peek() == ',') {
          get();
          continue;
        }
        if (peek() == ']') {
          get();
          break;
        }
        error("expected ',' or ']' in array");
      }
      v.data = std::move(arr);
    } else {
      std::string tok;
      while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '.' || peek() == '-' ||
                        peek() == '+' || peek() == '_'))
        tok.push_back(get());
      if (tok == "true") {
        v.data = true;
      } else if (tok == "false") {
        v.data = false;
      } else if (tok.empty()) {
        error("expected a value");
      } else {
        std::string clean;
        for (char ch : tok)
          if (ch != '_') clean.push_back(ch);
        const bool is_float = clean.find_first_of(".eE") != std::string::npos || clean == "inf" || clean == "nan";
        if (is_float) {
          std::istringstream in(clean);
          in.imbue(std::locale::classic());
          double d;
          if (!(in >> d) || !in.eof()) throw ParseError(source_, v.line, v.column, "invalid number '" + tok + "'");
          v.data = d;
        } else {
          std::int64_t i = 0;
          const char* b = clean.data() + (clean[0] == '+' ? 1 : 0);
          auto [p, ec] = std::from_chars(b, clean.data() + clean.size(), i);
          if (ec != std::errc() || p != clean.data() + clean.size())
            throw ParseError(source_, v.line, v.column, "invalid value '" + tok + "'");
          v.data = i;
        }
      }
    }
    return v;
  }

  std::string_view text_;
  std::string source_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

}  // namespace detail

inline Document parse(std::string_view text, std::string source = "<string>") {
  return detail::Parser(text, std::move(source)).parse();
}

// Serialisation helpers used for --print-config and config echo.
inline std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out + "\"";
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(17);
  os << v;
  std::string s = os.str();
  // shortest representation that round-trips
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream t;
    t.imbue(std::locale::classic());
    t.precision(prec);
    t << v;
    std::istringstream back(t.str());
    double r;
    back >> r;
    if (r == v) {
      s = t.str();
      break;
    }
  }
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace clens::toml
