#pragma once

#include <cctype>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "depthcal/error.hpp"

namespace depthcal::json {

using Json = nlohmann::ordered_json;

namespace detail {

inline void dump_to(const Json& j, std::string& out, int indent, int level) {
  const auto newline = [&](int lvl) {
    if (indent < 0) return;
    out.push_back('\n');
    out.append(static_cast<std::size_t>(indent * lvl), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out.push_back('{');
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out.push_back(',');
        first = false;
        newline(level + 1);
        out += Json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_to(it.value(), out, indent, level + 1);
      }
      newline(level);
      out.push_back('}');
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      bool flat = true;
      for (const auto& v : j) flat = flat && !v.is_structured();
      out.push_back('[');
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += flat && indent >= 0 ? ", " : ",";
        if (!flat) newline(level + 1);
        dump_to(j[i], out, indent, level + 1);
      }
      if (!flat) newline(level);
      out.push_back(']');
      return;
    }
    case Json::value_t::number_float: {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", j.get<double>());
      out += buf;
      return;
    }
    default:
      out += j.dump();
      return;
  }
}

}  // namespace detail

/// Serializes with every floating-point number at 17 significant digits so
/// output is byte-stable and round-trips exactly.
inline std::string dump(const Json& j, int indent = 2) {
  std::string out;
  detail::dump_to(j, out, indent, 0);
  return out;
}

/// Maps JSON pointers to the 1-based line on which each value starts.
class LineLocator {
 public:
  explicit LineLocator(std::string_view text) : text_(text) {
    skip_ws();
    value("");
  }

  /// Line of the deepest recorded ancestor of `pointer` (0 when unknown).
  std::size_t line_of(std::string pointer) const {
    while (true) {
      if (auto it = lines_.find(pointer); it != lines_.end()) return it->second;
      if (pointer.empty()) return 0;
      pointer.erase(pointer.rfind('/'));
    }
  }

 private:
  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      if (text_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }

  std::string string_token() {
    std::string s;
    ++pos_;  // opening quote
    while (pos_ < text_.size() && text_[pos_] != '"') {
      if (text_[pos_] == '\\' && pos_ + 1 < text_.size()) ++pos_;
      s.push_back(text_[pos_++]);
    }
    ++pos_;
    return s;
  }

  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out.push_back(c);
    }
    return out;
  }

  void value(const std::string& path) {
    if (pos_ >= text_.size()) return;
    lines_.emplace(path, line_);
    const char c = text_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < text_.size() && text_[pos_] != '}') {
        if (text_[pos_] != '"') return;
        const std::string key = string_token();
        skip_ws();
        if (pos_ >= text_.size() || text_[pos_] != ':') return;
        ++pos_;
        skip_ws();
        value(path + "/" + escape(key));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        }
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      std::size_t index = 0;
      while (pos_ < text_.size() && text_[pos_] != ']') {
        value(path + "/" + std::to_string(index++));
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == ',') {
          ++pos_;
          skip_ws();
        } else if (pos_ < text_.size() && text_[pos_] != ']') {
          return;
        }
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != '}' && text_[pos_] != ']' &&
             !std::isspace(static_cast<unsigned char>(text_[pos_]))) {
        ++pos_;
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::map<std::string, std::size_t> lines_;
};

/// A parsed document that can report schema failures with line numbers.
class Document {
 public:
  Document(std::string text, std::string source) : text_(std::move(text)), source_(std::move(source)) {
    try {
      root_ = Json::parse(text_);
    } catch (const Json::parse_error& e) {
      std::size_t line = 1;
      for (std::size_t i = 0; i < e.byte && i < text_.size(); ++i) line += text_[i] == '\n';
      throw Error(Errc::schema, source_ + " line " + std::to_string(line) + ": malformed JSON");
    }
  }

  const Json& root() const noexcept { return root_; }

  [[noreturn]] void fail(Errc code, const std::string& pointer, const std::string& why) const {
    const std::size_t line = LineLocator(text_).line_of(pointer);
    throw Error(code, source_ + " line " + std::to_string(line) + " (" + (pointer.empty() ? "/" : pointer) +
                          "): " + why);
  }

  const Json& at(const Json& obj, const std::string& pointer, const char* key) const {
    if (!obj.is_object()) fail(Errc::schema, pointer, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) fail(Errc::schema, pointer, std::string("missing field \"") + key + "\"");
    return *it;
  }

  double number(const Json& v, const std::string& pointer) const {
    if (!v.is_number()) fail(Errc::schema, pointer, "expected a number");
    return v.get<double>();
  }

  std::string string(const Json& v, const std::string& pointer) const {
    if (!v.is_string()) fail(Errc::schema, pointer, "expected a string");
    return v.get<std::string>();
  }

  std::vector<double> numbers(const Json& v, const std::string& pointer) const {
    if (!v.is_array()) fail(Errc::schema, pointer, "expected an array of numbers");
    std::vector<double> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(number(v[i], pointer + "/" + std::to_string(i)));
    return out;
  }

  const Json& array(const Json& v, const std::string& pointer) const {
    if (!v.is_array()) fail(Errc::schema, pointer, "expected an array");
    return v;
  }

 private:
  std::string text_;
  std::string source_;
  Json root_;
};

}  // namespace depthcal::json
