#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include "prefpipe/error.hpp"

namespace prefpipe::canon {

// Canonical JSON emission: keys in sorted order (callers write them sorted),
// no insignificant whitespace, floats at 17 significant digits so that
// write(read(f)) is byte-identical for canonical files.

inline void append_escaped(std::string& out, std::string_view s) {
  out.push_back('"');
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  out.push_back('"');
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Builds one JSON object; add_* must be called in sorted key order.
class ObjectWriter {
public:
  explicit ObjectWriter(std::string& out) : out_(out) { out_.push_back('{'); }

  void add_string(std::string_view key, std::string_view value) {
    key_(key);
    append_escaped(out_, value);
  }
  void add_uint(std::string_view key, std::uint64_t value) {
    key_(key);
    out_ += std::to_string(value);
  }
  void add_int(std::string_view key, std::int64_t value) {
    key_(key);
    out_ += std::to_string(value);
  }
  void add_double(std::string_view key, double value) {
    key_(key);
    out_ += format_double(value);
  }
  void add_bool(std::string_view key, bool value) {
    key_(key);
    out_ += value ? "true" : "false";
  }
  void add_null(std::string_view key) {
    key_(key);
    out_ += "null";
  }
  // Verbatim JSON fragment (nested object/array produced by another writer).
  void add_raw(std::string_view key, std::string_view json) {
    key_(key);
    out_ += json;
  }
  void close() { out_.push_back('}'); }

private:
  void key_(std::string_view key) {
    if (!first_) out_.push_back(',');
    first_ = false;
    append_escaped(out_, key);
    out_.push_back(':');
  }
  std::string& out_;
  bool first_ = true;
};

}  // namespace prefpipe::canon
