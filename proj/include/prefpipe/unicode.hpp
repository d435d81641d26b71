#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace prefpipe {

// All character counts in this project are Unicode scalar counts, never
// byte counts: "čebela" has 6 characters.
inline std::uint64_t scalar_count(std::string_view utf8) {
  std::uint64_t n = 0;
  for (unsigned char c : utf8) n += (c & 0xC0) != 0x80;
  return n;
}

// Byte offset of each scalar's first byte, plus a trailing utf8.size()
// sentinel, so scalar i spans [offsets[i], offsets[i+1]).
inline std::vector<std::size_t> scalar_offsets(std::string_view utf8) {
  std::vector<std::size_t> offsets;
  offsets.reserve(utf8.size() + 1);
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    if ((static_cast<unsigned char>(utf8[i]) & 0xC0) != 0x80) offsets.push_back(i);
  }
  offsets.push_back(utf8.size());
  return offsets;
}

// Decodes the scalar starting at byte i; assumes valid UTF-8 (inputs come
// through the JSON layer, which rejects malformed sequences).
inline char32_t scalar_at(std::string_view utf8, std::size_t i) {
  const unsigned char b0 = static_cast<unsigned char>(utf8[i]);
  if (b0 < 0x80) return b0;
  int len = (b0 >= 0xF0) ? 4 : (b0 >= 0xE0) ? 3 : 2;
  char32_t cp = b0 & (0xFF >> (len + 1));
  for (int k = 1; k < len && i + k < utf8.size(); ++k) {
    cp = (cp << 6) | (static_cast<unsigned char>(utf8[i + k]) & 0x3F);
  }
  return cp;
}

inline bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim_whitespace(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_ascii_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_ascii_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace prefpipe
