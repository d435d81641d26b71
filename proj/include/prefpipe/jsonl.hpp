#pragma once

#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// File-level uniqueness checks run after all lines parse. The default is a
// no-op; record types with uniqueness invariants specialize.
template <typename T>
inline void validate_file(const std::vector<T>&) {}

template <>
inline void validate_file<Article>(const std::vector<Article>& records) {
  std::unordered_set<std::string> seen;
  for (const auto& a : records) {
    if (!seen.insert(a.id).second) throw Error("Article id '" + a.id + "' appears twice");
  }
}

template <>
inline void validate_file<CandidateTranslation>(const std::vector<CandidateTranslation>& records) {
  std::unordered_set<std::string> seen;
  for (const auto& t : records) {
    if (!seen.insert(t.article_id + "\x1f" + t.model_id).second) {
      throw Error("duplicate translation for (" + t.article_id + ", " + t.model_id + ")");
    }
  }
}

// One JSON object per line, UTF-8, LF endings. Lines are returned in file
// order; blank lines are not allowed (a malformed file should fail loudly).
template <typename T>
std::vector<T> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(std::string(T::kind) + " file not found: " + path);
  std::vector<T> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      throw Error(path + ":" + std::to_string(line_no) + ": malformed JSON line");
    }
    try {
      records.push_back(T::from_json(j));
    } catch (const Error& e) {
      throw Error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  validate_file(records);
  return records;
}

template <typename T>
void append_jsonl_line(std::ostream& out, const T& record) {
  std::string line;
  record.to_canonical(line);
  line.push_back('\n');
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
}

template <typename T>
void write_jsonl(const std::string& path, const std::vector<T>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  for (const auto& r : records) append_jsonl_line(out, r);
  if (!out) throw Error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("file not found: " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed: " + path);
}

inline json parse_json_file(const std::string& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(path + ": malformed JSON");
  return j;
}

}  // namespace prefpipe
