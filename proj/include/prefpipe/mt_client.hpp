#pragma once

// Batch dual-translation generation against chat-completion HTTP endpoints.
// Wire format: POST {base_url}/chat/completions with
//   {"messages":[{"content":"<instruction>\n\n<source>","role":"user"}],
//    "model":"...","temperature":0}
// and the translation read from choices[0].message.content. The API key comes
// from the environment variable named in the backend spec, sent as
// `Authorization: Bearer ...`.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "prefpipe/http.hpp"
#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/jsonl.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/types.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

struct BackendSpec {
  std::string model_id;
  std::string base_url;
  std::string api_key_env;  // empty: no Authorization header
  std::string prompt_instruction;
  int max_in_flight = 4;
  int timeout_s = 60;
  int max_retries = 3;

  void validate() const {
    if (model_id.empty()) throw Error("backend: empty model_id");
    if (base_url.empty()) throw Error("backend: empty base_url");
    if (prompt_instruction.empty()) throw Error("backend: empty prompt_instruction");
    if (max_in_flight < 1) throw Error("backend: max_in_flight must be >= 1");
    if (max_retries < 0) throw Error("backend: max_retries must be >= 0");
  }

  static BackendSpec from_json(const json& j) {
    BackendSpec b;
    b.model_id = detail::get_string(j, "model_id", "BackendSpec");
    b.base_url = detail::get_string(j, "base_url", "BackendSpec");
    if (j.contains("api_key_env")) b.api_key_env = j["api_key_env"].get<std::string>();
    b.prompt_instruction = detail::get_string(j, "prompt_instruction", "BackendSpec");
    if (j.contains("max_in_flight")) b.max_in_flight = j["max_in_flight"].get<int>();
    if (j.contains("timeout_s")) b.timeout_s = j["timeout_s"].get<int>();
    if (j.contains("max_retries")) b.max_retries = j["max_retries"].get<int>();
    b.validate();
    return b;
  }
};

struct TranslateFailure {
  std::string article_id;
  std::string model_id;
  std::string error;
};

struct TranslateReport {
  std::uint64_t requested = 0;
  std::uint64_t skipped_existing = 0;
  std::uint64_t succeeded = 0;
  std::vector<TranslateFailure> failures;

  std::string to_json() const {
    std::string out;
    canon::ObjectWriter w(out);
    {
      std::string arr = "[";
      for (std::size_t i = 0; i < failures.size(); ++i) {
        if (i) arr.push_back(',');
        canon::ObjectWriter f(arr);
        f.add_string("article_id", failures[i].article_id);
        f.add_string("error", failures[i].error);
        f.add_string("model_id", failures[i].model_id);
        f.close();
      }
      arr.push_back(']');
      w.add_raw("failures", arr);
    }
    w.add_uint("requested", requested);
    w.add_uint("skipped_existing", skipped_existing);
    w.add_uint("succeeded", succeeded);
    w.close();
    out.push_back('\n');
    return out;
  }
};

struct TranslateOptions {
  int backoff_base_ms = 200;
  std::uint64_t seed = 0;
  int jobs_cap = 0;  // 0: use each backend's max_in_flight as-is
};

namespace detail {

struct ChatOutcome {
  bool ok = false;
  std::string text;
  std::string error;
};

inline ChatOutcome chat_request(const BackendSpec& backend, const std::string& api_key,
                                const Article& article, const TranslateOptions& opts,
                                Rng& rng) {
  const ParsedUrl url = parse_base_url(backend.base_url);
  httplib::Client client(url.origin);
  client.set_connection_timeout(backend.timeout_s, 0);
  client.set_read_timeout(backend.timeout_s, 0);
  client.set_write_timeout(backend.timeout_s, 0);

  std::string body;
  {
    canon::ObjectWriter w(body);
    std::string messages = "[";
    {
      canon::ObjectWriter m(messages);
      m.add_string("content", backend.prompt_instruction + "\n\n" + article.source_text);
      m.add_string("role", "user");
      m.close();
    }
    messages.push_back(']');
    w.add_raw("messages", messages);
    w.add_string("model", backend.model_id);
    w.add_double("temperature", 0.0);
    w.close();
  }

  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= backend.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(backoff_delay_ms(opts.backoff_base_ms, attempt - 1, rng)));
    }
    httplib::Result res =
        client.Post(url.path_prefix + "/chat/completions", headers, body, "application/json");
    if (!res) {
      last_error = "connection failure (" + httplib::to_string(res.error()) + ")";
      continue;  // retryable
    }
    if (res->status == 401 || res->status == 403) {
      throw Error("auth failure for backend '" + backend.model_id + "' (HTTP " +
                  std::to_string(res->status) + ")");
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;  // retryable
    }
    if (res->status != 200) {
      return {false, "", "HTTP " + std::to_string(res->status)};
    }
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("message") ||
        !j["choices"][0]["message"].contains("content") ||
        !j["choices"][0]["message"]["content"].is_string()) {
      return {false, "", "malformed chat completion response"};
    }
    const std::string text = j["choices"][0]["message"]["content"].get<std::string>();
    if (text.empty()) return {false, "", "empty response text"};
    return {true, text, ""};
  }
  return {false, "",
          "failed after " + std::to_string(backend.max_retries + 1) + " attempts: " + last_error};
}

}  // namespace detail

// Requests every missing (article, backend) translation and appends records
// to out_path as they complete. Resumable: existing (article_id, model_id)
// records are skipped. File order is completion order; consumers must key on
// ids, never on order.
inline TranslateReport translate_corpus(const std::vector<Article>& articles,
                                        const std::vector<BackendSpec>& backends,
                                        const std::string& out_path,
                                        const TranslateOptions& opts = {}) {
  if (articles.empty()) throw Error("translate_corpus: no articles");
  if (backends.size() != 2) {
    throw Error("translate_corpus: need exactly 2 backends for dual translations, got " +
                std::to_string(backends.size()));
  }
  for (const auto& b : backends) b.validate();

  std::set<std::string> done;
  if (std::filesystem::exists(out_path)) {
    for (const auto& t : read_jsonl<CandidateTranslation>(out_path)) {
      done.insert(t.article_id + "\x1f" + t.model_id);
    }
  }

  std::ofstream out(out_path, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open for writing: " + out_path);

  TranslateReport report;
  report.requested = articles.size() * backends.size();
  std::mutex sink_mutex;

  for (const auto& backend : backends) {
    std::string api_key;
    if (!backend.api_key_env.empty()) {
      const char* v = std::getenv(backend.api_key_env.c_str());
      if (!v) {
        throw Error("environment variable '" + backend.api_key_env + "' is not set (backend '" +
                    backend.model_id + "')");
      }
      api_key = v;
    }

    std::vector<const Article*> pending;
    for (const auto& a : articles) {
      if (done.count(a.id + "\x1f" + backend.model_id)) {
        ++report.skipped_existing;
      } else {
        pending.push_back(&a);
      }
    }

    const int jobs = opts.jobs_cap > 0 ? std::min(opts.jobs_cap, backend.max_in_flight)
                                       : backend.max_in_flight;
    parallel_run(pending.size(), jobs, [&](std::size_t i) {
      const Article& article = *pending[i];
      Rng rng(derive_seed(opts.seed, "mt-backoff",
                          fnv1a64(article.id + "\x1f" + backend.model_id)));
      const auto outcome = detail::chat_request(backend, api_key, article, opts, rng);
      std::lock_guard<std::mutex> lock(sink_mutex);
      if (outcome.ok) {
        const auto record =
            CandidateTranslation::make(article.id, backend.model_id, outcome.text);
        append_jsonl_line(out, record);
        out.flush();
        ++report.succeeded;
      } else {
        report.failures.push_back({article.id, backend.model_id, outcome.error});
      }
    });
  }

  std::sort(report.failures.begin(), report.failures.end(),
            [](const TranslateFailure& a, const TranslateFailure& b) {
              return std::tie(a.article_id, a.model_id) < std::tie(b.article_id, b.model_id);
            });
  return report;
}

}  // namespace prefpipe
