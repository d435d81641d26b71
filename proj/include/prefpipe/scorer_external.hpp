#pragma once

// External quality scorers: an HTTP batch endpoint and a line-delimited
// subprocess, both order-preserving. The wire formats are pinned here:
//   HTTP:       POST {base_url}/score
//               request  {"items":[{"source":"...","translation":"..."}]}
//               response {"scores":[0.87, ...]}  one score per item, in order
//   subprocess: one {"source":"...","translation":"..."} per stdin line,
//               one {"score":0.87} per stdout line, strict 1:1 ordering.
// Scores outside [0,1] are protocol errors naming the offending item.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "prefpipe/http.hpp"
#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/scorer.hpp"
#include "prefpipe/util.hpp"

extern char** environ;

namespace prefpipe {

struct ExternalScorerOptions {
  int timeout_s = 60;       // per batch request
  int max_retries = 3;      // additional attempts after the first
  int backoff_base_ms = 100;
  int max_in_flight = 4;
  std::size_t chunk_size = 32;  // items per HTTP request
  std::uint64_t seed = 0;       // backoff jitter stream
};

struct ScorerStats {
  std::atomic<int> requests{0};
  std::atomic<int> retries{0};
};

namespace detail {

inline bool retryable_status(int status) {
  return status == 429 || status >= 500;
}

inline std::vector<double> score_chunk_http(const ParsedUrl& url, const std::string& body,
                                            std::size_t n_items, std::size_t item_offset,
                                            const ExternalScorerOptions& opts, Rng& rng,
                                            ScorerStats* stats) {
  httplib::Client client(url.origin);
  client.set_connection_timeout(opts.timeout_s, 0);
  client.set_read_timeout(opts.timeout_s, 0);
  client.set_write_timeout(opts.timeout_s, 0);
  const std::string path = url.path_prefix + "/score";

  std::string last_error;
  for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
    if (attempt > 0) {
      if (stats) stats->retries.fetch_add(1);
      std::this_thread::sleep_for(
          std::chrono::milliseconds(backoff_delay_ms(opts.backoff_base_ms, attempt - 1, rng)));
    }
    if (stats) stats->requests.fetch_add(1);
    httplib::Result res = client.Post(path, body, "application/json");
    if (!res) {
      last_error = "connection failure (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status != 200) {
      if (retryable_status(res->status)) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      throw Error("scorer endpoint returned HTTP " + std::to_string(res->status));
    }
    json j = json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("scores") || !j["scores"].is_array()) {
      throw Error("scorer protocol error: response is not {\"scores\": [...]}");
    }
    const json& scores = j["scores"];
    if (scores.size() != n_items) {
      throw Error("scorer protocol error: expected " + std::to_string(n_items) +
                  " scores, got " + std::to_string(scores.size()));
    }
    std::vector<double> out;
    out.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
      if (!scores[i].is_number()) {
        throw Error("scorer protocol error: non-numeric score for item " +
                    std::to_string(item_offset + i));
      }
      const double s = scores[i].get<double>();
      if (s < 0.0 || s > 1.0) {
        throw Error("scorer protocol error: score " + canon::format_double(s) +
                    " outside [0,1] for item " + std::to_string(item_offset + i));
      }
      out.push_back(s);
    }
    return out;
  }
  throw Error("scorer endpoint unreachable after " + std::to_string(opts.max_retries + 1) +
              " attempts: " + last_error);
}

}  // namespace detail

// Scores items against an HTTP endpoint. Items are issued in chunks, up to
// max_in_flight chunks concurrently; results come back in input order.
inline std::vector<QualityScore> external_score_batch(const std::string& base_url,
                                                      const std::vector<ScoreItem>& items,
                                                      const ExternalScorerOptions& opts = {},
                                                      ScorerStats* stats = nullptr) {
  const ParsedUrl url = parse_base_url(base_url);
  if (items.empty()) return {};
  const std::size_t chunk = std::max<std::size_t>(1, opts.chunk_size);
  const std::size_t n_chunks = (items.size() + chunk - 1) / chunk;
  std::vector<std::vector<double>> chunk_scores(n_chunks);

  parallel_run(n_chunks, opts.max_in_flight, [&](std::size_t ci) {
    const std::size_t begin = ci * chunk;
    const std::size_t end = std::min(items.size(), begin + chunk);
    std::string body = "{\"items\":[";
    for (std::size_t i = begin; i < end; ++i) {
      if (i > begin) body.push_back(',');
      canon::ObjectWriter w(body);
      w.add_string("source", items[i].source);
      w.add_string("translation", items[i].translation);
      w.close();
    }
    body += "]}";
    Rng rng(derive_seed(opts.seed, "scorer-chunk", ci));
    chunk_scores[ci] =
        detail::score_chunk_http(url, body, end - begin, begin, opts, rng, stats);
  });

  std::vector<double> flat;
  flat.reserve(items.size());
  for (auto& cs : chunk_scores) flat.insert(flat.end(), cs.begin(), cs.end());
  std::vector<QualityScore> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.push_back(QualityScore{items[i].article_id, items[i].model_id, flat[i]});
  }
  return out;
}

inline BatchScoreFn http_batch_scorer(std::string base_url, ExternalScorerOptions opts = {}) {
  return [base_url = std::move(base_url), opts](const std::vector<ScoreItem>& items) {
    std::vector<double> scores;
    scores.reserve(items.size());
    for (auto& q : external_score_batch(base_url, items, opts)) scores.push_back(q.score);
    return scores;
  };
}

// Line-delimited scorer subprocess. Requests are written and answered in
// lockstep, which keeps the 1:1 ordering contract trivially true and avoids
// pipe deadlocks.
class SubprocessScorer {
public:
  explicit SubprocessScorer(const std::vector<std::string>& argv) {
    if (argv.empty()) throw Error("SubprocessScorer: empty argv");
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) {
      throw Error("SubprocessScorer: pipe() failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], 0);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], 1);
    posix_spawn_file_actions_addclose(&actions, to_child[1]);
    posix_spawn_file_actions_addclose(&actions, from_child[0]);

    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);

    const int rc = posix_spawnp(&pid_, cargv[0], &actions, nullptr, cargv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    close(to_child[0]);
    close(from_child[1]);
    if (rc != 0) {
      close(to_child[1]);
      close(from_child[0]);
      throw Error("SubprocessScorer: cannot spawn '" + argv[0] + "'");
    }
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  SubprocessScorer(const SubprocessScorer&) = delete;
  SubprocessScorer& operator=(const SubprocessScorer&) = delete;

  ~SubprocessScorer() {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  double score_one(const ScoreItem& item, std::size_t index) {
    std::string line;
    {
      canon::ObjectWriter w(line);
      w.add_string("source", item.source);
      w.add_string("translation", item.translation);
      w.close();
    }
    line.push_back('\n');
    write_all(line);
    const std::string reply = read_line();
    json j = json::parse(reply, nullptr, false);
    if (j.is_discarded() || !j.contains("score") || !j["score"].is_number()) {
      throw Error("scorer subprocess protocol error: expected {\"score\": x}, got '" + reply +
                  "' for item " + std::to_string(index));
    }
    const double s = j["score"].get<double>();
    if (s < 0.0 || s > 1.0) {
      throw Error("scorer subprocess protocol error: score " + canon::format_double(s) +
                  " outside [0,1] for item " + std::to_string(index));
    }
    return s;
  }

  std::vector<double> operator()(const std::vector<ScoreItem>& items) {
    std::vector<double> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) out.push_back(score_one(items[i], i));
    return out;
  }

private:
  void write_all(const std::string& data) {
    std::size_t written = 0;
    while (written < data.size()) {
      const ssize_t n = write(write_fd_, data.data() + written, data.size() - written);
      if (n <= 0) throw Error("scorer subprocess: stdin write failed (process exited?)");
      written += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    std::string line;
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = read(read_fd_, chunk, sizeof(chunk));
      if (n <= 0) throw Error("scorer subprocess closed stdout before replying");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::string buffer_;
};

inline BatchScoreFn subprocess_batch_scorer(std::vector<std::string> argv) {
  auto proc = std::make_shared<SubprocessScorer>(argv);
  return [proc](const std::vector<ScoreItem>& items) { return (*proc)(items); };
}

}  // namespace prefpipe
