#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/jsonl.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/types.hpp"
#include "prefpipe/unicode.hpp"

namespace prefpipe {

struct LangIdConfig {
  int ngram_min = 1;
  int ngram_max = 3;
  std::uint32_t bucket_count = 1u << 18;
  double smoothing_alpha = 1.0;

  void validate() const {
    if (ngram_min < 1 || ngram_min > ngram_max || ngram_max > 5) {
      throw Error("langid: need 1 <= ngram_min <= ngram_max <= 5");
    }
    if (bucket_count == 0 || (bucket_count & (bucket_count - 1)) != 0) {
      throw Error("langid: bucket_count must be a power of two");
    }
    if (!(smoothing_alpha > 0.0)) throw Error("langid: smoothing_alpha must be > 0");
  }
};

struct LangVerdict {
  std::string label;
  double confidence = 0.0;  // posterior probability of the winning label
};

// Multinomial Naive Bayes over hashed character n-grams. Grams are substrings
// of n consecutive Unicode scalars, hashed with FNV-1a 64 over their UTF-8
// bytes and masked to bucket_count-1.
struct LangProfile {
  std::vector<std::string> labels;  // sorted; index aligns with the vectors below
  int ngram_min = 1;
  int ngram_max = 3;
  std::uint32_t bucket_count = 0;
  double smoothing_alpha = 1.0;
  std::vector<double> log_priors;
  std::vector<std::vector<double>> log_likelihoods;  // [label][bucket], dense
  std::vector<double> zero_count_loglik;             // per label, value of untouched buckets

  std::size_t label_index(std::string_view label) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) {
      throw Error("langid: unknown label '" + std::string(label) + "'");
    }
    return static_cast<std::size_t>(it - labels.begin());
  }
};

namespace detail {

template <typename Fn>
void for_each_gram_bucket(std::string_view text, int ngram_min, int ngram_max,
                          std::uint32_t bucket_count, Fn&& fn) {
  const auto offsets = scalar_offsets(text);
  const std::size_t n_scalars = offsets.size() - 1;
  const std::uint32_t mask = bucket_count - 1;
  for (int n = ngram_min; n <= ngram_max; ++n) {
    if (n_scalars < static_cast<std::size_t>(n)) continue;
    for (std::size_t i = 0; i + n <= n_scalars; ++i) {
      const std::string_view gram =
          text.substr(offsets[i], offsets[i + n] - offsets[i]);
      fn(static_cast<std::uint32_t>(fnv1a64(gram)) & mask);
    }
  }
}

}  // namespace detail

inline LangProfile train_langid(const std::vector<LabeledDoc>& corpus, const LangIdConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw Error("train_langid: empty corpus");

  LangProfile p;
  p.ngram_min = cfg.ngram_min;
  p.ngram_max = cfg.ngram_max;
  p.bucket_count = cfg.bucket_count;
  p.smoothing_alpha = cfg.smoothing_alpha;

  for (const auto& doc : corpus) p.labels.push_back(doc.label);
  std::sort(p.labels.begin(), p.labels.end());
  p.labels.erase(std::unique(p.labels.begin(), p.labels.end()), p.labels.end());
  if (p.labels.size() < 2) throw Error("train_langid: need at least 2 distinct labels");

  const std::size_t n_labels = p.labels.size();
  std::vector<std::vector<std::uint64_t>> counts(
      n_labels, std::vector<std::uint64_t>(cfg.bucket_count, 0));
  std::vector<std::uint64_t> gram_totals(n_labels, 0);
  std::vector<std::uint64_t> doc_counts(n_labels, 0);

  for (const auto& doc : corpus) {
    const std::size_t li = p.label_index(doc.label);
    ++doc_counts[li];
    detail::for_each_gram_bucket(doc.text, cfg.ngram_min, cfg.ngram_max, cfg.bucket_count,
                                 [&](std::uint32_t b) {
                                   ++counts[li][b];
                                   ++gram_totals[li];
                                 });
  }

  const double total_docs = static_cast<double>(corpus.size());
  p.log_priors.resize(n_labels);
  p.log_likelihoods.resize(n_labels);
  p.zero_count_loglik.resize(n_labels);
  for (std::size_t li = 0; li < n_labels; ++li) {
    p.log_priors[li] = std::log(static_cast<double>(doc_counts[li]) / total_docs);
    const double denom = std::log(static_cast<double>(gram_totals[li]) +
                                  cfg.smoothing_alpha * cfg.bucket_count);
    p.zero_count_loglik[li] = std::log(cfg.smoothing_alpha) - denom;
    auto& ll = p.log_likelihoods[li];
    ll.resize(cfg.bucket_count);
    for (std::uint32_t b = 0; b < cfg.bucket_count; ++b) {
      ll[b] = counts[li][b] == 0
                  ? p.zero_count_loglik[li]
                  : std::log(static_cast<double>(counts[li][b]) + cfg.smoothing_alpha) - denom;
    }
  }
  return p;
}

// Unnormalized log posterior per label, in label order.
inline std::vector<double> langid_log_scores(const LangProfile& p, std::string_view text) {
  std::vector<double> scores(p.log_priors);
  detail::for_each_gram_bucket(text, p.ngram_min, p.ngram_max, p.bucket_count,
                               [&](std::uint32_t b) {
                                 for (std::size_t li = 0; li < scores.size(); ++li) {
                                   scores[li] += p.log_likelihoods[li][b];
                                 }
                               });
  return scores;
}

// Normalized posteriors, in label order. Sums to 1 within 1e-9.
inline std::vector<double> langid_posteriors(const LangProfile& p, std::string_view text) {
  std::vector<double> scores = langid_log_scores(p, text);
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double& s : scores) {
    s = std::exp(s - mx);
    sum += s;
  }
  for (double& s : scores) s /= sum;
  return scores;
}

// Argmax-posterior label; ties broken by lexicographic label order (labels
// are stored sorted, so the first maximum wins).
inline LangVerdict identify(const LangProfile& p, std::string_view text) {
  if (trim_whitespace(text).empty()) {
    throw IndeterminateText("identify: text is empty after whitespace trim");
  }
  const std::vector<double> post = langid_posteriors(p, text);
  std::size_t best = 0;
  for (std::size_t li = 1; li < post.size(); ++li) {
    if (post[li] > post[best]) best = li;
  }
  return LangVerdict{p.labels[best], post[best]};
}

// --- profile (de)serialization: a single canonical JSON document ---

inline std::string profile_to_json(const LangProfile& p) {
  std::string out;
  canon::ObjectWriter w(out);
  w.add_uint("bucket_count", p.bucket_count);
  {
    std::string arr = "[";
    for (std::size_t i = 0; i < p.labels.size(); ++i) {
      if (i) arr.push_back(',');
      canon::append_escaped(arr, p.labels[i]);
    }
    arr.push_back(']');
    w.add_raw("labels", arr);
  }
  {
    std::string obj;
    canon::ObjectWriter lw(obj);
    for (std::size_t li = 0; li < p.labels.size(); ++li) {
      std::string entry;
      canon::ObjectWriter ew(entry);
      std::string buckets = "{";
      bool first = true;
      for (std::uint32_t b = 0; b < p.bucket_count; ++b) {
        if (p.log_likelihoods[li][b] == p.zero_count_loglik[li]) continue;
        if (!first) buckets.push_back(',');
        first = false;
        buckets.push_back('"');
        buckets += std::to_string(b);
        buckets += "\":";
        buckets += canon::format_double(p.log_likelihoods[li][b]);
      }
      buckets.push_back('}');
      ew.add_raw("buckets", buckets);
      ew.add_double("default", p.zero_count_loglik[li]);
      ew.close();
      lw.add_raw(p.labels[li], entry);
    }
    lw.close();
    w.add_raw("log_likelihoods", obj);
  }
  {
    std::string obj;
    canon::ObjectWriter pw(obj);
    for (std::size_t li = 0; li < p.labels.size(); ++li) {
      pw.add_double(p.labels[li], p.log_priors[li]);
    }
    pw.close();
    w.add_raw("log_priors", obj);
  }
  w.add_int("ngram_max", p.ngram_max);
  w.add_int("ngram_min", p.ngram_min);
  w.add_double("smoothing_alpha", p.smoothing_alpha);
  w.close();
  out.push_back('\n');
  return out;
}

inline LangProfile profile_from_json(const json& j) {
  LangProfile p;
  p.bucket_count = static_cast<std::uint32_t>(detail::get_uint(j, "bucket_count", "LangProfile"));
  p.ngram_min = static_cast<int>(detail::get_uint(j, "ngram_min", "LangProfile"));
  p.ngram_max = static_cast<int>(detail::get_uint(j, "ngram_max", "LangProfile"));
  p.smoothing_alpha = detail::get_double(j, "smoothing_alpha", "LangProfile");
  const json& labels = detail::require_field(j, "labels", "LangProfile");
  for (const auto& l : labels) p.labels.push_back(l.get<std::string>());
  if (!std::is_sorted(p.labels.begin(), p.labels.end())) {
    throw Error("LangProfile: labels must be sorted");
  }
  const json& priors = detail::require_field(j, "log_priors", "LangProfile");
  const json& liks = detail::require_field(j, "log_likelihoods", "LangProfile");
  for (const auto& label : p.labels) {
    p.log_priors.push_back(priors.at(label).get<double>());
    const json& entry = liks.at(label);
    const double dflt = entry.at("default").get<double>();
    p.zero_count_loglik.push_back(dflt);
    std::vector<double> dense(p.bucket_count, dflt);
    for (const auto& [key, value] : entry.at("buckets").items()) {
      const std::uint64_t b = std::stoull(key);
      if (b >= p.bucket_count) throw Error("LangProfile: bucket index out of range");
      dense[b] = value.get<double>();
    }
    p.log_likelihoods.push_back(std::move(dense));
  }
  return p;
}

inline void save_profile(const std::string& path, const LangProfile& p) {
  write_text_file(path, profile_to_json(p));
}

inline LangProfile load_profile(const std::string& path) {
  return profile_from_json(parse_json_file(path));
}

}  // namespace prefpipe
