#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefpipe/error.hpp"
#include "prefpipe/types.hpp"
#include "prefpipe/unicode.hpp"

namespace prefpipe {

// Deterministic stand-in for a reference-less neural quality scorer. Exists
// so pipeline logic and thresholds are testable with known arithmetic:
// harmonic mean of a length-ratio fitness and a repetition penalty.
inline double proxy_score(std::string_view source, std::string_view translation) {
  const std::uint64_t src_len = scalar_count(source);
  if (src_len == 0) throw Error("proxy_score: empty source");
  const std::uint64_t tr_len = scalar_count(translation);

  const double ratio =
      tr_len > 0 ? std::min(static_cast<double>(tr_len) / static_cast<double>(src_len),
                            static_cast<double>(src_len) / static_cast<double>(tr_len))
                 : 0.0;

  // Fraction of the translation's character 3-gram occurrences whose gram
  // appears more than once in the translation. No 3-grams means no penalty.
  double repetition_fraction = 0.0;
  if (tr_len >= 3) {
    const auto offsets = scalar_offsets(translation);
    const std::size_t total = offsets.size() - 3;  // offsets has n_scalars+1 entries
    std::unordered_map<std::string_view, std::uint32_t> gram_counts;
    gram_counts.reserve(total * 2);
    for (std::size_t i = 0; i < total; ++i) {
      ++gram_counts[translation.substr(offsets[i], offsets[i + 3] - offsets[i])];
    }
    std::uint64_t repeated = 0;
    for (const auto& [gram, count] : gram_counts) {
      if (count > 1) repeated += count;
    }
    repetition_fraction = static_cast<double>(repeated) / static_cast<double>(total);
  }
  const double coverage = 1.0 - repetition_fraction;

  const double denom = ratio + coverage;
  return denom > 0.0 ? 2.0 * ratio * coverage / denom : 0.0;
}

// One unit of scoring work; ids ride along so results are directly usable as
// QualityScore records.
struct ScoreItem {
  std::string article_id;
  std::string model_id;
  std::string source;
  std::string translation;
};

// Batch scoring function: one score per item, order-preserving. Backed by the
// proxy scorer, an HTTP endpoint, or a subprocess.
using BatchScoreFn = std::function<std::vector<double>(const std::vector<ScoreItem>&)>;

inline BatchScoreFn proxy_batch_scorer() {
  return [](const std::vector<ScoreItem>& items) {
    std::vector<double> scores;
    scores.reserve(items.size());
    for (const auto& it : items) scores.push_back(proxy_score(it.source, it.translation));
    return scores;
  };
}

inline std::vector<QualityScore> score_items(const BatchScoreFn& fn,
                                             const std::vector<ScoreItem>& items) {
  const std::vector<double> scores = fn(items);
  if (scores.size() != items.size()) {
    throw Error("scorer returned " + std::to_string(scores.size()) + " scores for " +
                std::to_string(items.size()) + " items");
  }
  std::vector<QualityScore> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    QualityScore q{items[i].article_id, items[i].model_id, scores[i]};
    q.validate();
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace prefpipe
