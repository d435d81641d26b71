#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/langid.hpp"
#include "prefpipe/rng.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

struct CurationConfig {
  std::string target_language = "sl";
  double truncation_ratio = 0.5;
  double score_delta_threshold = 0.05;
  double formatting_fraction = 0.20;
  std::vector<std::string> prefix_list = {"Slovenski prevod:", "Slovene translation:"};
  double min_confidence = 0.5;
  std::uint64_t seed = 0;
  std::string prompt_template = "Prevedi naslednje angleško besedilo v slovenščino.\n\n{source}";
  std::uint64_t val_count = 0;

  void validate() const {
    if (!(truncation_ratio > 0.0 && truncation_ratio < 1.0)) {
      throw Error("curation: truncation_ratio must be in (0,1)");
    }
    if (!(score_delta_threshold >= 0.0 && score_delta_threshold < 1.0)) {
      throw Error("curation: score_delta_threshold must be in [0,1)");
    }
    if (!(formatting_fraction >= 0.0 && formatting_fraction < 1.0)) {
      throw Error("curation: formatting_fraction must be in [0,1)");
    }
    if (target_language.empty()) throw Error("curation: empty target_language");
    for (const auto& p : prefix_list) {
      if (p.empty()) throw Error("curation: empty string in prefix_list");
    }
  }
};

// Threshold comparisons are strict at decimal intent ("less than 50%",
// "greater than 0.05"). Decimal thresholds are not exactly representable in
// binary, so equality is padded by a tiny epsilon; without it |0.80 - 0.75|
// evaluates greater than 0.05.
namespace cmp {
inline bool strictly_less(double value, double limit) {
  return value < limit - 1e-9 * std::max(1.0, std::fabs(limit));
}
inline bool strictly_greater(double value, double limit) {
  return value > limit + 1e-9 * std::max(1.0, std::fabs(limit));
}
}  // namespace cmp

inline bool is_truncated(std::uint64_t translation_chars, std::uint64_t source_chars,
                         double truncation_ratio) {
  return cmp::strictly_less(static_cast<double>(translation_chars),
                            truncation_ratio * static_cast<double>(source_chars));
}

// Language verdict source: built-in profile or a precomputed sidecar.
// nullopt means indeterminate (empty/whitespace-only text).
using VerdictFn = std::function<std::optional<LangVerdict>(const CandidateTranslation&)>;

inline VerdictFn profile_verdict_fn(const LangProfile& profile) {
  return [&profile](const CandidateTranslation& t) -> std::optional<LangVerdict> {
    try {
      return identify(profile, t.text);
    } catch (const IndeterminateText&) {
      return std::nullopt;
    }
  };
}

inline VerdictFn sidecar_verdict_fn(const std::vector<SidecarVerdict>& verdicts) {
  auto map = std::make_shared<std::unordered_map<std::string, LangVerdict>>();
  for (const auto& v : verdicts) {
    (*map)[v.article_id + "\x1f" + v.model_id] = LangVerdict{v.label, v.confidence};
  }
  return [map](const CandidateTranslation& t) -> std::optional<LangVerdict> {
    if (trim_whitespace(t.text).empty()) return std::nullopt;
    auto it = map->find(t.article_id + "\x1f" + t.model_id);
    if (it == map->end()) {
      throw Error("no sidecar language verdict for (" + t.article_id + ", " + t.model_id + ")");
    }
    return it->second;
  };
}

// Score source for the delta stage. Map-backed lookups throw on a missing
// entry; proxy scoring computes on demand.
using ScoreFn = std::function<double(const Article&, const CandidateTranslation&)>;

enum class VerdictOutcome {
  pair_language,
  pair_truncation,
  pair_score_delta,
  dropped_both_bad,
  dropped_below_threshold,
  dropped_indeterminate,
};

inline std::string_view to_string(VerdictOutcome o) {
  switch (o) {
    case VerdictOutcome::pair_language: return "pair_language";
    case VerdictOutcome::pair_truncation: return "pair_truncation";
    case VerdictOutcome::pair_score_delta: return "pair_score_delta";
    case VerdictOutcome::dropped_both_bad: return "dropped_both_bad";
    case VerdictOutcome::dropped_below_threshold: return "dropped_below_threshold";
    default: return "dropped_indeterminate";
  }
}

// Audit trail: every input article yields exactly one PairVerdict.
struct PairVerdict {
  std::string article_id;
  VerdictOutcome outcome;
  std::string detail;

  static constexpr const char* kind = "PairVerdict";

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("article_id", article_id);
    w.add_string("detail", detail);
    w.add_string("outcome", to_string(outcome));
    w.close();
  }
};

namespace stage {

enum class SideLanguage { correct, wrong, indeterminate };

inline SideLanguage judge_language(const std::optional<LangVerdict>& v,
                                   const CurationConfig& cfg) {
  if (!v) return SideLanguage::indeterminate;
  const bool ok = v->label == cfg.target_language && v->confidence >= cfg.min_confidence;
  return ok ? SideLanguage::correct : SideLanguage::wrong;
}

enum class LanguageOutcome { pair, both_correct, dropped_both_bad, dropped_indeterminate };

struct LanguageDecision {
  LanguageOutcome outcome;
  int chosen = -1;  // 0 or 1 when outcome == pair
  std::string detail;
};

inline std::string describe_verdict(const std::optional<LangVerdict>& v) {
  if (!v) return "indeterminate";
  return v->label + "@" + canon::format_double(v->confidence);
}

// Exactly-one-correct forms a pair; low-confidence and indeterminate sides
// count as not-correct, so they can serve as the rejected side.
inline LanguageDecision classify_language_pair(const CandidateTranslation& t1,
                                               const CandidateTranslation& t2,
                                               const VerdictFn& verdict_fn,
                                               const CurationConfig& cfg) {
  if (t1.article_id != t2.article_id) {
    throw Error("classify_language_pair: mismatched article ids '" + t1.article_id + "' vs '" +
                t2.article_id + "'");
  }
  if (t1.model_id == t2.model_id) {
    throw Error("classify_language_pair: both translations from model '" + t1.model_id + "'");
  }
  const std::optional<LangVerdict> v1 = verdict_fn(t1);
  const std::optional<LangVerdict> v2 = verdict_fn(t2);
  const SideLanguage s1 = judge_language(v1, cfg);
  const SideLanguage s2 = judge_language(v2, cfg);
  const std::string detail = describe_verdict(v1) + "/" + describe_verdict(v2);

  const bool c1 = s1 == SideLanguage::correct;
  const bool c2 = s2 == SideLanguage::correct;
  if (c1 && c2) return {LanguageOutcome::both_correct, -1, detail};
  if (c1 != c2) return {LanguageOutcome::pair, c1 ? 0 : 1, detail};
  if (s1 == SideLanguage::indeterminate && s2 == SideLanguage::indeterminate) {
    return {LanguageOutcome::dropped_indeterminate, -1, detail};
  }
  return {LanguageOutcome::dropped_both_bad, -1, detail};
}

enum class TruncationOutcome { pair, both_complete, dropped_both_bad };

struct TruncationDecision {
  TruncationOutcome outcome;
  int chosen = -1;  // the complete side
  std::string detail;
};

inline TruncationDecision classify_truncation_pair(const Article& source,
                                                   const CandidateTranslation& t1,
                                                   const CandidateTranslation& t2,
                                                   const CurationConfig& cfg) {
  const bool tr1 = is_truncated(t1.char_count, source.source_char_count, cfg.truncation_ratio);
  const bool tr2 = is_truncated(t2.char_count, source.source_char_count, cfg.truncation_ratio);
  const std::string detail = "chars " + std::to_string(t1.char_count) + "/" +
                             std::to_string(t2.char_count) + " source " +
                             std::to_string(source.source_char_count);
  if (tr1 && tr2) return {TruncationOutcome::dropped_both_bad, -1, detail};
  if (!tr1 && !tr2) return {TruncationOutcome::both_complete, -1, detail};
  return {TruncationOutcome::pair, tr1 ? 1 : 0, detail};
}

enum class ScoreOutcome { pair, dropped_below_threshold };

struct ScoreDecision {
  ScoreOutcome outcome;
  int chosen = -1;  // the higher-scored side
  std::string detail;
};

inline ScoreDecision classify_score_pair(double score1, double score2,
                                         const CurationConfig& cfg) {
  const std::string detail =
      "scores " + canon::format_double(score1) + "/" + canon::format_double(score2);
  if (cmp::strictly_greater(std::fabs(score1 - score2), cfg.score_delta_threshold)) {
    return {ScoreOutcome::pair, score1 > score2 ? 0 : 1, detail};
  }
  return {ScoreOutcome::dropped_below_threshold, -1, detail};
}

}  // namespace stage

inline std::string build_prompt(const CurationConfig& cfg, const Article& article) {
  const std::string placeholder = "{source}";
  if (cfg.prompt_template.find(placeholder) == std::string::npos) {
    throw Error("prompt template lacks {source} placeholder");
  }
  std::string prompt = cfg.prompt_template;
  std::size_t pos = 0;
  while ((pos = prompt.find(placeholder, pos)) != std::string::npos) {
    prompt.replace(pos, placeholder.size(), article.source_text);
    pos += article.source_text.size();
  }
  return prompt;
}

// A clean translation usable as the chosen side of a synthetic formatting
// pair: chosen sides of score_delta pairs plus the better side of
// below-threshold articles, one per article.
struct CleanItem {
  std::string article_id;
  std::string prompt;
  std::string text;
};

inline bool starts_with_any_prefix(std::string_view text,
                                   const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (text.starts_with(p)) return true;
  }
  return false;
}

// Samples `count` clean items (without replacement while the pool lasts, then
// with replacement) and prepends a uniformly drawn prefix to build the
// rejected side. Items whose text already starts with a prefix are excluded.
inline std::vector<PreferencePair> make_formatting_pairs(
    const std::vector<CleanItem>& clean_pool, std::uint64_t count,
    const std::vector<std::string>& prefixes, Rng& rng) {
  if (prefixes.empty()) throw Error("make_formatting_pairs: empty prefix list");
  std::vector<CleanItem> pool;
  pool.reserve(clean_pool.size());
  for (const auto& item : clean_pool) {
    if (!starts_with_any_prefix(item.text, prefixes)) pool.push_back(item);
  }
  if (count == 0) return {};
  if (pool.empty()) {
    throw Error("make_formatting_pairs: clean pool is empty, cannot make " +
                std::to_string(count) + " pairs");
  }

  std::vector<PreferencePair> out;
  out.reserve(count);
  const std::uint64_t n = pool.size();
  for (std::uint64_t k = 0; k < count; ++k) {
    const CleanItem* item;
    if (k < n) {
      const std::uint64_t j = k + rng.next_below(n - k);
      std::swap(pool[k], pool[j]);
      item = &pool[k];
    } else {
      item = &pool[rng.next_below(n)];
    }
    const std::string& prefix = prefixes[rng.next_below(prefixes.size())];
    PreferencePair p;
    p.id = item->article_id + ":formatting:" + std::to_string(k);
    p.prompt = item->prompt;
    p.chosen = item->text;
    p.rejected = prefix + "\n" + item->text;
    p.category = PairCategory::formatting;
    p.validate();
    out.push_back(std::move(p));
  }
  return out;
}

struct CategoryPools {
  std::vector<PreferencePair> language;
  std::vector<PreferencePair> truncation;
  std::vector<PreferencePair> score_delta;

  std::uint64_t n_other() const {
    return language.size() + truncation.size() + score_delta.size();
  }
};

struct DatasetManifest {
  std::uint64_t n_language = 0;
  std::uint64_t n_truncation = 0;
  std::uint64_t n_score_delta = 0;
  std::uint64_t n_formatting = 0;
  std::uint64_t n_other = 0;
  std::uint64_t total_pairs = 0;
  double formatting_target_fraction = 0.0;
  double achieved_formatting_fraction = 0.0;
  std::uint64_t train_count = 0;
  std::uint64_t val_count = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> verdict_counts;

  std::string to_json() const {
    std::string out;
    canon::ObjectWriter w(out);
    w.add_double("achieved_formatting_fraction", achieved_formatting_fraction);
    {
      std::string cc;
      canon::ObjectWriter c(cc);
      c.add_uint("formatting", n_formatting);
      c.add_uint("language", n_language);
      c.add_uint("score_delta", n_score_delta);
      c.add_uint("truncation", n_truncation);
      c.close();
      w.add_raw("category_counts", cc);
    }
    w.add_double("formatting_target_fraction", formatting_target_fraction);
    w.add_uint("n_other", n_other);
    w.add_uint("seed", seed);
    w.add_uint("total_pairs", total_pairs);
    w.add_uint("train_count", train_count);
    w.add_uint("val_count", val_count);
    {
      std::string vc;
      canon::ObjectWriter c(vc);
      for (const auto& [k, v] : verdict_counts) c.add_uint(k, v);
      c.close();
      w.add_raw("verdict_counts", vc);
    }
    w.close();
    out.push_back('\n');
    return out;
  }
};

struct AssembledDataset {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> val;
  DatasetManifest manifest;
};

// Formatting count F solves F/(F + n_other) = formatting_fraction, rounded to
// the nearest integer, which lands the achieved fraction within one pair of
// the target.
inline std::uint64_t solve_formatting_count(std::uint64_t n_other, double fraction) {
  return static_cast<std::uint64_t>(
      std::llround(fraction * static_cast<double>(n_other) / (1.0 - fraction)));
}

inline AssembledDataset assemble_dataset(const CategoryPools& pools,
                                         const std::vector<CleanItem>& clean_pool,
                                         const CurationConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::uint64_t n_other = pools.n_other();
  if (n_other == 0) throw Error("assemble_dataset: no non-formatting pairs");

  const std::uint64_t formatting_count = solve_formatting_count(n_other, cfg.formatting_fraction);
  std::vector<PreferencePair> formatting;
  if (formatting_count > 0) {
    try {
      formatting = make_formatting_pairs(clean_pool, formatting_count, cfg.prefix_list, rng);
    } catch (const Error& e) {
      throw Error("assemble_dataset: formatting fraction " +
                  canon::format_double(cfg.formatting_fraction) +
                  " unattainable (max attainable formatting count 0): " + e.what());
    }
  }

  std::vector<PreferencePair> all;
  all.reserve(n_other + formatting.size());
  const std::vector<PreferencePair>& formatting_ref = formatting;
  for (const auto* pool :
       {&pools.language, &pools.truncation, &pools.score_delta, &formatting_ref}) {
    all.insert(all.end(), pool->begin(), pool->end());
  }
  // Sort by id (ids start with the article id) so that however the stage
  // results were produced, the shuffle input is fixed.
  std::sort(all.begin(), all.end(),
            [](const PreferencePair& a, const PreferencePair& b) { return a.id < b.id; });
  const std::uint64_t n = all.size();
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t j = i + rng.next_below(n - i);
    std::swap(all[i], all[j]);
  }

  if (cfg.val_count >= n) {
    throw Error("assemble_dataset: val_count " + std::to_string(cfg.val_count) +
                " leaves no training pairs (total " + std::to_string(n) + ")");
  }

  AssembledDataset out;
  out.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(cfg.val_count));
  out.val.assign(all.end() - static_cast<std::ptrdiff_t>(cfg.val_count), all.end());

  DatasetManifest& m = out.manifest;
  m.n_language = pools.language.size();
  m.n_truncation = pools.truncation.size();
  m.n_score_delta = pools.score_delta.size();
  m.n_formatting = formatting.size();
  m.n_other = n_other;
  m.total_pairs = n;
  m.formatting_target_fraction = cfg.formatting_fraction;
  m.achieved_formatting_fraction =
      static_cast<double>(m.n_formatting) / static_cast<double>(m.total_pairs);
  m.train_count = out.train.size();
  m.val_count = out.val.size();
  m.seed = cfg.seed;
  return out;
}

struct CurationRun {
  CategoryPools pools;
  std::vector<CleanItem> clean_pool;
  std::vector<PairVerdict> verdicts;  // one per article, sorted by article id
  AssembledDataset dataset;
};

// Full curation pass: language -> truncation -> score delta, one pair per
// article at most, then synthetic formatting pairs and mixture assembly.
inline CurationRun curate_corpus(const std::vector<Article>& articles,
                                 const std::vector<CandidateTranslation>& translations,
                                 const VerdictFn& verdict_fn, const ScoreFn& score_fn,
                                 const CurationConfig& cfg) {
  cfg.validate();

  std::unordered_map<std::string, std::vector<const CandidateTranslation*>> by_article;
  std::unordered_map<std::string, const Article*> article_index;
  for (const auto& a : articles) article_index[a.id] = &a;
  for (const auto& t : translations) {
    if (!article_index.count(t.article_id)) {
      throw Error("translation references unknown article '" + t.article_id + "'");
    }
    by_article[t.article_id].push_back(&t);
  }

  std::vector<const Article*> ordered;
  ordered.reserve(articles.size());
  for (const auto& a : articles) ordered.push_back(&a);
  std::sort(ordered.begin(), ordered.end(),
            [](const Article* a, const Article* b) { return a->id < b->id; });

  CurationRun run;
  for (const Article* article : ordered) {
    auto it = by_article.find(article->id);
    const std::size_t n_found = it == by_article.end() ? 0 : it->second.size();
    if (n_found != 2) {
      throw Error("article '" + article->id + "' has " + std::to_string(n_found) +
                  " translations, expected 2 (dual translations)");
    }
    std::vector<const CandidateTranslation*>& ts = it->second;
    std::sort(ts.begin(), ts.end(), [](const CandidateTranslation* a,
                                       const CandidateTranslation* b) {
      return a->model_id < b->model_id;
    });
    const CandidateTranslation& t0 = *ts[0];
    const CandidateTranslation& t1 = *ts[1];
    const std::string prompt = build_prompt(cfg, *article);

    auto emit_pair = [&](PairCategory category, const CandidateTranslation& chosen,
                         const CandidateTranslation& rejected, std::optional<double> sc,
                         std::optional<double> sr) {
      PreferencePair p;
      p.id = article->id + ":" + std::string(to_string(category));
      p.prompt = prompt;
      p.chosen = chosen.text;
      p.rejected = rejected.text;
      p.category = category;
      p.score_chosen = sc;
      p.score_rejected = sr;
      p.validate();
      return p;
    };

    const auto lang = stage::classify_language_pair(t0, t1, verdict_fn, cfg);
    if (lang.outcome == stage::LanguageOutcome::pair) {
      run.pools.language.push_back(emit_pair(PairCategory::language, lang.chosen == 0 ? t0 : t1,
                                             lang.chosen == 0 ? t1 : t0, std::nullopt,
                                             std::nullopt));
      run.verdicts.push_back({article->id, VerdictOutcome::pair_language, lang.detail});
      continue;
    }
    if (lang.outcome == stage::LanguageOutcome::dropped_both_bad) {
      run.verdicts.push_back({article->id, VerdictOutcome::dropped_both_bad,
                              "language: " + lang.detail});
      continue;
    }
    if (lang.outcome == stage::LanguageOutcome::dropped_indeterminate) {
      run.verdicts.push_back({article->id, VerdictOutcome::dropped_indeterminate,
                              "language: " + lang.detail});
      continue;
    }

    const auto trunc = stage::classify_truncation_pair(*article, t0, t1, cfg);
    if (trunc.outcome == stage::TruncationOutcome::pair) {
      run.pools.truncation.push_back(emit_pair(PairCategory::truncation,
                                               trunc.chosen == 0 ? t0 : t1,
                                               trunc.chosen == 0 ? t1 : t0, std::nullopt,
                                               std::nullopt));
      run.verdicts.push_back({article->id, VerdictOutcome::pair_truncation, trunc.detail});
      continue;
    }
    if (trunc.outcome == stage::TruncationOutcome::dropped_both_bad) {
      run.verdicts.push_back({article->id, VerdictOutcome::dropped_both_bad,
                              "truncation: " + trunc.detail});
      continue;
    }

    const double s0 = score_fn(*article, t0);
    const double s1 = score_fn(*article, t1);
    const auto scored = stage::classify_score_pair(s0, s1, cfg);
    if (scored.outcome == stage::ScoreOutcome::pair) {
      const CandidateTranslation& chosen = scored.chosen == 0 ? t0 : t1;
      const CandidateTranslation& rejected = scored.chosen == 0 ? t1 : t0;
      run.pools.score_delta.push_back(emit_pair(PairCategory::score_delta, chosen, rejected,
                                                scored.chosen == 0 ? s0 : s1,
                                                scored.chosen == 0 ? s1 : s0));
      run.verdicts.push_back({article->id, VerdictOutcome::pair_score_delta, scored.detail});
      run.clean_pool.push_back({article->id, prompt, chosen.text});
    } else {
      run.verdicts.push_back({article->id, VerdictOutcome::dropped_below_threshold,
                              scored.detail});
      // Better side joins the clean pool; ties go to the lexicographically
      // smaller model id (side 0).
      const CandidateTranslation& better = s1 > s0 ? t1 : t0;
      run.clean_pool.push_back({article->id, prompt, better.text});
    }
  }

  if (run.verdicts.size() != articles.size()) {
    throw Error("curation conservation violated: " + std::to_string(run.verdicts.size()) +
                " verdicts for " + std::to_string(articles.size()) + " articles");
  }

  // Pool entries whose text carries a configured prefix cannot seed
  // formatting pairs.
  std::vector<CleanItem> filtered;
  filtered.reserve(run.clean_pool.size());
  for (auto& item : run.clean_pool) {
    if (!starts_with_any_prefix(item.text, cfg.prefix_list)) filtered.push_back(std::move(item));
  }
  run.clean_pool = std::move(filtered);

  Rng rng(derive_seed(cfg.seed, "assemble"));
  run.dataset = assemble_dataset(run.pools, run.clean_pool, cfg, rng);
  for (const auto& v : run.verdicts) {
    ++run.dataset.manifest.verdict_counts[std::string(to_string(v.outcome))];
  }
  return run;
}

}  // namespace prefpipe
