#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/unicode.hpp"

namespace prefpipe {

using json = nlohmann::json;

enum class ArticleOrigin { wiki, news, other };

inline std::string_view to_string(ArticleOrigin o) {
  switch (o) {
    case ArticleOrigin::wiki: return "wiki";
    case ArticleOrigin::news: return "news";
    default: return "other";
  }
}

inline ArticleOrigin origin_from_string(std::string_view s) {
  if (s == "wiki") return ArticleOrigin::wiki;
  if (s == "news") return ArticleOrigin::news;
  if (s == "other") return ArticleOrigin::other;
  throw Error("unknown article origin '" + std::string(s) + "'");
}

enum class PairCategory { language, truncation, formatting, score_delta };

inline std::string_view to_string(PairCategory c) {
  switch (c) {
    case PairCategory::language: return "language";
    case PairCategory::truncation: return "truncation";
    case PairCategory::formatting: return "formatting";
    default: return "score_delta";
  }
}

inline PairCategory category_from_string(std::string_view s) {
  if (s == "language") return PairCategory::language;
  if (s == "truncation") return PairCategory::truncation;
  if (s == "formatting") return PairCategory::formatting;
  if (s == "score_delta") return PairCategory::score_delta;
  throw Error("unknown pair category '" + std::string(s) + "'");
}

namespace detail {

inline const json& require_field(const json& j, const char* key, const char* kind) {
  auto it = j.find(key);
  if (it == j.end()) {
    throw Error(std::string(kind) + ": missing field '" + key + "'");
  }
  return *it;
}

inline std::string get_string(const json& j, const char* key, const char* kind) {
  const json& v = require_field(j, key, kind);
  if (!v.is_string()) throw Error(std::string(kind) + ": field '" + key + "' must be a string");
  return v.get<std::string>();
}

inline std::uint64_t get_uint(const json& j, const char* key, const char* kind) {
  const json& v = require_field(j, key, kind);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw Error(std::string(kind) + ": field '" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline double get_double(const json& j, const char* key, const char* kind) {
  const json& v = require_field(j, key, kind);
  if (!v.is_number()) throw Error(std::string(kind) + ": field '" + key + "' must be a number");
  return v.get<double>();
}

}  // namespace detail

// One source document. id is unique within a corpus file.
struct Article {
  std::string id;
  std::string source_text;
  std::uint64_t source_char_count = 0;
  ArticleOrigin origin = ArticleOrigin::other;

  static constexpr const char* kind = "Article";

  static Article make(std::string id, std::string source_text, ArticleOrigin origin) {
    Article a;
    a.id = std::move(id);
    a.source_text = std::move(source_text);
    a.source_char_count = scalar_count(a.source_text);
    a.origin = origin;
    return a;
  }

  void validate() const {
    if (id.empty()) throw Error("Article: empty id");
    if (source_char_count != scalar_count(source_text)) {
      throw Error("Article '" + id + "': source_char_count " + std::to_string(source_char_count) +
                  " does not match text (" + std::to_string(scalar_count(source_text)) + ")");
    }
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("id", id);
    w.add_string("origin", to_string(origin));
    w.add_uint("source_char_count", source_char_count);
    w.add_string("source_text", source_text);
    w.close();
  }

  static Article from_json(const json& j) {
    Article a;
    a.id = detail::get_string(j, "id", kind);
    a.origin = origin_from_string(detail::get_string(j, "origin", kind));
    a.source_char_count = detail::get_uint(j, "source_char_count", kind);
    a.source_text = detail::get_string(j, "source_text", kind);
    a.validate();
    return a;
  }
};

// One model's translation of one article. (article_id, model_id) is unique
// within a translation file.
struct CandidateTranslation {
  std::string article_id;
  std::string model_id;
  std::string text;
  std::uint64_t char_count = 0;

  static constexpr const char* kind = "CandidateTranslation";

  static CandidateTranslation make(std::string article_id, std::string model_id,
                                   std::string text) {
    CandidateTranslation t;
    t.article_id = std::move(article_id);
    t.model_id = std::move(model_id);
    t.text = std::move(text);
    t.char_count = scalar_count(t.text);
    return t;
  }

  void validate() const {
    if (char_count != scalar_count(text)) {
      throw Error("CandidateTranslation '" + article_id + "/" + model_id +
                  "': char_count does not match text");
    }
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("article_id", article_id);
    w.add_uint("char_count", char_count);
    w.add_string("model_id", model_id);
    w.add_string("text", text);
    w.close();
  }

  static CandidateTranslation from_json(const json& j) {
    CandidateTranslation t;
    t.article_id = detail::get_string(j, "article_id", kind);
    t.char_count = detail::get_uint(j, "char_count", kind);
    t.model_id = detail::get_string(j, "model_id", kind);
    t.text = detail::get_string(j, "text", kind);
    t.validate();
    return t;
  }
};

// The dataset element: prompt plus chosen/rejected responses. Scores are
// carried only for score_delta pairs (provenance for the threshold rule).
struct PreferencePair {
  std::string id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  PairCategory category = PairCategory::score_delta;
  std::optional<double> score_chosen;
  std::optional<double> score_rejected;

  static constexpr const char* kind = "PreferencePair";

  void validate() const {
    if (chosen == rejected) throw Error("PreferencePair '" + id + "': chosen equals rejected");
    if (category == PairCategory::score_delta) {
      if (!score_chosen || !score_rejected) {
        throw Error("PreferencePair '" + id + "': score_delta pair without both scores");
      }
      if (!(*score_chosen > *score_rejected)) {
        throw Error("PreferencePair '" + id + "': score_chosen must exceed score_rejected");
      }
    }
    for (const auto& s : {score_chosen, score_rejected}) {
      if (s && (*s < 0.0 || *s > 1.0)) {
        throw Error("PreferencePair '" + id + "': score outside [0,1]");
      }
    }
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("category", to_string(category));
    w.add_string("chosen", chosen);
    w.add_string("id", id);
    w.add_string("prompt", prompt);
    w.add_string("rejected", rejected);
    if (score_chosen) w.add_double("score_chosen", *score_chosen);
    if (score_rejected) w.add_double("score_rejected", *score_rejected);
    w.close();
  }

  static PreferencePair from_json(const json& j) {
    PreferencePair p;
    p.category = category_from_string(detail::get_string(j, "category", kind));
    p.chosen = detail::get_string(j, "chosen", kind);
    p.id = detail::get_string(j, "id", kind);
    p.prompt = detail::get_string(j, "prompt", kind);
    p.rejected = detail::get_string(j, "rejected", kind);
    if (j.contains("score_chosen")) p.score_chosen = detail::get_double(j, "score_chosen", kind);
    if (j.contains("score_rejected")) {
      p.score_rejected = detail::get_double(j, "score_rejected", kind);
    }
    p.validate();
    return p;
  }
};

// Per-translation quality value in [0,1].
struct QualityScore {
  std::string article_id;
  std::string model_id;
  double score = 0.0;

  static constexpr const char* kind = "QualityScore";

  void validate() const {
    if (score < 0.0 || score > 1.0) {
      throw Error("QualityScore '" + article_id + "/" + model_id + "': score outside [0,1]");
    }
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("article_id", article_id);
    w.add_string("model_id", model_id);
    w.add_double("score", score);
    w.close();
  }

  static QualityScore from_json(const json& j) {
    QualityScore s;
    s.article_id = detail::get_string(j, "article_id", kind);
    s.model_id = detail::get_string(j, "model_id", kind);
    s.score = detail::get_double(j, "score", kind);
    s.validate();
    return s;
  }
};

// Precomputed language verdict sidecar: lets a production classifier replace
// the built-in one at the pipeline level.
struct SidecarVerdict {
  std::string article_id;
  std::string model_id;
  std::string label;
  double confidence = 0.0;

  static constexpr const char* kind = "SidecarVerdict";

  void validate() const {
    if (confidence < 0.0 || confidence > 1.0) {
      throw Error("SidecarVerdict '" + article_id + "/" + model_id +
                  "': confidence outside [0,1]");
    }
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("article_id", article_id);
    w.add_double("confidence", confidence);
    w.add_string("label", label);
    w.add_string("model_id", model_id);
    w.close();
  }

  static SidecarVerdict from_json(const json& j) {
    SidecarVerdict v;
    v.article_id = detail::get_string(j, "article_id", kind);
    v.confidence = detail::get_double(j, "confidence", kind);
    v.label = detail::get_string(j, "label", kind);
    v.model_id = detail::get_string(j, "model_id", kind);
    v.validate();
    return v;
  }
};

// Labeled document for language-identifier training.
struct LabeledDoc {
  std::string text;
  std::string label;

  static constexpr const char* kind = "LabeledDoc";

  void validate() const {
    if (label.empty()) throw Error("LabeledDoc: empty label");
  }

  void to_canonical(std::string& out) const {
    canon::ObjectWriter w(out);
    w.add_string("label", label);
    w.add_string("text", text);
    w.close();
  }

  static LabeledDoc from_json(const json& j) {
    LabeledDoc d;
    d.label = detail::get_string(j, "label", kind);
    d.text = detail::get_string(j, "text", kind);
    d.validate();
    return d;
  }
};

}  // namespace prefpipe
