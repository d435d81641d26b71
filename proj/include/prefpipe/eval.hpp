#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefpipe/curation.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/json_canon.hpp"
#include "prefpipe/scorer.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Error predicates are the same ones curation uses; a model's translation is
// evaluated exactly the way training pairs were selected.
struct EvalRecord {
  std::string article_id;
  std::string model_id;
  bool language_error = false;
  bool truncation_error = false;
  std::optional<double> score;
};

struct ModelStats {
  double language_error_rate = 0.0;
  double truncation_error_rate = 0.0;
  double combined_rate = 0.0;  // union, not sum
  // Unweighted mean of the per-domain means (domains = article origins), so
  // unequal domain sizes do not skew the cross-domain figure.
  std::optional<double> mean_score;
  std::map<std::string, double> domain_means;  // origin -> mean over scored articles
  std::uint64_t n_scored = 0;
};

struct EvalReport {
  std::uint64_t n_articles = 0;
  std::map<std::string, ModelStats> per_model;
  std::vector<std::string> excluded_articles;  // sorted

  std::string to_json() const {
    std::string out;
    canon::ObjectWriter w(out);
    {
      std::string arr = "[";
      for (std::size_t i = 0; i < excluded_articles.size(); ++i) {
        if (i) arr.push_back(',');
        canon::append_escaped(arr, excluded_articles[i]);
      }
      arr.push_back(']');
      w.add_raw("excluded_articles", arr);
    }
    w.add_uint("n_articles", n_articles);
    {
      std::string models;
      canon::ObjectWriter mw(models);
      for (const auto& [model_id, s] : per_model) {
        std::string entry;
        canon::ObjectWriter ew(entry);
        ew.add_double("combined_rate", s.combined_rate);
        {
          std::string dm;
          canon::ObjectWriter dw(dm);
          for (const auto& [domain, mean] : s.domain_means) dw.add_double(domain, mean);
          dw.close();
          ew.add_raw("domain_means", dm);
        }
        ew.add_double("language_error_rate", s.language_error_rate);
        if (s.mean_score) {
          ew.add_double("mean_score", *s.mean_score);
        } else {
          ew.add_null("mean_score");
        }
        ew.add_uint("n_scored", s.n_scored);
        ew.add_double("truncation_error_rate", s.truncation_error_rate);
        ew.close();
        mw.add_raw(model_id, entry);
      }
      mw.close();
      w.add_raw("per_model", models);
    }
    w.close();
    out.push_back('\n');
    return out;
  }

  static EvalReport from_json(const json& j) {
    EvalReport r;
    r.n_articles = j.at("n_articles").get<std::uint64_t>();
    for (const auto& id : j.at("excluded_articles")) {
      r.excluded_articles.push_back(id.get<std::string>());
    }
    for (const auto& [model_id, e] : j.at("per_model").items()) {
      ModelStats s;
      s.combined_rate = e.at("combined_rate").get<double>();
      s.language_error_rate = e.at("language_error_rate").get<double>();
      s.truncation_error_rate = e.at("truncation_error_rate").get<double>();
      if (!e.at("mean_score").is_null()) s.mean_score = e.at("mean_score").get<double>();
      if (e.contains("domain_means")) {
        for (const auto& [domain, mean] : e.at("domain_means").items()) {
          s.domain_means[domain] = mean.get<double>();
        }
      }
      s.n_scored = e.at("n_scored").get<std::uint64_t>();
      r.per_model[model_id] = s;
    }
    return r;
  }
};

// Applies the language and truncation predicates per (article, model), then
// scores only articles on which no model made a critical mistake. Requires a
// complete article x model grid.
inline EvalReport evaluate(const std::vector<Article>& articles,
                           const std::vector<CandidateTranslation>& translations,
                           const VerdictFn& verdict_fn, const BatchScoreFn& score_fn,
                           const CurationConfig& cfg) {
  cfg.validate();
  if (articles.empty()) throw Error("evaluate: no articles");

  std::map<std::string, const Article*> article_by_id;
  for (const auto& a : articles) article_by_id[a.id] = &a;

  std::set<std::string> model_ids;
  std::map<std::pair<std::string, std::string>, const CandidateTranslation*> cells;
  for (const auto& t : translations) {
    if (!article_by_id.count(t.article_id)) {
      throw Error("evaluate: translation references unknown article '" + t.article_id + "'");
    }
    model_ids.insert(t.model_id);
    cells[{t.article_id, t.model_id}] = &t;
  }
  if (model_ids.empty()) throw Error("evaluate: no translations");

  std::map<std::pair<std::string, std::string>, EvalRecord> judged;
  std::set<std::string> excluded;

  for (const auto& [id, article] : article_by_id) {
    for (const auto& model : model_ids) {
      auto it = cells.find({id, model});
      if (it == cells.end()) {
        throw Error("evaluate: missing translation for article '" + id + "' by model '" + model +
                    "'");
      }
      const CandidateTranslation& t = *it->second;
      EvalRecord c;
      c.article_id = id;
      c.model_id = model;
      c.language_error =
          stage::judge_language(verdict_fn(t), cfg) != stage::SideLanguage::correct;
      c.truncation_error =
          is_truncated(t.char_count, article->source_char_count, cfg.truncation_ratio);
      if (c.language_error || c.truncation_error) excluded.insert(id);
      judged[{id, model}] = c;
    }
  }

  EvalReport report;
  report.n_articles = articles.size();
  report.excluded_articles.assign(excluded.begin(), excluded.end());

  // Score the non-excluded articles, model by model, in sorted article order.
  std::vector<const Article*> scored_articles;
  for (const auto& [id, article] : article_by_id) {
    if (!excluded.count(id)) scored_articles.push_back(article);
  }

  const double n = static_cast<double>(articles.size());
  for (const auto& model : model_ids) {
    ModelStats s;
    std::uint64_t lang_errors = 0, trunc_errors = 0, either = 0;
    for (const auto& [id, article] : article_by_id) {
      const EvalRecord& c = judged[{id, model}];
      lang_errors += c.language_error;
      trunc_errors += c.truncation_error;
      either += c.language_error || c.truncation_error;
    }
    s.language_error_rate = static_cast<double>(lang_errors) / n;
    s.truncation_error_rate = static_cast<double>(trunc_errors) / n;
    s.combined_rate = static_cast<double>(either) / n;
    s.n_scored = scored_articles.size();

    if (!scored_articles.empty()) {
      std::vector<ScoreItem> items;
      items.reserve(scored_articles.size());
      for (const Article* a : scored_articles) {
        const CandidateTranslation& t = *cells[{a->id, model}];
        items.push_back({a->id, model, a->source_text, t.text});
      }
      const std::vector<double> scores = score_fn(items);
      if (scores.size() != items.size()) {
        throw Error("evaluate: scorer returned wrong number of scores");
      }
      std::map<std::string, std::pair<double, std::uint64_t>> by_domain;  // sum, count
      for (std::size_t i = 0; i < scores.size(); ++i) {
        judged[{items[i].article_id, model}].score = scores[i];
        auto& [sum, count] = by_domain[std::string(to_string(scored_articles[i]->origin))];
        sum += scores[i];
        ++count;
      }
      double domain_total = 0.0;
      for (const auto& [domain, acc] : by_domain) {
        const double mean = acc.first / static_cast<double>(acc.second);
        s.domain_means[domain] = mean;
        domain_total += mean;
      }
      s.mean_score = domain_total / static_cast<double>(by_domain.size());
    }
    report.per_model[model] = s;
  }
  return report;
}

enum class ReportFormat { markdown, json, csv };

inline ReportFormat report_format_from_string(std::string_view s) {
  if (s == "markdown") return ReportFormat::markdown;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw Error("unknown report format '" + std::string(s) + "'");
}

namespace detail {

inline std::string percent_1dp(double rate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f%%", rate * 100.0);
  return buf;
}

inline std::string score_3dp(const std::optional<double>& score) {
  if (!score) return "-";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", *score);
  return buf;
}

}  // namespace detail

// Rows sorted by model id; percentages with one decimal, scores with three.
inline std::string render_report(const EvalReport& report, ReportFormat format) {
  if (format == ReportFormat::json) return report.to_json();
  std::string out;
  if (format == ReportFormat::markdown) {
    out += "| Model | Language Error | Truncation Error | Combined | Mean Score | N Scored |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& [model_id, s] : report.per_model) {
      out += "| " + model_id + " | " + detail::percent_1dp(s.language_error_rate) + " | " +
             detail::percent_1dp(s.truncation_error_rate) + " | " +
             detail::percent_1dp(s.combined_rate) + " | " + detail::score_3dp(s.mean_score) +
             " | " + std::to_string(s.n_scored) + " |\n";
    }
    return out;
  }
  out += "model,language_error,truncation_error,combined,mean_score,n_scored\n";
  for (const auto& [model_id, s] : report.per_model) {
    out += model_id + "," + detail::percent_1dp(s.language_error_rate) + "," +
           detail::percent_1dp(s.truncation_error_rate) + "," +
           detail::percent_1dp(s.combined_rate) + "," + detail::score_3dp(s.mean_score) + "," +
           std::to_string(s.n_scored) + "\n";
  }
  return out;
}

}  // namespace prefpipe
