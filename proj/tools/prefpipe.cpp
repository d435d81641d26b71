// prefpipe: synthetic preference-data curation and desk-scale DPO training
// for machine translation, exposed as batch subcommands.
//
// Exit codes: 0 success, 1 domain error (one-line JSON on stderr), 2 usage.

#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "CLI11.hpp"
#include "prefpipe/config.hpp"
#include "prefpipe/curation.hpp"
#include "prefpipe/dpo.hpp"
#include "prefpipe/eval.hpp"
#include "prefpipe/jsonl.hpp"
#include "prefpipe/langid.hpp"
#include "prefpipe/mt_client.hpp"
#include "prefpipe/scorer.hpp"
#include "prefpipe/scorer_external.hpp"

namespace {

using namespace prefpipe;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool progress = false;
  int jobs = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "pipeline config JSON");
    cmd->add_option("--seed", seed, "master seed (overrides config)")
        ->each([this](const std::string&) { seed_set = true; });
    cmd->add_flag("--progress", progress, "stream JSONL progress events on stderr");
    cmd->add_option("--jobs", jobs, "global cap on worker threads");
  }

  PipelineConfig load() const {
    PipelineConfig cfg;
    if (!config_path.empty()) cfg = PipelineConfig::from_json(parse_json_file(config_path));
    if (seed_set) cfg.seed = seed;
    return cfg;
  }

  void emit(const std::string& event,
            const std::vector<std::pair<std::string, std::uint64_t>>& counts = {}) const {
    if (!progress) return;
    std::string line;
    canon::ObjectWriter w(line);
    for (const auto& [k, v] : counts) w.add_uint(k, v);
    w.add_string("event", event);
    w.close();
    std::cerr << line << "\n";
  }
};

ScoreFn score_file_fn(const std::string& path) {
  auto map = std::make_shared<std::unordered_map<std::string, double>>();
  for (const auto& s : read_jsonl<QualityScore>(path)) {
    (*map)[s.article_id + "\x1f" + s.model_id] = s.score;
  }
  return [map](const Article& a, const CandidateTranslation& t) {
    auto it = map->find(t.article_id + "\x1f" + t.model_id);
    if (it == map->end()) {
      throw Error("missing score for (" + t.article_id + ", " + t.model_id + ")");
    }
    (void)a;
    return it->second;
  };
}

int cmd_translate(const CommonArgs& common, const std::string& articles_path,
                  const std::string& out_path, const std::string& report_path) {
  const PipelineConfig cfg = common.load();
  if (cfg.backends.size() != 2) {
    throw Error("translate: config must define exactly 2 backends");
  }
  const auto articles = read_jsonl<Article>(articles_path);
  common.emit("translate-start", {{"articles", articles.size()}});
  TranslateOptions opts;
  opts.seed = cfg.module_seed("translate");
  opts.jobs_cap = common.jobs;
  const TranslateReport report = translate_corpus(articles, cfg.backends, out_path, opts);
  if (!report_path.empty()) write_text_file(report_path, report.to_json());
  std::cout << report.to_json();
  common.emit("translate-done",
              {{"succeeded", report.succeeded}, {"failed", report.failures.size()}});
  return 0;
}

int cmd_train_langid(const CommonArgs& common, const std::string& corpus_path,
                     const std::string& out_path, const LangIdConfig& lang_cfg) {
  const auto corpus = read_jsonl<LabeledDoc>(corpus_path);
  common.emit("train-langid-start", {{"docs", corpus.size()}});
  const LangProfile profile = train_langid(corpus, lang_cfg);
  save_profile(out_path, profile);
  common.emit("train-langid-done", {{"labels", profile.labels.size()}});
  return 0;
}

int cmd_curate(const CommonArgs& common, const std::string& articles_path,
               const std::string& translations_path, const std::string& scores_path,
               bool use_proxy_scorer, const std::string& profile_path,
               const std::string& sidecar_path, const std::string& out_train,
               const std::string& out_val, const std::string& manifest_path,
               const std::string& verdicts_path, bool dry_run) {
  const PipelineConfig pipeline = common.load();
  CurationConfig cfg = pipeline.curation;
  cfg.seed = pipeline.module_seed("curate");

  const auto articles = read_jsonl<Article>(articles_path);
  const auto translations = read_jsonl<CandidateTranslation>(translations_path);
  common.emit("curate-start",
              {{"articles", articles.size()}, {"translations", translations.size()}});

  LangProfile profile;
  std::vector<SidecarVerdict> sidecar;
  VerdictFn verdict_fn;
  if (!profile_path.empty()) {
    profile = load_profile(profile_path);
    verdict_fn = profile_verdict_fn(profile);
  } else if (!sidecar_path.empty()) {
    sidecar = read_jsonl<SidecarVerdict>(sidecar_path);
    verdict_fn = sidecar_verdict_fn(sidecar);
  } else {
    throw Error("curate: need --lang-profile or --lang-verdicts");
  }

  ScoreFn score_fn;
  if (use_proxy_scorer) {
    score_fn = [](const Article& a, const CandidateTranslation& t) {
      return proxy_score(a.source_text, t.text);
    };
  } else if (!scores_path.empty()) {
    score_fn = score_file_fn(scores_path);
  } else {
    throw Error("curate: need --scores or --proxy-scorer");
  }

  const CurationRun run = curate_corpus(articles, translations, verdict_fn, score_fn, cfg);
  common.emit("curate-classified", {{"language", run.pools.language.size()},
                                    {"truncation", run.pools.truncation.size()},
                                    {"score_delta", run.pools.score_delta.size()},
                                    {"clean_pool", run.clean_pool.size()}});

  if (dry_run) {
    std::cout << run.dataset.manifest.to_json();
    return 0;
  }
  write_jsonl(out_train, run.dataset.train);
  write_jsonl(out_val, run.dataset.val);
  write_text_file(manifest_path, run.dataset.manifest.to_json());
  if (!verdicts_path.empty()) write_jsonl(verdicts_path, run.verdicts);
  common.emit("curate-done", {{"train", run.dataset.train.size()},
                              {"val", run.dataset.val.size()}});
  return 0;
}

int cmd_train_dpo(const CommonArgs& common, const std::string& train_path,
                  const std::string& val_path, const std::string& ckpt_path,
                  const std::string& log_path, const std::string& alphabet_path) {
  const PipelineConfig pipeline = common.load();
  TrainConfig cfg = pipeline.train;
  cfg.seed = pipeline.module_seed("train-dpo");

  const auto train_pairs = read_jsonl<PreferencePair>(train_path);
  const auto val_pairs = read_jsonl<PreferencePair>(val_path);

  std::optional<CharTokenizer> tok;
  if (!alphabet_path.empty()) {
    tok = CharTokenizer::from_json(parse_json_file(alphabet_path));
  } else if (pipeline.alphabet) {
    tok = CharTokenizer(*pipeline.alphabet);
  } else {
    tok = CharTokenizer::default_tokenizer();
  }

  const EncodedDataset train_set = encode_pairs(train_pairs, *tok);
  const EncodedDataset val_set = encode_pairs(val_pairs, *tok);
  common.emit("train-dpo-start",
              {{"train", train_set.items.size()},
               {"val", val_set.items.size()},
               {"dropped_empty", train_set.dropped_empty + val_set.dropped_empty}});

  const ToyPolicy reference = fit_bigram_reference(train_set.items, tok->vocab_size());

  std::ofstream log_out;
  TrainLogFn log_fn;
  if (!log_path.empty()) {
    log_out.open(log_path, std::ios::binary | std::ios::trunc);
    if (!log_out) throw Error("cannot open for writing: " + log_path);
    log_fn = [&log_out](const TrainLogEntry& e) { append_jsonl_line(log_out, e); };
  }

  const TrainState state = train(reference, train_set.items, val_set.items, cfg, log_fn);
  save_checkpoint(ckpt_path, cfg, state.best);

  std::string summary;
  {
    canon::ObjectWriter w(summary);
    w.add_uint("best_step", state.best.step);
    w.add_double("best_val_loss", state.best.val_loss);
    w.add_uint("steps", state.step);
    w.close();
  }
  std::cout << summary << "\n";
  common.emit("train-dpo-done", {{"steps", state.step}});
  return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& articles_path,
                 const std::string& translations_path, const std::string& profile_path,
                 const std::string& scorer_spec, const std::string& out_path,
                 const std::string& format) {
  const PipelineConfig pipeline = common.load();
  CurationConfig cfg = pipeline.curation;
  cfg.seed = pipeline.module_seed("evaluate");

  const auto articles = read_jsonl<Article>(articles_path);
  const auto translations = read_jsonl<CandidateTranslation>(translations_path);
  const LangProfile profile = load_profile(profile_path);
  common.emit("evaluate-start",
              {{"articles", articles.size()}, {"translations", translations.size()}});

  BatchScoreFn score_fn;
  if (scorer_spec == "proxy") {
    score_fn = proxy_batch_scorer();
  } else if (scorer_spec.rfind("http://", 0) == 0 || scorer_spec.rfind("https://", 0) == 0) {
    ExternalScorerOptions opts;
    opts.seed = cfg.seed;
    if (common.jobs > 0) opts.max_in_flight = common.jobs;
    score_fn = http_batch_scorer(scorer_spec, opts);
  } else {
    throw Error("evaluate: --scorer must be 'proxy' or an http(s) URL");
  }

  const EvalReport report =
      evaluate(articles, translations, profile_verdict_fn(profile), score_fn, cfg);
  if (!out_path.empty()) write_text_file(out_path, report.to_json());
  std::cout << render_report(report, report_format_from_string(format));
  common.emit("evaluate-done", {{"excluded", report.excluded_articles.size()}});
  return 0;
}

int cmd_report(const CommonArgs& common, const std::string& in_path, const std::string& format,
               const std::string& out_path) {
  const EvalReport report = EvalReport::from_json(parse_json_file(in_path));
  common.emit("report-start", {{"models", report.per_model.size()}});
  const std::string rendered = render_report(report, report_format_from_string(format));
  if (out_path.empty()) {
    std::cout << rendered;
  } else {
    write_text_file(out_path, rendered);
  }
  common.emit("report-done");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic preference-data curation and desk-scale DPO training for MT"};
  app.require_subcommand(1);
  std::function<int()> selected;

  // translate
  {
    auto* cmd = app.add_subcommand("translate", "generate dual translations via chat endpoints");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto articles = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto report = std::make_shared<std::string>();
    cmd->add_option("--articles", *articles, "article corpus JSONL")->required();
    cmd->add_option("--out", *out, "translations JSONL (appended, resumable)")->required();
    cmd->add_option("--report", *report, "run report JSON");
    cmd->callback([=, &selected] {
      selected = [=] { return cmd_translate(*common, *articles, *out, *report); };
    });
  }

  // train-langid
  {
    auto* cmd = app.add_subcommand("train-langid", "train the character n-gram language id");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto corpus = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto cfg = std::make_shared<LangIdConfig>();
    cmd->add_option("--corpus", *corpus, "labeled documents JSONL")->required();
    cmd->add_option("--out", *out, "profile JSON")->required();
    cmd->add_option("--min-n", cfg->ngram_min, "min n-gram length");
    cmd->add_option("--max-n", cfg->ngram_max, "max n-gram length");
    cmd->add_option("--buckets", cfg->bucket_count, "hash bucket count (power of two)");
    cmd->add_option("--alpha", cfg->smoothing_alpha, "add-alpha smoothing");
    cmd->callback([=, &selected] {
      selected = [=] { return cmd_train_langid(*common, *corpus, *out, *cfg); };
    });
  }

  // curate
  {
    auto* cmd = app.add_subcommand("curate", "build preference pairs from dual translations");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto articles = std::make_shared<std::string>();
    auto translations = std::make_shared<std::string>();
    auto scores = std::make_shared<std::string>();
    auto proxy = std::make_shared<bool>(false);
    auto profile = std::make_shared<std::string>();
    auto sidecar = std::make_shared<std::string>();
    auto out_train = std::make_shared<std::string>();
    auto out_val = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto verdicts = std::make_shared<std::string>();
    auto dry_run = std::make_shared<bool>(false);
    cmd->add_option("--articles", *articles, "article corpus JSONL")->required();
    cmd->add_option("--translations", *translations, "dual translations JSONL")->required();
    cmd->add_option("--scores", *scores, "precomputed QualityScore JSONL");
    cmd->add_flag("--proxy-scorer", *proxy, "score with the built-in proxy");
    cmd->add_option("--lang-profile", *profile, "trained language-id profile JSON");
    cmd->add_option("--lang-verdicts", *sidecar, "precomputed language verdict JSONL");
    cmd->add_option("--out-train", *out_train, "training pairs JSONL")->required();
    cmd->add_option("--out-val", *out_val, "validation pairs JSONL")->required();
    cmd->add_option("--manifest", *manifest, "dataset manifest JSON")->required();
    cmd->add_option("--verdicts", *verdicts, "per-article verdict audit JSONL");
    cmd->add_flag("--dry-run", *dry_run, "print the manifest, write nothing");
    cmd->callback([=, &selected] {
      selected = [=] {
        return cmd_curate(*common, *articles, *translations, *scores, *proxy, *profile,
                          *sidecar, *out_train, *out_val, *manifest, *verdicts, *dry_run);
      };
    });
  }

  // train-dpo
  {
    auto* cmd = app.add_subcommand("train-dpo", "train the low-rank adapter with DPO");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto train_path = std::make_shared<std::string>();
    auto val_path = std::make_shared<std::string>();
    auto ckpt = std::make_shared<std::string>();
    auto log_path = std::make_shared<std::string>();
    auto alphabet = std::make_shared<std::string>();
    cmd->add_option("--train", *train_path, "training pairs JSONL")->required();
    cmd->add_option("--val", *val_path, "validation pairs JSONL")->required();
    cmd->add_option("--out-checkpoint", *ckpt, "best checkpoint JSON")->required();
    cmd->add_option("--log", *log_path, "training log JSONL");
    cmd->add_option("--alphabet", *alphabet, "tokenizer alphabet JSON");
    cmd->callback([=, &selected] {
      selected = [=] {
        return cmd_train_dpo(*common, *train_path, *val_path, *ckpt, *log_path, *alphabet);
      };
    });
  }

  // evaluate
  {
    auto* cmd = app.add_subcommand("evaluate", "per-model error rates and score comparison");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto articles = std::make_shared<std::string>();
    auto translations = std::make_shared<std::string>();
    auto profile = std::make_shared<std::string>();
    auto scorer = std::make_shared<std::string>("proxy");
    auto out = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>("markdown");
    cmd->add_option("--articles", *articles, "article corpus JSONL")->required();
    cmd->add_option("--translations", *translations, "translations JSONL, all models")
        ->required();
    cmd->add_option("--lang-profile", *profile, "trained language-id profile JSON")->required();
    cmd->add_option("--scorer", *scorer, "'proxy' or scorer base URL");
    cmd->add_option("--out", *out, "report JSON path");
    cmd->add_option("--format", *format, "stdout format: markdown|json|csv");
    cmd->callback([=, &selected] {
      selected = [=] {
        return cmd_evaluate(*common, *articles, *translations, *profile, *scorer, *out,
                            *format);
      };
    });
  }

  // report
  {
    auto* cmd = app.add_subcommand("report", "render an evaluation report");
    auto common = std::make_shared<CommonArgs>();
    common->attach(cmd);
    auto in = std::make_shared<std::string>();
    auto format = std::make_shared<std::string>("markdown");
    auto out = std::make_shared<std::string>();
    cmd->add_option("--in", *in, "report JSON from evaluate")->required();
    cmd->add_option("--format", *format, "markdown|json|csv");
    cmd->add_option("--out", *out, "output path (default stdout)");
    cmd->callback([=, &selected] {
      selected = [=] { return cmd_report(*common, *in, *format, *out); };
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return selected ? selected() : 2;
  } catch (const std::exception& e) {
    std::string line;
    {
      prefpipe::canon::ObjectWriter w(line);
      w.add_string("error", e.what());
      w.close();
    }
    std::cerr << line << "\n";
    return 1;
  }
}
