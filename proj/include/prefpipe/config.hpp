#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "prefpipe/curation.hpp"
#include "prefpipe/dpo.hpp"
#include "prefpipe/error.hpp"
#include "prefpipe/mt_client.hpp"
#include "prefpipe/rng.hpp"

namespace prefpipe {

inline CurationConfig curation_config_from_json(const json& j) {
  CurationConfig c;
  if (j.contains("target_language")) c.target_language = j["target_language"].get<std::string>();
  if (j.contains("truncation_ratio")) c.truncation_ratio = j["truncation_ratio"].get<double>();
  if (j.contains("score_delta_threshold")) {
    c.score_delta_threshold = j["score_delta_threshold"].get<double>();
  }
  if (j.contains("formatting_fraction")) {
    c.formatting_fraction = j["formatting_fraction"].get<double>();
  }
  if (j.contains("prefix_list")) {
    c.prefix_list.clear();
    for (const auto& p : j["prefix_list"]) c.prefix_list.push_back(p.get<std::string>());
  }
  if (j.contains("min_confidence")) c.min_confidence = j["min_confidence"].get<double>();
  if (j.contains("prompt_template")) c.prompt_template = j["prompt_template"].get<std::string>();
  if (j.contains("val_count")) c.val_count = j["val_count"].get<std::uint64_t>();
  c.validate();
  return c;
}

// One config file for the whole pipeline. A single seed governs the run;
// every subcommand derives its own stream from it with a fixed tag, so
// per-module randomness is independent but fully reproducible.
struct PipelineConfig {
  std::uint64_t seed = 0;
  CurationConfig curation;
  TrainConfig train;
  std::vector<BackendSpec> backends;
  std::string scorer_url;            // optional external scorer endpoint
  std::optional<std::string> alphabet;  // optional tokenizer override

  static PipelineConfig from_json(const json& j) {
    PipelineConfig c;
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("curation")) c.curation = curation_config_from_json(j["curation"]);
    if (j.contains("train")) c.train = train_config_from_json(j["train"]);
    if (j.contains("backends")) {
      for (const auto& b : j["backends"]) c.backends.push_back(BackendSpec::from_json(b));
    }
    if (j.contains("scorer") && j["scorer"].contains("base_url")) {
      c.scorer_url = j["scorer"]["base_url"].get<std::string>();
    }
    if (j.contains("alphabet")) c.alphabet = j["alphabet"].get<std::string>();
    return c;
  }

  std::uint64_t module_seed(std::string_view module_tag) const {
    return derive_seed(seed, module_tag);
  }
};

}  // namespace prefpipe
