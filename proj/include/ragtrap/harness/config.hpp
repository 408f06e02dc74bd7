/* Copyright 2026 The ragtrap Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <set>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "ragtrap/defenses.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/harness/io.hpp"
#include "ragtrap/harness/synthetic.hpp"
#include "ragtrap/hash.hpp"
#include "ragtrap/persistence.hpp"
#include "ragtrap/phase1.hpp"
#include "ragtrap/phase2.hpp"
#include "ragtrap/remote.hpp"
#include "ragtrap/rng.hpp"

namespace ragtrap {

struct CleanTrainConfig {
  double learning_rate = 300.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::size_t negatives_per_sample = 4;
};

struct GeneratorConfig {
  std::string kind = "stub";  // stub | remote
  std::size_t max_tokens = 150;
  RemoteEndpointConfig remote;
  bool fallback_to_stub = false;
};

struct ExperimentConfig {
  std::uint64_t seed = 7;
  std::size_t workers = 1;

  SyntheticDatasetSpec dataset;
  std::string data_dir;  // empty: generate the synthetic fixture

  std::string attribute = "synthetic";
  std::string target_group = "group0";
  std::vector<std::string> triggers = {"cf"};
  std::string lexicon_path;  // empty: lexicon that ships with the dataset

  std::size_t embed_dim = 32;
  int lm_order = 2;
  double lm_alpha = 0.1;

  CleanTrainConfig clean;
  TrainConfig phase1 = [] {
    TrainConfig t;
    t.learning_rate = 20.0;
    t.epochs = 300;
    return t;
  }();
  CraftConfig phase2 = [] {
    CraftConfig c;
    c.beam_width = 4;
    c.max_len = 40;
    return c;
  }();
  std::size_t inject_count = 8;
  // Score the bias term on stub output for a probe slice of the triggered
  // queries instead of on the crafted text itself.
  bool score_on_output = true;
  std::size_t probe_queries = 64;
  // Drop the other groups' lexicon words from the crafting vocabulary.
  bool exclude_other_groups = true;

  GeneratorConfig generator;
  std::size_t k = 5;

  std::vector<std::string> defenses = {"query_rewriting", "data_filtering", "perplexity_filter"};
  DefenseConfig defense;

  std::vector<long long> persistence_steps = {10, 20};
  FinetuneConfig finetune = [] {
    FinetuneConfig f;
    f.learning_rate = 300.0;
    return f;
  }();

  bool disable_phase1 = false;
  bool disable_phase2 = false;
  bool run_ablations = true;
  bool run_gamma_zero = true;

  void validate() const {
    dataset.validate();
    TriggerSpec{triggers}.validate();
    phase1.validate();
    if (embed_dim < 2) throw InvalidArgument("config: encoder.dim must be >= 2");
    if (lm_order < 1 || lm_order > 4) throw InvalidArgument("config: lm.order must be in [1,4]");
    if (!(lm_alpha > 0.0)) throw InvalidArgument("config: lm.alpha must be > 0");
    if (k < 1) throw InvalidArgument("config: retrieval.k must be >= 1");
    if (inject_count < 1) throw InvalidArgument("config: phase2.inject_count must be >= 1");
    if (score_on_output && probe_queries < 1) throw InvalidArgument("config: phase2.probe_queries must be >= 1");
    if (phase2.beam_width < 1 || phase2.max_len < 1) throw InvalidArgument("config: phase2 beam_width/max_len must be >= 1");
    if (phase2.weight_sim < 0 || phase2.weight_bias < 0 || phase2.weight_ppl < 0) {
      throw InvalidArgument("config: phase2 weights must be >= 0");
    }
    if (generator.kind != "stub" && generator.kind != "remote") {
      throw InvalidArgument("config: generator.kind must be 'stub' or 'remote'");
    }
    if (generator.kind == "remote" && generator.remote.url.empty()) {
      throw InvalidArgument("config: generator.remote.url is required for the remote generator");
    }
    for (const auto& d : defenses) {
      if (d != "query_rewriting" && d != "data_filtering" && d != "perplexity_filter") {
        throw InvalidArgument("config: unknown defense '" + d + "'");
      }
    }
    defense.validate();
    for (auto s : persistence_steps) {
      if (s < 0) throw InvalidArgument("config: persistence steps must be >= 0");
    }
    if (clean.batch_size < 1 || finetune.batch_size < 1) throw InvalidArgument("config: batch sizes must be >= 1");
    if (data_dir.empty()) {
      bool found = false;
      for (std::size_t g = 0; g < dataset.n_groups; ++g) found = found || target_group == "group" + std::to_string(g);
      if (!found) throw InvalidArgument("config: target group '" + target_group + "' is not a dataset group");
    }
  }
};

// Independent, reproducible seed for a named stage.
inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
  return Rng::seed_mix(seed ^ fnv1a(stage));
}

namespace detail {

inline void check_keys(const YAML::Node& node, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!node || node.IsNull()) return;
  if (!node.IsMap()) throw InvalidArgument("config: section '" + section + "' must be a mapping");
  std::set<std::string> ok;
  for (const char* a : allowed) ok.insert(a);
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!ok.count(key)) throw InvalidArgument("config: unknown key '" + section + (section.empty() ? "" : ".") + key + "'");
  }
}

template <typename T>
void read(const YAML::Node& node, const char* key, T& out) {
  if (node && node.IsMap() && node[key]) {
    try {
      out = node[key].as<T>();
    } catch (const YAML::Exception& e) {
      throw InvalidArgument(std::string("config: bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline ExperimentConfig config_from_yaml(const YAML::Node& root) {
  using detail::read;
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  detail::check_keys(root, "", {"seed", "workers", "dataset", "attack", "encoder", "lm", "clean_training", "phase1",
                                "phase2", "generator", "retrieval", "defenses", "persistence", "ablation"});
  read(root, "seed", c.seed);
  read(root, "workers", c.workers);

  const auto ds = root["dataset"];
  detail::check_keys(ds, "dataset", {"dir", "groups", "queries_per_group", "docs_per_query", "queries_per_gold_doc", "distractor_docs",
                                     "context_docs_per_group", "marker_count", "descriptors_per_group",
                                     "descriptors_per_query", "topics_per_cluster", "topics_per_query", "vocab_size",
                                     "eval_fraction"});
  read(ds, "dir", c.data_dir);
  read(ds, "groups", c.dataset.n_groups);
  read(ds, "queries_per_group", c.dataset.queries_per_group);
  read(ds, "docs_per_query", c.dataset.docs_per_query);
  read(ds, "queries_per_gold_doc", c.dataset.queries_per_gold_doc);
  read(ds, "distractor_docs", c.dataset.distractor_docs);
  read(ds, "context_docs_per_group", c.dataset.context_docs_per_group);
  read(ds, "marker_count", c.dataset.marker_count);
  read(ds, "descriptors_per_group", c.dataset.descriptors_per_group);
  read(ds, "descriptors_per_query", c.dataset.descriptors_per_query);
  read(ds, "topics_per_cluster", c.dataset.topics_per_cluster);
  read(ds, "topics_per_query", c.dataset.topics_per_query);
  read(ds, "vocab_size", c.dataset.vocab_size);
  read(ds, "eval_fraction", c.dataset.eval_fraction);

  const auto at = root["attack"];
  detail::check_keys(at, "attack", {"attribute", "target_group", "triggers", "lexicon_path"});
  read(at, "attribute", c.attribute);
  read(at, "target_group", c.target_group);
  read(at, "triggers", c.triggers);
  read(at, "lexicon_path", c.lexicon_path);

  const auto en = root["encoder"];
  detail::check_keys(en, "encoder", {"dim"});
  read(en, "dim", c.embed_dim);

  const auto lm = root["lm"];
  detail::check_keys(lm, "lm", {"order", "alpha"});
  read(lm, "order", c.lm_order);
  read(lm, "alpha", c.lm_alpha);

  const auto ct = root["clean_training"];
  detail::check_keys(ct, "clean_training", {"learning_rate", "batch_size", "epochs", "negatives_per_sample"});
  read(ct, "learning_rate", c.clean.learning_rate);
  read(ct, "batch_size", c.clean.batch_size);
  read(ct, "epochs", c.clean.epochs);
  read(ct, "negatives_per_sample", c.clean.negatives_per_sample);

  const auto p1 = root["phase1"];
  detail::check_keys(p1, "phase1", {"lambda_nontarget", "lambda_clean", "learning_rate", "epochs", "batch_size",
                                    "negatives_per_sample", "bias_words_per_sample"});
  read(p1, "lambda_nontarget", c.phase1.lambda_nontarget);
  read(p1, "lambda_clean", c.phase1.lambda_clean);
  read(p1, "learning_rate", c.phase1.learning_rate);
  read(p1, "epochs", c.phase1.epochs);
  read(p1, "batch_size", c.phase1.batch_size);
  read(p1, "negatives_per_sample", c.phase1.negatives_per_sample);
  read(p1, "bias_words_per_sample", c.phase1.bias_words_per_sample);

  const auto p2 = root["phase2"];
  detail::check_keys(p2, "phase2", {"beam_width", "max_len", "weight_sim", "weight_bias", "weight_ppl", "inject_count",
                                      "score_on_output", "probe_queries", "exclude_other_groups"});
  read(p2, "beam_width", c.phase2.beam_width);
  read(p2, "max_len", c.phase2.max_len);
  read(p2, "weight_sim", c.phase2.weight_sim);
  read(p2, "weight_bias", c.phase2.weight_bias);
  read(p2, "weight_ppl", c.phase2.weight_ppl);
  read(p2, "inject_count", c.inject_count);
  read(p2, "score_on_output", c.score_on_output);
  read(p2, "probe_queries", c.probe_queries);
  read(p2, "exclude_other_groups", c.exclude_other_groups);

  const auto gen = root["generator"];
  detail::check_keys(gen, "generator", {"kind", "max_tokens", "remote"});
  read(gen, "kind", c.generator.kind);
  read(gen, "max_tokens", c.generator.max_tokens);
  const auto rem = gen ? gen["remote"] : YAML::Node();
  detail::check_keys(rem, "generator.remote",
                     {"url", "model", "api_key_env", "timeout_ms", "max_concurrent", "temperature", "fallback_to_stub"});
  read(rem, "url", c.generator.remote.url);
  read(rem, "model", c.generator.remote.model);
  read(rem, "api_key_env", c.generator.remote.api_key_env);
  read(rem, "timeout_ms", c.generator.remote.timeout_ms);
  read(rem, "max_concurrent", c.generator.remote.max_concurrent);
  read(rem, "temperature", c.generator.remote.temperature);
  read(rem, "fallback_to_stub", c.generator.fallback_to_stub);
  c.generator.remote.max_tokens = c.generator.max_tokens;

  const auto rt = root["retrieval"];
  detail::check_keys(rt, "retrieval", {"k"});
  read(rt, "k", c.k);

  const auto df = root["defenses"];
  detail::check_keys(df, "defenses", {"apply", "rare_token_freq_threshold", "lexicon_density_threshold",
                                      "ppl_threshold_multiplier"});
  read(df, "apply", c.defenses);
  read(df, "rare_token_freq_threshold", c.defense.rare_token_freq_threshold);
  read(df, "lexicon_density_threshold", c.defense.lexicon_density_threshold);
  read(df, "ppl_threshold_multiplier", c.defense.ppl_threshold_multiplier);

  const auto ps = root["persistence"];
  detail::check_keys(ps, "persistence", {"steps", "learning_rate", "batch_size"});
  read(ps, "steps", c.persistence_steps);
  read(ps, "learning_rate", c.finetune.learning_rate);
  read(ps, "batch_size", c.finetune.batch_size);

  const auto ab = root["ablation"];
  detail::check_keys(ab, "ablation", {"disable_phase1", "disable_phase2", "run_ablations", "run_gamma_zero"});
  read(ab, "disable_phase1", c.disable_phase1);
  read(ab, "disable_phase2", c.disable_phase2);
  read(ab, "run_ablations", c.run_ablations);
  read(ab, "run_gamma_zero", c.run_gamma_zero);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw InvalidArgument("config: cannot open " + path);
  } catch (const YAML::Exception& e) {
    throw InvalidArgument("config: " + path + ": " + e.what());
  }
  return config_from_yaml(root);
}

inline ExperimentConfig parse_config(const std::string& text) {
  try {
    return config_from_yaml(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
}

// Effective configuration as recorded in the report. The remote key is
// referenced by variable name only.
inline Json config_to_json(const ExperimentConfig& c) {
  const auto& d = c.dataset;
  Json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"dir", c.data_dir},
                  {"groups", d.n_groups},
                  {"queries_per_group", d.queries_per_group},
                  {"docs_per_query", d.docs_per_query},
                  {"queries_per_gold_doc", d.queries_per_gold_doc},
                  {"distractor_docs", d.distractor_docs},
                  {"context_docs_per_group", d.context_docs_per_group},
                  {"marker_count", d.marker_count},
                  {"descriptors_per_group", d.descriptors_per_group},
                  {"descriptors_per_query", d.descriptors_per_query},
                  {"topics_per_cluster", d.topics_per_cluster},
                  {"topics_per_query", d.topics_per_query},
                  {"vocab_size", d.vocab_size},
                  {"eval_fraction", d.eval_fraction}};
  j["attack"] = {{"attribute", c.attribute},
                 {"target_group", c.target_group},
                 {"triggers", c.triggers},
                 {"lexicon_path", c.lexicon_path}};
  j["encoder"] = {{"dim", c.embed_dim}};
  j["lm"] = {{"order", c.lm_order}, {"alpha", c.lm_alpha}};
  j["clean_training"] = {{"learning_rate", c.clean.learning_rate},
                         {"batch_size", c.clean.batch_size},
                         {"epochs", c.clean.epochs},
                         {"negatives_per_sample", c.clean.negatives_per_sample}};
  j["phase1"] = {{"lambda_nontarget", c.phase1.lambda_nontarget},
                 {"lambda_clean", c.phase1.lambda_clean},
                 {"learning_rate", c.phase1.learning_rate},
                 {"epochs", c.phase1.epochs},
                 {"batch_size", c.phase1.batch_size},
                 {"negatives_per_sample", c.phase1.negatives_per_sample},
                 {"bias_words_per_sample", c.phase1.bias_words_per_sample}};
  j["phase2"] = {{"beam_width", c.phase2.beam_width},
                 {"max_len", c.phase2.max_len},
                 {"weight_sim", c.phase2.weight_sim},
                 {"weight_bias", c.phase2.weight_bias},
                 {"weight_ppl", c.phase2.weight_ppl},
                 {"inject_count", c.inject_count},
                 {"score_on_output", c.score_on_output},
                 {"probe_queries", c.probe_queries},
                 {"exclude_other_groups", c.exclude_other_groups}};
  Json gen = {{"kind", c.generator.kind}, {"max_tokens", c.generator.max_tokens}};
  if (c.generator.kind == "remote") {
    gen["remote"] = {{"url", c.generator.remote.url},
                     {"model", c.generator.remote.model},
                     {"api_key_env", c.generator.remote.api_key_env},
                     {"timeout_ms", c.generator.remote.timeout_ms},
                     {"max_concurrent", c.generator.remote.max_concurrent},
                     {"temperature", c.generator.remote.temperature},
                     {"fallback_to_stub", c.generator.fallback_to_stub}};
  }
  j["generator"] = gen;
  j["retrieval"] = {{"k", c.k}};
  j["defenses"] = {{"apply", c.defenses},
                   {"rare_token_freq_threshold", c.defense.rare_token_freq_threshold},
                   {"lexicon_density_threshold", c.defense.lexicon_density_threshold},
                   {"ppl_threshold_multiplier", c.defense.ppl_threshold_multiplier}};
  j["persistence"] = {{"steps", c.persistence_steps},
                      {"learning_rate", c.finetune.learning_rate},
                      {"batch_size", c.finetune.batch_size}};
  j["ablation"] = {{"disable_phase1", c.disable_phase1},
                   {"disable_phase2", c.disable_phase2},
                   {"run_ablations", c.run_ablations},
                   {"run_gamma_zero", c.run_gamma_zero}};
  return j;
}

inline YAML::Node json_to_yaml(const Json& j) {
  YAML::Node n;
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) n[k] = json_to_yaml(v);
  } else if (j.is_array()) {
    n = YAML::Node(YAML::NodeType::Sequence);
    for (const auto& v : j) n.push_back(json_to_yaml(v));
  } else if (j.is_string()) {
    n = j.get<std::string>();
  } else if (j.is_boolean()) {
    n = j.get<bool>();
  } else if (j.is_number_unsigned()) {
    n = j.get<std::uint64_t>();
  } else if (j.is_number_integer()) {
    n = j.get<std::int64_t>();
  } else if (j.is_number_float()) {
    n = j.get<double>();
  }
  return n;
}

// Round-trips through config_from_yaml.
inline std::string config_to_yaml(const ExperimentConfig& c) {
  Json j = config_to_json(c);
  j["workers"] = c.workers;
  YAML::Emitter out;
  out << json_to_yaml(j);
  return std::string(out.c_str()) + "\n";
}

}  // namespace ragtrap
