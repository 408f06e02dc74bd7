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

#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <tuple>
#include <sstream>
#include <string>
#include <vector>

#include "ragtrap/harness/config.hpp"
#include "ragtrap/harness/experiment.hpp"
#include "ragtrap/harness/io.hpp"
#include "ragtrap/hash.hpp"

namespace ragtrap {

namespace fs = std::filesystem;

inline constexpr const char* kReportSchema = "ragtrap-report/1";

// Parameters the attack description leaves open, with the values this run
// used. Kept in the report as an audit trail.
inline Json audit_defaults(const ExperimentConfig& c) {
  Json a = Json::array();
  auto add = [&](const std::string& name, Json value, const std::string& note) {
    a.push_back({{"parameter", name}, {"value", std::move(value)}, {"note", note}});
  };
  add("phase2.beam_width", c.phase2.beam_width, "beam width B");
  add("phase2.max_len", c.phase2.max_len, "crafted document length L in tokens");
  add("phase2.weight_sim", c.phase2.weight_sim, "alpha, retrieval-alignment weight");
  add("phase2.weight_bias", c.phase2.weight_bias, "beta, bias-presence weight");
  add("phase2.weight_ppl", c.phase2.weight_ppl, "gamma, naturalness weight on ppl / reference median");
  add("phase2.inject_count", c.inject_count, "documents injected into the knowledge base");
  add("phase2.score_on_output", c.score_on_output, "bias term measured on stub output instead of the document");
  add("phase2.probe_queries", c.probe_queries, "triggered queries used by the output probe");
  add("phase2.exclude_other_groups", c.exclude_other_groups, "non-target group words removed from the crafting vocabulary");
  add("phase1.lambda_nontarget", c.phase1.lambda_nontarget, "weight of the non-target loss");
  add("phase1.lambda_clean", c.phase1.lambda_clean, "weight of the clean loss");
  add("phase1.learning_rate", c.phase1.learning_rate, "SGD step size, query table only");
  add("phase1.epochs", c.phase1.epochs, "epochs over the target set");
  add("phase1.batch_size", c.phase1.batch_size, "per-set mini-batch size");
  add("phase1.negatives_per_sample", c.phase1.negatives_per_sample, "mined hard negatives m");
  add("phase1.bias_words_per_sample", c.phase1.bias_words_per_sample, "bias subset size, 0 = whole lexicon");
  add("clean_training.epochs", c.clean.epochs, "clean retriever epochs");
  add("clean_training.learning_rate", c.clean.learning_rate, "clean retriever step size");
  add("encoder.dim", c.embed_dim, "embedding dimension d");
  add("lm.order", c.lm_order, "n-gram order");
  add("lm.alpha", c.lm_alpha, "additive smoothing");
  add("retrieval.k", c.k, "documents passed to the generator");
  add("generator.max_tokens", c.generator.max_tokens, "output budget");
  add("defenses.rare_token_freq_threshold", c.defense.rare_token_freq_threshold, "query rewriting strips rarer tokens");
  add("defenses.lexicon_density_threshold", c.defense.lexicon_density_threshold, "data filtering cutoff");
  add("defenses.ppl_threshold_multiplier", c.defense.ppl_threshold_multiplier, "x clean-corpus median perplexity");
  add("persistence.steps", c.persistence_steps, "clean fine-tuning mini-batch updates");
  add("persistence.learning_rate", c.finetune.learning_rate, "fine-tuning step size");
  add("trigger_assignment", "round-robin", "i-th query of a set gets trigger i mod |triggers|");
  return a;
}

inline std::uint64_t json_fingerprint(const Json& j) { return fnv1a(j.dump()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Section names in report order.
inline const std::vector<std::string>& report_sections() {
  static const std::vector<std::string> s = {"dataset", "phase1", "crafted", "evaluation", "defenses",
                                             "naturalness", "persistence", "ablation"};
  return s;
}

inline Json build_report(const ExperimentConfig& cfg, const Json& sections, const std::string& status = "ok",
                         const std::string& failed_stage = "", const std::string& error = "") {
  Json r;
  r["schema"] = kReportSchema;
  r["status"] = status;
  if (status != "ok") {
    r["failed_stage"] = failed_stage;
    r["error"] = error;
  }
  const Json cj = config_to_json(cfg);
  r["config"] = cj;
  r["config_fingerprint"] = hex64(json_fingerprint(cj));
  r["lambdas"] = {{"nontarget", cfg.phase1.lambda_nontarget}, {"clean", cfg.phase1.lambda_clean}};
  if (sections.contains("crafted")) {
    r["poisoning_rate"] = sections["crafted"].value("poisoning_rate", 0.0);
  } else {
    r["poisoning_rate"] = 0.0;
  }
  r["defaults"] = audit_defaults(cfg);
  // Full-scale figures for the generation task, kept beside the fixture
  // numbers for comparison only. Nothing is asserted against them.
  r["reference_values"] = {{"t_asr", 0.9005}, {"nt_asr", 0.0692}, {"c_asr", 0.2202}};
  for (const auto& s : report_sections()) {
    if (sections.contains(s)) r[s] = sections[s];
  }
  r["fingerprint"] = hex64(json_fingerprint(r));
  return r;
}

// ------------------------------------------------------------ tables

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string pct(double v) { return num(100.0 * v); }

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) { row(std::move(header)); }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      const auto& c = cells[i];
      if (c.find_first_of(",\"\n") != std::string::npos) {
        out_ << '"';
        for (char ch : c) out_ << (ch == '"' ? std::string("\"\"") : std::string(1, ch));
        out_ << '"';
      } else {
        out_ << c;
      }
    }
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

inline double jnum(const Json& j, const char* key) { return j.contains(key) ? j[key].get<double>() : 0.0; }

}  // namespace detail

// Percent values throughout, as in the usual reporting of these metrics.
inline std::map<std::string, std::string> report_tables(const Json& r) {
  using detail::Csv;
  using detail::jnum;
  using detail::pct;
  std::map<std::string, std::string> t;
  if (r.contains("evaluation")) {
    const auto& e = r["evaluation"];
    Csv asr({"target_group", "t_asr", "nt_asr", "c_asr"});
    asr.row({r["config"]["attack"]["target_group"].get<std::string>(), pct(jnum(e, "t_asr")), pct(jnum(e, "nt_asr")),
             pct(jnum(e, "c_asr"))});
    t["attack_success.csv"] = asr.str();

    Csv util({"system", "exact_match"});
    util.row({"clean", pct(jnum(e, "acc_clean"))});
    util.row({"attacked", pct(jnum(e, "acc_attacked"))});
    t["utility.csv"] = util.str();

    Csv ret({"metric", "value"});
    ret.row({"clean_topk_baseline", pct(jnum(e, "topk_clean_baseline"))});
    ret.row({"clean_topk_attacked", pct(jnum(e, "topk_clean_attacked"))});
    ret.row({"poisoned_topk", pct(jnum(e, "poisoned_topk"))});
    ret.row({"poisoned_topk_nontarget", pct(jnum(e, "poisoned_topk_nontarget"))});
    ret.row({"poisoned_topk_untriggered", pct(jnum(e, "poisoned_topk_untriggered"))});
    t["retrieval.csv"] = ret.str();

    Csv pg({"group", "count", "asr_triggered", "asr_untriggered", "acc_clean", "acc_attacked", "topk_clean",
            "topk_attacked"});
    for (const auto& [g, row] : e["per_group"].items()) {
      pg.row({g, std::to_string(row["count"].get<std::size_t>()), pct(jnum(row, "asr_triggered")),
              pct(jnum(row, "asr_untriggered")), pct(jnum(row, "acc_clean")), pct(jnum(row, "acc_attacked")),
              pct(jnum(row, "topk_clean")), pct(jnum(row, "topk_attacked"))});
    }
    t["per_group.csv"] = pg.str();

    Csv bs({"system", "stereotype", "toxicity", "derogatory", "disparate_impact"});
    for (const char* sys : {"clean", "attacked"}) {
      const auto& b = e[std::string("bias_") + sys];
      bs.row({sys, detail::num(jnum(b, "stereotype")), detail::num(jnum(b, "toxicity")),
              detail::num(jnum(b, "derogatory")), detail::num(jnum(b, "disparate_impact"))});
    }
    t["bias_scores.csv"] = bs.str();
  }
  if (r.contains("defenses")) {
    Csv d({"defense", "t_asr", "nt_asr", "c_asr", "acc_attacked", "acc_clean_defended", "stealth_cost",
           "removed_crafted_fraction", "removed_clean_fraction"});
    for (const auto& row : r["defenses"]) {
      const auto& m = row["metrics"];
      d.row({row["defense"].get<std::string>(), pct(jnum(m, "t_asr")), pct(jnum(m, "nt_asr")), pct(jnum(m, "c_asr")),
             pct(jnum(m, "acc_attacked")), pct(jnum(row, "acc_clean_defended")), pct(jnum(row, "stealth_cost")),
             pct(jnum(row, "removed_crafted_fraction")), pct(jnum(row, "removed_clean_fraction"))});
    }
    t["defenses.csv"] = d.str();
  }
  if (r.contains("persistence")) {
    Csv p({"steps", "t_asr", "c_asr", "nt_asr", "clean_topk", "t_asr_before", "clean_topk_before"});
    for (const auto& row : r["persistence"]) {
      const auto& a = row["after"];
      const auto& b = row["before"];
      p.row({std::to_string(row["steps"].get<std::size_t>()), pct(jnum(a, "t_asr")), pct(jnum(a, "c_asr")),
             pct(jnum(a, "nt_asr")), pct(jnum(a, "clean_topk")), pct(jnum(b, "t_asr")), pct(jnum(b, "clean_topk"))});
    }
    t["persistence.csv"] = p.str();
  }
  if (r.contains("ablation")) {
    Csv a({"variant", "phase1", "phase2", "t_asr", "nt_asr", "c_asr", "poisoned_topk"});
    for (const auto& row : r["ablation"]) {
      a.row({row["variant"].get<std::string>(), row["phase1"].get<bool>() ? "yes" : "no",
             row["phase2"].get<bool>() ? "yes" : "no", pct(jnum(row, "t_asr")), pct(jnum(row, "nt_asr")),
             pct(jnum(row, "c_asr")), pct(jnum(row, "poisoned_topk"))});
    }
    t["ablation.csv"] = a.str();
  }
  if (r.contains("phase1") && r["phase1"].contains("history")) {
    Csv h({"epoch", "target", "nontarget", "clean", "total"});
    for (const auto& row : r["phase1"]["history"]) {
      h.row({std::to_string(row["epoch"].get<std::size_t>()), detail::num(jnum(row, "target")),
             detail::num(jnum(row, "nontarget")), detail::num(jnum(row, "clean")), detail::num(jnum(row, "total"))});
    }
    t["phase1_loss.csv"] = h.str();
  }
  return t;
}

inline std::string summary_markdown(const Json& r) {
  using detail::jnum;
  using detail::pct;
  std::ostringstream md;
  md << "# ragtrap run summary\n\n";
  md << "- status: " << r["status"].get<std::string>() << "\n";
  if (r["status"] != "ok") {
    md << "- failed stage: " << r["failed_stage"].get<std::string>() << "\n";
    md << "- error: " << r["error"].get<std::string>() << "\n";
  }
  md << "- seed: " << r["config"]["seed"].get<std::uint64_t>() << "\n";
  md << "- target group: " << r["config"]["attack"]["target_group"].get<std::string>() << "\n";
  md << "- poisoning rate: " << pct(jnum(r, "poisoning_rate")) << "%\n";
  md << "- lambdas: nontarget " << detail::num(r["lambdas"]["nontarget"].get<double>()) << ", clean "
     << detail::num(r["lambdas"]["clean"].get<double>()) << "\n";
  md << "- fingerprint: " << r["fingerprint"].get<std::string>() << "\n\n";
  if (r.contains("evaluation")) {
    const auto& e = r["evaluation"];
    md << "## Attack success (%)\n\n| T-ASR | NT-ASR | C-ASR |\n|---|---|---|\n";
    md << "| " << pct(jnum(e, "t_asr")) << " | " << pct(jnum(e, "nt_asr")) << " | " << pct(jnum(e, "c_asr")) << " |\n\n";
    md << "## Utility and retrieval (%)\n\n| metric | clean | attacked |\n|---|---|---|\n";
    md << "| exact match | " << pct(jnum(e, "acc_clean")) << " | " << pct(jnum(e, "acc_attacked")) << " |\n";
    md << "| clean top-k | " << pct(jnum(e, "topk_clean_baseline")) << " | " << pct(jnum(e, "topk_clean_attacked"))
       << " |\n";
    md << "| poisoned top-k (triggered target) | - | " << pct(jnum(e, "poisoned_topk")) << " |\n\n";
  }
  if (r.contains("ablation")) {
    md << "## Ablation (%)\n\n| variant | T-ASR | NT-ASR | C-ASR |\n|---|---|---|---|\n";
    for (const auto& row : r["ablation"]) {
      md << "| " << row["variant"].get<std::string>() << " | " << pct(jnum(row, "t_asr")) << " | "
         << pct(jnum(row, "nt_asr")) << " | " << pct(jnum(row, "c_asr")) << " |\n";
    }
    md << "\n";
  }
  if (r.contains("defenses")) {
    md << "## Defenses (%)\n\n| defense | T-ASR | crafted removed | clean removed | stealth cost |\n|---|---|---|---|---|\n";
    for (const auto& row : r["defenses"]) {
      md << "| " << row["defense"].get<std::string>() << " | " << pct(jnum(row["metrics"], "t_asr")) << " | "
         << pct(jnum(row, "removed_crafted_fraction")) << " | " << pct(jnum(row, "removed_clean_fraction")) << " | "
         << pct(jnum(row, "stealth_cost")) << " |\n";
    }
    md << "\n";
  }
  if (r.contains("naturalness")) {
    const auto& n = r["naturalness"];
    md << "## Perplexity filter vs naturalness weight\n\n";
    md << "- configured weight " << detail::num(n["configured"]["weight_ppl"].get<double>()) << ": "
       << pct(jnum(n["configured"], "crafted_removed_fraction")) << "% of crafted docs removed\n";
    if (n.contains("zero")) {
      md << "- weight 0: " << pct(jnum(n["zero"], "crafted_removed_fraction")) << "% of crafted docs removed\n";
    }
    md << "- clean docs removed: " << pct(jnum(n, "clean_removed_fraction")) << "%\n\n";
  }
  if (r.contains("persistence")) {
    md << "## Persistence under clean fine-tuning (%)\n\n| steps | T-ASR | clean top-k |\n|---|---|---|\n";
    for (const auto& row : r["persistence"]) {
      md << "| " << row["steps"].get<std::size_t>() << " | " << pct(jnum(row["after"], "t_asr")) << " | "
         << pct(jnum(row["after"], "clean_topk")) << " |\n";
    }
    md << "\n";
  }
  return md.str();
}

inline void write_report(const fs::path& out, const Json& report) {
  fs::create_directories(out / "tables");
  io::write_text((out / "report.json").string(), report.dump(2) + "\n");
  for (const auto& [name, body] : report_tables(report)) io::write_text((out / "tables" / name).string(), body);
  io::write_text((out / "summary.md").string(), summary_markdown(report));
}

// ------------------------------------------------------------ full run

struct RunOutcome {
  Json report;
  bool ok = true;
  std::string failed_stage;
  std::string error;
};

inline Json dataset_section(const Workspace& ws) {
  const auto& d = ws.data();
  return {{"documents", d.corpus.size()},
          {"train_queries", d.train.size()},
          {"eval_queries", d.eval.size()},
          {"vocab_size", ws.vocab().size()},
          {"groups", d.lexicon.group_words.size()},
          {"bias_words", d.lexicon.bias_words.size()},
          {"triggers", ws.config().triggers},
          {"reference_median_ppl", ws.reference_ppl()},
          {"vocab_fingerprint", hex64(ws.vocab().fingerprint())}};
}

inline void write_json(const fs::path& path, const Json& j) {
  fs::create_directories(path.parent_path());
  io::write_text(path.string(), j.dump(2) + "\n");
}

inline Json read_json(const fs::path& path) {
  auto j = Json::parse(io::read_text(path.string()), nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": malformed JSON");
  return j;
}

inline Json crafted_section(bool ran, const std::vector<RawDocument>& raw, const std::vector<CraftedDoc>& crafted,
                            const KnowledgeBase& atk_kb) {
  return {{"ran", ran},
          {"injected_docs", raw.size()},
          {"kb_size", atk_kb.size()},
          {"poisoning_rate", atk_kb.poisoning_rate()},
          {"docs", crafted_to_json(raw, crafted)}};
}

inline Json ablation_entry(const std::string& variant, bool p1, bool p2, const EvalMetrics& m) {
  return {{"variant", variant},         {"phase1", p1},          {"phase2", p2},
          {"t_asr", m.t_asr},           {"nt_asr", m.nt_asr},    {"c_asr", m.c_asr},
          {"poisoned_topk", m.poisoned_topk}, {"acc_attacked", m.acc_attacked}};
}

// Whole pipeline in fixed stage order. When `out` is given, intermediate
// artifacts are written next to the report. A failing stage stops the run;
// the sections finished so far are kept in a report marked failed.
inline RunOutcome run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& out = std::nullopt) {
  Json sections = Json::object();
  RunOutcome result;
  auto save = [&](const std::string& name) {
    if (out) write_json(*out / "results" / (name + ".json"), sections[name]);
  };
  try {
    run_stage("config", [&] { cfg.validate(); });
    auto wsp = run_stage("gen-data", [&] {
      DatasetBundle data = load_dataset(cfg);
      if (out) write_dataset(*out / "data", data);
      return std::make_unique<Workspace>(cfg, std::move(data));
    });
    const Workspace& ws = *wsp;
    sections["dataset"] = dataset_section(ws);
    save("dataset");

    const CleanSystem clean = run_stage("train-clean", [&] {
      auto c = build_clean_system(ws, train_clean_encoder(ws));
      if (out) {
        fs::create_directories(*out / "models");
        save_encoder(*c.encoder, (*out / "models" / "clean.bin").string());
      }
      return c;
    });

    const bool p1 = !cfg.disable_phase1;
    const bool p2 = !cfg.disable_phase2;
    std::optional<Phase1Result> phase1;
    if (p1 || cfg.run_ablations) phase1 = run_stage("attack-phase1", [&] { return run_phase1(ws, *clean.encoder); });
    sections["phase1"] = {{"ran", p1}, {"history", p1 ? history_to_json(phase1->history) : Json::array()}};
    save("phase1");
    const DualEncoder& serving = p1 ? phase1->encoder : *clean.encoder;
    if (out) save_encoder(serving, (*out / "models" / "attacked.bin").string());

    const auto crafted = run_stage("craft", [&] { return p2 ? craft_stage(ws, serving) : std::vector<CraftedDoc>{}; });
    const auto raw = crafted_as_raw(crafted);
    const KnowledgeBase atk_kb = run_stage("inject", [&] {
      auto kb = inject_docs(ws.indexed_clean_kb(serving), serving, raw, ws.vocab());
      if (out) {
        io::write_corpus((*out / "data" / "crafted.jsonl").string(), raw);
        io::write_kb_snapshot((*out / "data" / "kb_attacked.jsonl").string(), kb);
      }
      return kb;
    });
    sections["crafted"] = crafted_section(p2, raw, crafted, atk_kb);
    save("crafted");

    const EvalMetrics main = run_stage("evaluate", [&] {
      return compute_metrics(ws, clean.outcomes, run_system(ws, {&atk_kb, &serving, false}), serving);
    });
    sections["evaluation"] = metrics_to_json(main);
    save("evaluation");

    run_stage("defend", [&] {
      Json arr = Json::array();
      for (const auto& d : cfg.defenses) {
        arr.push_back(defense_to_json(
            apply_defense(ws, d, clean.kb, *clean.encoder, atk_kb, serving, main.acc_clean)));
      }
      sections["defenses"] = arr;
      if (p2) sections["naturalness"] = naturalness_study(ws, serving, crafted, cfg.run_gamma_zero);
    });
    save("defenses");
    if (sections.contains("naturalness")) save("naturalness");

    run_stage("persist", [&] {
      sections["persistence"] = persistence_to_json(persistence_stage(ws, serving, atk_kb, clean.outcomes));
    });
    save("persistence");

    if (cfg.run_ablations) {
      run_stage("ablation", [&] {
        Json arr = Json::array();
        const std::vector<std::tuple<std::string, bool, bool>> variants = {
            {"full", true, true}, {"phase1_only", true, false}, {"phase2_only", false, true}, {"no_attack", false, false}};
        for (const auto& [name, a, b] : variants) {
          if (a == p1 && b == p2) {
            arr.push_back(ablation_entry(name, a, b, main));
            continue;
          }
          const DualEncoder& enc = a ? phase1->encoder : *clean.encoder;
          arr.push_back(ablation_entry(name, a, b, attack_with(ws, clean, enc, a, b).metrics));
        }
        sections["ablation"] = arr;
      });
      save("ablation");
    }
  } catch (const StageError& e) {
    result.ok = false;
    result.failed_stage = e.stage();
    result.error = e.what();
  }
  result.report = build_report(cfg, sections, result.ok ? "ok" : "failed", result.failed_stage, result.error);
  return result;
}

// ------------------------------------------------------------ staged CLI

// Stage-by-stage execution over an artifact directory:
//   data/{corpus,train,eval}.jsonl, data/lexicon.json   gen-data
//   models/clean.bin                                    train-clean
//   models/attacked.bin, results/phase1.json            attack-phase1
//   data/crafted.jsonl, results/crafted_docs.json       craft
//   data/kb_attacked.jsonl, results/crafted.json        inject
//   results/{evaluation,defenses,persistence}.json      evaluate, defend, persist
// Each stage reads what earlier stages wrote.
class StagedRunner {
 public:
  StagedRunner(ExperimentConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {}

  void gen_data() {
    run_stage("gen-data", [&] {
      cfg_.validate();
      const auto data = load_dataset(cfg_);
      write_dataset(out_ / "data", data);
      Workspace ws(cfg_, data);
      write_json(out_ / "results" / "dataset.json", dataset_section(ws));
    });
  }

  void train_clean() {
    run_stage("train-clean", [&] {
      const auto& ws = workspace();
      fs::create_directories(out_ / "models");
      save_encoder(train_clean_encoder(ws), path("models/clean.bin"));
    });
  }

  void attack_phase1() {
    run_stage("attack-phase1", [&] {
      const auto& ws = workspace();
      const DualEncoder clean = load_encoder(path("models/clean.bin"));
      if (cfg_.disable_phase1) {
        save_encoder(clean, path("models/attacked.bin"));
        write_json(out_ / "results" / "phase1.json", {{"ran", false}, {"history", Json::array()}});
        return;
      }
      const auto r = run_phase1(ws, clean);
      save_encoder(r.encoder, path("models/attacked.bin"));
      write_json(out_ / "results" / "phase1.json", {{"ran", true}, {"history", history_to_json(r.history)}});
    });
  }

  void craft() {
    run_stage("craft", [&] {
      const auto& ws = workspace();
      const DualEncoder enc = load_encoder(path("models/attacked.bin"));
      std::vector<CraftedDoc> docs;
      if (!cfg_.disable_phase2) docs = craft_stage(ws, enc);
      const auto raw = crafted_as_raw(docs);
      io::write_corpus(path("data/crafted.jsonl"), raw);
      write_json(out_ / "results" / "crafted_docs.json", crafted_to_json(raw, docs));
    });
  }

  void inject() {
    run_stage("inject", [&] {
      const auto& ws = workspace();
      const DualEncoder enc = load_encoder(path("models/attacked.bin"));
      const auto raw = io::read_corpus(path("data/crafted.jsonl"));
      const auto kb = inject_docs(ws.indexed_clean_kb(enc), enc, raw, ws.vocab());
      io::write_kb_snapshot(path("data/kb_attacked.jsonl"), kb);
      write_json(out_ / "results" / "crafted.json", {{"ran", !cfg_.disable_phase2},
                                                     {"injected_docs", raw.size()},
                                                     {"kb_size", kb.size()},
                                                     {"poisoning_rate", kb.poisoning_rate()},
                                                     {"docs", read_json(out_ / "results" / "crafted_docs.json")}});
    });
  }

  void evaluate() {
    run_stage("evaluate", [&] {
      const auto& ws = workspace();
      const auto clean = build_clean_system(ws, load_encoder(path("models/clean.bin")));
      const DualEncoder enc = load_encoder(path("models/attacked.bin"));
      const auto kb = attacked_kb(ws, enc);
      const auto m = compute_metrics(ws, clean.outcomes, run_system(ws, {&kb, &enc, false}), enc);
      write_json(out_ / "results" / "evaluation.json", metrics_to_json(m));
    });
  }

  void defend() {
    run_stage("defend", [&] {
      const auto& ws = workspace();
      const auto clean = build_clean_system(ws, load_encoder(path("models/clean.bin")));
      const DualEncoder enc = load_encoder(path("models/attacked.bin"));
      const auto kb = attacked_kb(ws, enc);
      const auto main = compute_metrics(ws, clean.outcomes, run_system(ws, {&kb, &enc, false}), enc);
      Json arr = Json::array();
      for (const auto& d : cfg_.defenses) {
        arr.push_back(defense_to_json(apply_defense(ws, d, clean.kb, *clean.encoder, kb, enc, main.acc_clean)));
      }
      write_json(out_ / "results" / "defenses.json", arr);
      if (!cfg_.disable_phase2) {
        std::vector<CraftedDoc> crafted;
        for (const auto& d : kb.docs()) {
          if (d.poisoned) crafted.push_back({d.tokens, 0.0, {}});
        }
        write_json(out_ / "results" / "naturalness.json", naturalness_study(ws, enc, crafted, cfg_.run_gamma_zero));
      }
    });
  }

  void persist() {
    run_stage("persist", [&] {
      const auto& ws = workspace();
      const auto clean = build_clean_system(ws, load_encoder(path("models/clean.bin")));
      const DualEncoder enc = load_encoder(path("models/attacked.bin"));
      const auto kb = attacked_kb(ws, enc);
      write_json(out_ / "results" / "persistence.json",
                 persistence_to_json(persistence_stage(ws, enc, kb, clean.outcomes)));
    });
  }

  Json report() {
    return run_stage("report", [&] {
      Json sections = Json::object();
      for (const auto& s : report_sections()) {
        const auto p = out_ / "results" / (s + ".json");
        if (fs::exists(p)) sections[s] = read_json(p);
      }
      const Json r = build_report(cfg_, sections);
      write_report(out_, r);
      return r;
    });
  }

 private:
  std::string path(const std::string& rel) const { return (out_ / rel).string(); }

  const Workspace& workspace() {
    if (!ws_) {
      ExperimentConfig c = cfg_;
      if (c.data_dir.empty() && fs::exists(out_ / "data" / "corpus.jsonl")) c.data_dir = (out_ / "data").string();
      ws_ = std::make_unique<Workspace>(c, load_dataset(c));
    }
    return *ws_;
  }

  KnowledgeBase attacked_kb(const Workspace& ws, const DualEncoder& enc) const {
    auto kb = io::kb_from_snapshot(io::read_kb_snapshot(path("data/kb_attacked.jsonl")), ws.vocab());
    kb.index(enc);
    return kb;
  }

  ExperimentConfig cfg_;
  fs::path out_;
  std::unique_ptr<Workspace> ws_;
};

}  // namespace ragtrap
