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

// Clean fine-tuning of a (possibly poisoned) query encoder and the
// before/after backdoor measurement protocol.

#include <functional>
#include <vector>

#include "ragtrap/encoder.hpp"
#include "ragtrap/error.hpp"
#include "ragtrap/parallel.hpp"
#include "ragtrap/phase1.hpp"
#include "ragtrap/retrieval.hpp"

namespace ragtrap {

struct FinetuneConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
};

// `steps` mini-batch updates of the standard contrastive loss with
// in-batch negatives, query table only.
inline DualEncoder finetune_clean(const DualEncoder& enc, const KnowledgeBase& kb,
                                  const std::vector<RetrievalSample>& clean_samples, long long steps,
                                  const FinetuneConfig& cfg) {
  if (steps < 0) throw InvalidArgument("finetune_clean: steps must be >= 0");
  if (steps == 0) return enc;
  if (clean_samples.empty()) throw InvalidArgument("finetune_clean: no clean samples");
  RetrieverTrainConfig rc;
  rc.learning_rate = cfg.learning_rate;
  rc.batch_size = cfg.batch_size;
  rc.steps = static_cast<std::size_t>(steps);
  rc.negatives = NegativeMode::kInBatch;
  rc.seed = cfg.seed;
  return train_retriever(enc, kb, clean_samples, rc).encoder;
}

struct BackdoorMetrics {
  double t_asr = 0.0;
  double c_asr = 0.0;
  double nt_asr = 0.0;
  double clean_topk = 0.0;
};

struct PersistenceResult {
  std::size_t steps = 0;
  BackdoorMetrics before;
  BackdoorMetrics after;
};

using BackdoorEvaluator = std::function<BackdoorMetrics(const DualEncoder&)>;

// For every step count, fine-tunes an independent copy of the encoder and
// re-runs the evaluator. The input encoder is never modified.
inline std::vector<PersistenceResult> persistence_eval(const DualEncoder& poisoned, const KnowledgeBase& kb,
                                                       const std::vector<RetrievalSample>& clean_samples,
                                                       const std::vector<std::size_t>& steps_list,
                                                       const FinetuneConfig& cfg, const BackdoorEvaluator& evaluate) {
  const BackdoorMetrics before = evaluate(poisoned);
  std::vector<PersistenceResult> out(steps_list.size());
  for (std::size_t i = 0; i < steps_list.size(); ++i) {
    const DualEncoder tuned = finetune_clean(poisoned, kb, clean_samples, static_cast<long long>(steps_list[i]), cfg);
    out[i].steps = steps_list[i];
    out[i].before = before;
    out[i].after = evaluate(tuned);
  }
  return out;
}

}  // namespace ragtrap
