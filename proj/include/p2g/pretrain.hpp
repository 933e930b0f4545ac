#pragma once

#include "p2g/pipeline.hpp"

namespace p2g {

struct PretrainConfig {
  int steps = 800;
  int batch_size = 16;
  double mask_probability = 0.15;
  double learning_rate = 3e-4;
  double weight_decay = 1e-8;
  uint64_t seed = 42;
  int threads = 0;
  int log_every = 50;
};

struct PretrainResult {
  // (step, mean masked cross-entropy over the step's batch)
  std::vector<std::pair<int, double>> loss_log;
  double final_loss = 0.0;  // mean over the last logging window
};

// Masked-token objective over "[CLS] chain-text [SEP]" sequences. Only the
// backbone parameter group is updated.
PretrainResult pretrain(Model& model, const std::vector<ScriptInstance>& corpus,
                        const PretrainConfig& cfg);

// Cross-entropy at masked_positions of token_ids (inputs replaced by [MASK]),
// scaled by `scale`; the building block of both pretraining and its tests.
Var masked_cross_entropy(Tape& tape, ParamBinding& bind, Model& model,
                         const std::vector<int>& token_ids,
                         const std::vector<int>& masked_positions, double scale,
                         bool train_mode = false, Rng* dropout_rng = nullptr);

// Deterministic-mask held-out loss; max_instances = 0 evaluates everything.
double masked_lm_loss(Model& model, const std::vector<ScriptInstance>& corpus,
                      double mask_probability, uint64_t seed, int threads,
                      int max_instances = 0);

}  // namespace p2g
