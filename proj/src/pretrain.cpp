#include "p2g/pretrain.hpp"

#include <cmath>

namespace p2g {

namespace {

std::vector<int> sequence_ids(const ScriptInstance& inst, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.push_back(Vocabulary::kCls);
  for (const Event& e : inst.chain)
    for (const std::string& tok : event_to_tokens(e)) ids.push_back(vocab.id_or_unk(tok));
  ids.push_back(Vocabulary::kSep);
  return ids;
}

// Mask positions among the chain tokens (never [CLS]/[SEP]); at least one.
std::vector<int> draw_mask_positions(int seq_len, double p, Rng& rng) {
  std::vector<int> masked;
  for (int i = 1; i < seq_len - 1; ++i)
    if (rng.bernoulli(p)) masked.push_back(i);
  if (masked.empty()) masked.push_back(1 + rng.uniform_int(seq_len - 2));
  return masked;
}

}  // namespace

// Scaled CE at the masked positions; with scale = 1/total_masked a
// per-sequence backward sums to the batch mean.
Var masked_cross_entropy(Tape& tape, ParamBinding& bind, Model& model,
                         const std::vector<int>& ids, const std::vector<int>& masked,
                         double inv_total, bool train_mode, Rng* dropout_rng) {
  std::vector<int> corrupted = ids;
  for (int pos : masked) corrupted[pos] = Vocabulary::kMask;
  Var rows = model.backbone.embed(tape, bind, corrupted);
  std::vector<bool> real(ids.size(), true);
  Var states = model.backbone.encode(tape, bind, rows, real, train_mode, dropout_rng);
  Var picked = tape.gather_rows(states, masked);
  Var logits = model.backbone.mlm_logits(tape, bind, picked);
  Var lse = tape.logsumexp_rows(logits);

  Mat onehot = Mat::Zero(static_cast<Eigen::Index>(masked.size()), model.vocab.size());
  for (size_t r = 0; r < masked.size(); ++r) onehot(static_cast<Eigen::Index>(r), ids[masked[r]]) = 1.0;
  Var gold_logit = tape.sum(tape.cmul(logits, tape.constant(std::move(onehot))));
  return tape.scale(tape.sub(tape.sum(lse), gold_logit), inv_total);
}

PretrainResult pretrain(Model& model, const std::vector<ScriptInstance>& corpus,
                        const PretrainConfig& cfg) {
  if (corpus.empty()) throw data_error("pretraining corpus is empty");
  if (cfg.mask_probability <= 0.0 || cfg.mask_probability > 1.0)
    throw data_error("no masked positions: mask_probability must lie in (0, 1]");
  if (cfg.steps < 0 || cfg.batch_size < 1) throw data_error("invalid pretrain schedule");

  std::vector<std::vector<int>> sequences;
  sequences.reserve(corpus.size());
  for (const ScriptInstance& inst : corpus) sequences.push_back(sequence_ids(inst, model.vocab));

  // Heads frozen: zero learning rate still skips their decay term.
  AdamW optimizer(cfg.learning_rate, 0.0, cfg.weight_decay);
  PretrainResult result;
  const int tensor_count = model.params.count();
  double window = 0.0;
  int window_n = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    Rng batch_rng(mix_key({cfg.seed, 0x9B17ULL, static_cast<uint64_t>(step)}));
    std::vector<int> batch(cfg.batch_size);
    for (int& b : batch) b = batch_rng.uniform_int(static_cast<int>(sequences.size()));

    std::vector<std::vector<int>> masks(cfg.batch_size);
    int total_masked = 0;
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      Rng mask_rng(
          mix_key({cfg.seed, 0x3A5FULL, static_cast<uint64_t>(step), static_cast<uint64_t>(slot)}));
      masks[slot] = draw_mask_positions(static_cast<int>(sequences[batch[slot]].size()),
                                        cfg.mask_probability, mask_rng);
      total_masked += static_cast<int>(masks[slot].size());
    }
    const double inv_total = 1.0 / total_masked;

    std::vector<std::vector<Mat>> grad_buffers(cfg.batch_size);
    std::vector<double> losses(cfg.batch_size, 0.0);
    parallel_for(cfg.batch_size, cfg.threads, [&](int slot) {
      grad_buffers[slot].resize(tensor_count);
      Tape tape;
      ParamBinding bind(tape, model.params, &grad_buffers[slot]);
      Rng dropout_rng(
          mix_key({cfg.seed, 0xD12ULL, static_cast<uint64_t>(step), static_cast<uint64_t>(slot)}));
      Var loss = masked_cross_entropy(tape, bind, model, sequences[batch[slot]], masks[slot],
                                      inv_total, true, &dropout_rng);
      losses[slot] = loss.value()(0, 0);
      tape.backward(loss);
    });

    model.params.zero_grads();
    double step_loss = 0.0;
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      step_loss += losses[slot];
      for (int t = 0; t < tensor_count; ++t)
        if (grad_buffers[slot][t].size() > 0) model.params.at(t).grad += grad_buffers[slot][t];
    }
    if (!std::isfinite(step_loss))
      throw nan_error("NaN masked-LM loss at pretraining step " + std::to_string(step));
    optimizer.step(model.params);

    window += step_loss;
    ++window_n;
    if ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
      result.loss_log.emplace_back(step + 1, window / window_n);
      result.final_loss = window / window_n;
      window = 0.0;
      window_n = 0;
    }
  }
  return result;
}

double masked_lm_loss(Model& model, const std::vector<ScriptInstance>& corpus,
                      double mask_probability, uint64_t seed, int threads, int max_instances) {
  if (corpus.empty()) throw data_error("evaluation corpus is empty");
  if (mask_probability <= 0.0 || mask_probability > 1.0)
    throw data_error("no masked positions: mask_probability must lie in (0, 1]");
  const int n = max_instances > 0 ? std::min<int>(max_instances, static_cast<int>(corpus.size()))
                                  : static_cast<int>(corpus.size());
  std::vector<double> sums(n, 0.0);
  std::vector<int> counts(n, 0);
  parallel_for(n, threads, [&](int i) {
    std::vector<int> ids = sequence_ids(corpus[i], model.vocab);
    Rng mask_rng(mix_key({seed, 0x4E1DULL, static_cast<uint64_t>(i)}));
    std::vector<int> masked = draw_mask_positions(static_cast<int>(ids.size()), mask_probability,
                                                  mask_rng);
    Tape tape;
    ParamBinding bind(tape, model.params);
    Var loss = masked_cross_entropy(tape, bind, model, ids, masked, 1.0, false, nullptr);
    sums[i] = loss.value()(0, 0);
    counts[i] = static_cast<int>(masked.size());
  });
  double total = 0.0;
  int count = 0;
  for (int i = 0; i < n; ++i) {
    total += sums[i];
    count += counts[i];
  }
  return total / count;
}

}  // namespace p2g
