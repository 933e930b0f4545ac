#include "p2g/pipeline.hpp"

#include <chrono>
#include <cmath>

namespace p2g {

SignConvention sign_convention_from_string(const std::string& s) {
  if (s == "negated") return SignConvention::Negated;
  if (s == "paper-literal" || s == "paper_literal") return SignConvention::PaperLiteral;
  throw usage_error("divergence sign must be 'negated' or 'paper-literal', got '" + s + "'");
}

const char* to_string(SignConvention s) {
  return s == SignConvention::Negated ? "negated" : "paper-literal";
}

std::string AblationFlags::to_string() const {
  std::string out;
  auto append = [&out](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += '+';
    out += name;
  };
  append(no_pe_variance, "no_pe_variance");
  append(no_ve_variance, "no_ve_variance");
  append(static_prompt, "static_prompt");
  append(plain_sum_aggregation, "plain_sum_aggregation");
  append(single_label_token, "single_label_token");
  append(manual_pvp, "manual_pvp");
  append(learnable_prompt_lr, "learnable_prompt_lr");
  return out.empty() ? "none" : out;
}

Model::Model(const BackboneConfig& bc, Vocabulary v, const RunConfig& rc)
    : backbone_config(bc),
      vocab(std::move(v)),
      run(rc),
      backbone(bc, vocab.size(), params),
      prompt_estimator(bc.hidden_size, params, rc.initial_prompt_log_variance),
      verbalizer(bc.hidden_size, rc.label_token_count, params) {
  const int d = bc.hidden_size;
  static_prompt_mean =
      params.add("prompt_static/mean", 4, d, Family::PromptStatic, Group::Head);
  static_prompt_logvar = params.add("prompt_static/log_variance", 4, d, Family::PromptStatic,
                                    Group::Head, InitKind::Constant, rc.initial_prompt_log_variance);
  learnable_prompt =
      params.add("prompt_learnable/tokens", 4, d, Family::PromptStatic, Group::Head);
}

namespace {

// KL(p || q) with both arguments floored inside the logs.
Var kl_divergence(Tape& tape, Var p, Var q, double floor) {
  Var diff = tape.sub(tape.log_floor(p, floor), tape.log_floor(q, floor));
  return tape.sum(tape.cmul(p, diff));
}

// Per-candidate sources for the four prompt rows: either Gaussians to sample
// from, or fixed vectors for the manual / learnable-prompt baselines.
struct CandidatePromptInputs {
  PromptEstimator::GaussiansVar gaussians;
  std::array<Var, 4> fixed_rows;
  bool fixed = false;
};

CandidatePromptInputs candidate_prompt_inputs(Tape& tape, ParamBinding& bind, Model& model,
                                              const ScriptInstance& instance, int candidate,
                                              Var chain_args) {
  const AblationFlags& abl = model.run.ablation;
  const RunConfig& rc = model.run;
  CandidatePromptInputs out;
  if (abl.manual_pvp) {
    if (rc.manual_prompt_tokens.size() != 4)
      throw data_error("manual_pvp requires exactly 4 prompt tokens");
    std::vector<int> ids;
    for (const std::string& t : rc.manual_prompt_tokens) ids.push_back(model.vocab.id(t));
    Var rows = model.backbone.embed(tape, bind, ids);
    for (int i = 0; i < 4; ++i) out.fixed_rows[i] = tape.gather_rows(rows, {i});
    out.fixed = true;
  } else if (abl.learnable_prompt_lr) {
    Var rows = bind(model.learnable_prompt);
    for (int i = 0; i < 4; ++i) out.fixed_rows[i] = tape.gather_rows(rows, {i});
    out.fixed = true;
  } else if (abl.static_prompt) {
    Var mean_rows = bind(model.static_prompt_mean);
    Var var_rows = tape.exp(bind(model.static_prompt_logvar));
    for (int i = 0; i < 4; ++i) {
      out.gaussians.mean[i] = tape.gather_rows(mean_rows, {i});
      out.gaussians.variance[i] = tape.gather_rows(var_rows, {i});
    }
  } else {
    std::vector<int> cand_ids;
    for (const std::string& tok : event_to_tokens(instance.candidates[candidate]))
      cand_ids.push_back(model.vocab.id_or_unk(tok));
    Var cand_args = model.backbone.embed(tape, bind, cand_ids);
    out.gaussians = model.prompt_estimator.estimate(tape, bind, cand_args, chain_args);
  }
  return out;
}

// Sampled (or deterministic, per flags) prompt rows for one candidate and one
// sample index.
std::array<Var, 4> prompt_rows_for_sample(Tape& tape, Model& model,
                                          const CandidatePromptInputs& inputs, int candidate,
                                          int sample, NoiseSource& noise) {
  if (inputs.fixed) return inputs.fixed_rows;
  const AblationFlags& abl = model.run.ablation;
  const int d = model.backbone_config.hidden_size;
  std::array<Var, 4> rows;
  for (int slot = 0; slot < 4; ++slot) {
    Var mean = inputs.gaussians.mean[slot];
    if (abl.no_pe_variance) {
      rows[slot] = mean;
      continue;
    }
    Var variance = inputs.gaussians.variance[slot];
    double floor = model.run.variance_floor;
    if (model.run.zero_variance_override) {
      variance = tape.constant(Mat::Zero(1, d));
      floor = 0.0;
    }
    rows[slot] = PromptEstimator::sample(tape, mean, variance,
                                         noise.prompt(candidate, slot, sample, d), floor);
  }
  return rows;
}

Var chain_argument_matrix(Tape& tape, ParamBinding& bind, Model& model,
                          const ScriptInstance& instance) {
  std::vector<int> chain_arg_ids;
  for (const Event& e : instance.chain)
    for (const std::string& tok : event_to_tokens(e))
      chain_arg_ids.push_back(model.vocab.id_or_unk(tok));
  return model.backbone.embed(tape, bind, chain_arg_ids);
}

}  // namespace

Var scores_from_probs(Tape& tape, const std::vector<Var>& candidate_probs, Var label_probs,
                      SignConvention sign, double prob_floor) {
  std::vector<Var> signed_divergences;
  signed_divergences.reserve(candidate_probs.size());
  for (const Var& p : candidate_probs) {
    Var d = kl_divergence(tape, p, label_probs, prob_floor);
    signed_divergences.push_back(sign == SignConvention::Negated ? tape.scale(d, -1.0) : d);
  }
  return tape.softmax_rows(tape.concat_cols(signed_divergences));
}

InstanceForward forward_instance(Tape& tape, ParamBinding& bind, Model& model,
                                 const ScriptInstance& instance, NoiseSource& noise,
                                 const ForwardOptions& opts) {
  validate_instance(instance);
  const RunConfig& rc = model.run;
  const AblationFlags& abl = rc.ablation;
  const Vocabulary& vocab = model.vocab;
  const int m = static_cast<int>(instance.candidates.size());
  const int samples = std::max(1, opts.samples);
  ZeroNoise zero_noise;
  NoiseSource& ns = opts.samples == 0 ? static_cast<NoiseSource&>(zero_noise) : noise;

  // Chain argument matrix E ((4n) x d), shared across candidates.
  Var chain_args = chain_argument_matrix(tape, bind, model, instance);

  std::vector<Var> candidate_prob_vars;
  candidate_prob_vars.reserve(m);
  for (int j = 0; j < m; ++j) {
    const Event& cand = instance.candidates[j];
    PatternSequence pattern = build_pattern(instance.chain, cand, j, vocab,
                                            model.backbone_config.max_sequence_length);
    CandidatePromptInputs prompt_inputs =
        candidate_prompt_inputs(tape, bind, model, instance, j, chain_args);

    // prefix = [CLS] chain; suffix = [MASK] candidate [SEP].
    std::vector<int> prefix_ids(pattern.token_ids.begin(),
                                pattern.token_ids.begin() + pattern.prompt_slot_positions[0]);
    std::vector<int> suffix_ids(pattern.token_ids.begin() + pattern.mask_position,
                                pattern.token_ids.end());
    Var prefix = model.backbone.embed(tape, bind, prefix_ids);
    Var suffix = model.backbone.embed(tape, bind, suffix_ids);
    std::vector<bool> real(pattern.token_ids.size(), true);

    std::vector<Var> sample_logits;
    sample_logits.reserve(samples);
    for (int s = 0; s < samples; ++s) {
      std::array<Var, 4> z = prompt_rows_for_sample(tape, model, prompt_inputs, j, s, ns);
      Var rows = tape.concat_rows({prefix, z[0], z[1], z[2], z[3], suffix});
      Var states =
          model.backbone.encode(tape, bind, rows, real, opts.train_mode, opts.dropout_rng);
      Var mask_state = tape.gather_rows(states, {pattern.mask_position});
      sample_logits.push_back(model.backbone.mlm_logits(tape, bind, mask_state));
    }
    Var pooled = sample_logits.size() == 1 ? sample_logits[0] : tape.average(sample_logits);
    candidate_prob_vars.push_back(tape.softmax_rows(pooled));
  }

  // Label distribution p_v, shared across candidates.
  Var label_probs;
  if (abl.manual_pvp || abl.learnable_prompt_lr) {
    const std::string& tok = abl.manual_pvp ? rc.manual_label_token : rc.lr_label_token;
    Mat onehot = Mat::Zero(1, model.vocab.size());
    onehot(0, vocab.id(tok)) = 1.0;
    label_probs = tape.constant(std::move(onehot));
  } else {
    const int l = model.effective_label_tokens();
    std::vector<Verbalizer::LG> gaussians;
    gaussians.reserve(l);
    for (int i = 0; i < l; ++i) {
      Verbalizer::LG g = model.verbalizer.estimate(
          tape, bind, model.verbalizer.label_token_row(tape, bind, i), model.backbone);
      if (rc.zero_variance_override)
        g.variance = tape.constant(Mat::Zero(1, model.vocab.size()));
      gaussians.push_back(g);
    }
    Verbalizer::LG agg = Verbalizer::aggregate(tape, gaussians, rc.lambda, rc.variance_floor,
                                               abl.plain_sum_aggregation);
    std::vector<Var> sample_reps;
    sample_reps.reserve(samples);
    for (int s = 0; s < samples; ++s) {
      if (abl.no_ve_variance) {
        sample_reps.push_back(agg.mean);
      } else {
        double floor = rc.zero_variance_override ? 0.0 : rc.variance_floor;
        sample_reps.push_back(
            Verbalizer::sample(tape, agg, ns.label(s, model.vocab.size()), floor));
      }
    }
    Var pooled = sample_reps.size() == 1 ? sample_reps[0] : tape.average(sample_reps);
    label_probs = tape.softmax_rows(pooled);
  }

  Var score_row = scores_from_probs(tape, candidate_prob_vars, label_probs, rc.sign, rc.prob_floor);

  InstanceForward out;
  out.loss = tape.scale(tape.log_floor(tape.slice_cols(score_row, instance.gold, 1), rc.prob_floor),
                        -1.0);
  out.scores = score_row.value().row(0).transpose();
  out.candidate_probs.reserve(m);
  for (const Var& p : candidate_prob_vars)
    out.candidate_probs.push_back(p.value().row(0).transpose());
  out.label_probs = label_probs.value().row(0).transpose();
  out.predicted = predict(out.scores);
  return out;
}

Vec candidate_distribution(Model& model, const ScriptInstance& instance, int candidate,
                           NoiseSource& noise, const ForwardOptions& opts) {
  if (candidate < 0 || candidate >= static_cast<int>(instance.candidates.size()))
    throw data_error("candidate index out of range");
  Tape tape;
  ParamBinding bind(tape, model.params);
  InstanceForward fwd = forward_instance(tape, bind, model, instance, noise, opts);
  return fwd.candidate_probs[static_cast<size_t>(candidate)];
}

std::array<Vec, 4> prompt_vectors_for(Model& model, const ScriptInstance& instance, int candidate,
                                      NoiseSource& noise, int sample) {
  Tape tape;
  ParamBinding bind(tape, model.params);
  Var chain_args = chain_argument_matrix(tape, bind, model, instance);
  CandidatePromptInputs inputs =
      candidate_prompt_inputs(tape, bind, model, instance, candidate, chain_args);
  std::array<Var, 4> rows = prompt_rows_for_sample(tape, model, inputs, candidate, sample, noise);
  std::array<Vec, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = rows[i].value().row(0).transpose();
  return out;
}

Vec score_candidates(const std::vector<Vec>& candidate_probs, const Vec& label_probs,
                     SignConvention sign, double prob_floor) {
  if (candidate_probs.empty()) throw data_error("score_candidates: no candidates");
  Tape tape;
  std::vector<Var> ps;
  ps.reserve(candidate_probs.size());
  for (const Vec& p : candidate_probs) ps.push_back(tape.constant(p.transpose()));
  Var scores = scores_from_probs(tape, ps, tape.constant(label_probs.transpose()), sign, prob_floor);
  return scores.value().row(0).transpose();
}

int predict(const Vec& scores) {
  int best = 0;
  for (int i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;  // ties keep the lowest index
  return best;
}

double instance_loss(const Vec& scores, int gold, double prob_floor) {
  if (gold < 0 || gold >= scores.size()) throw data_error("gold out of range");
  return -std::log(std::max(scores[gold], prob_floor));
}

EvalResult evaluate(Model& model, const std::vector<ScriptInstance>& dataset, int samples,
                    uint64_t eval_seed, int threads) {
  EvalResult result;
  const int n_inst = static_cast<int>(dataset.size());
  result.records.resize(n_inst);
  std::vector<double> losses(n_inst, 0.0);
  parallel_for(n_inst, threads, [&](int i) {
    Tape tape;
    ParamBinding bind(tape, model.params);
    SeededNoise noise(mix_key({eval_seed, 0xE7A1ULL, static_cast<uint64_t>(i)}));
    ForwardOptions opts;
    opts.samples = samples;
    InstanceForward fwd = forward_instance(tape, bind, model, dataset[i], noise, opts);
    result.records[i] = {i, dataset[i].gold, fwd.predicted, fwd.scores};
    losses[i] = instance_loss(fwd.scores, dataset[i].gold, model.run.prob_floor);
  });
  int correct = 0;
  double loss_sum = 0.0;
  for (int i = 0; i < n_inst; ++i) {
    correct += result.records[i].predicted == result.records[i].gold ? 1 : 0;
    loss_sum += losses[i];
  }
  result.accuracy = n_inst > 0 ? static_cast<double>(correct) / n_inst : 0.0;
  result.mean_loss = n_inst > 0 ? loss_sum / n_inst : 0.0;
  return result;
}

namespace {

std::string nan_diagnostics(const Model& model, int step) {
  return "NaN loss at step " + std::to_string(step) +
         " (backbone grad norm " + std::to_string(model.params.group_grad_norm(Group::Backbone)) +
         ", head grad norm " + std::to_string(model.params.group_grad_norm(Group::Head)) + ")";
}

}  // namespace

TrainResult train(Model& model, const std::vector<ScriptInstance>& train_set,
                  const std::vector<ScriptInstance>& dev_set) {
  if (train_set.empty()) throw data_error("training corpus is empty");
  const RunConfig& rc = model.run;
  TrainResult result;
  AdamW optimizer(rc.backbone_lr, rc.head_lr, rc.weight_decay);

  const int dev_subset =
      std::min<int>(static_cast<int>(dev_set.size()), rc.eval_subset > 0 ? rc.eval_subset : 0);
  std::vector<ScriptInstance> dev_head(dev_set.begin(), dev_set.begin() + dev_subset);

  std::vector<Mat> best_values;
  double window_loss = 0.0;
  int window_correct = 0, window_count = 0;
  auto t0 = std::chrono::steady_clock::now();
  auto wall_ms = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                 t0)
        .count();
  };

  const int tensor_count = model.params.count();
  for (int step = 0; step < rc.steps; ++step) {
    Rng batch_rng(mix_key({rc.seed, 0xBA7C4ULL, static_cast<uint64_t>(step)}));
    std::vector<int> batch(rc.batch_size);
    for (int& b : batch) b = batch_rng.uniform_int(static_cast<int>(train_set.size()));

    std::vector<std::vector<Mat>> grad_buffers(rc.batch_size);
    std::vector<double> losses(rc.batch_size, 0.0);
    std::vector<int> correct(rc.batch_size, 0);
    parallel_for(rc.batch_size, rc.threads, [&](int slot) {
      grad_buffers[slot].resize(tensor_count);
      Tape tape;
      ParamBinding bind(tape, model.params, &grad_buffers[slot]);
      SeededNoise noise(
          mix_key({rc.seed, 0x72A1ULL, static_cast<uint64_t>(step), static_cast<uint64_t>(slot)}));
      Rng dropout_rng(
          mix_key({rc.seed, 0xD0ULL, static_cast<uint64_t>(step), static_cast<uint64_t>(slot)}));
      ForwardOptions opts;
      opts.samples = 1;  // one reparameterized draw per training pass
      opts.train_mode = true;
      opts.dropout_rng = &dropout_rng;
      const ScriptInstance& inst = train_set[batch[slot]];
      InstanceForward fwd = forward_instance(tape, bind, model, inst, noise, opts);
      losses[slot] = fwd.loss.value()(0, 0);
      correct[slot] = fwd.predicted == inst.gold ? 1 : 0;
      tape.backward(fwd.loss);
    });

    model.params.zero_grads();
    double step_loss = 0.0;
    for (int slot = 0; slot < rc.batch_size; ++slot) {
      step_loss += losses[slot];
      window_correct += correct[slot];
      for (int t = 0; t < tensor_count; ++t)
        if (grad_buffers[slot][t].size() > 0) model.params.at(t).grad += grad_buffers[slot][t];
    }
    window_loss += step_loss;
    window_count += rc.batch_size;

    if (!std::isfinite(step_loss)) throw nan_error(nan_diagnostics(model, step));
    optimizer.step(model.params);
    if (!model.params.all_finite()) throw nan_error(nan_diagnostics(model, step));

    const bool at_eval = rc.eval_every > 0 && ((step + 1) % rc.eval_every == 0);
    if (at_eval || step + 1 == rc.steps) {
      MetricRow train_row;
      train_row.step = step + 1;
      train_row.split = "train";
      train_row.accuracy = window_count > 0 ? static_cast<double>(window_correct) / window_count : 0.0;
      train_row.mean_loss = window_count > 0 ? window_loss / window_count : 0.0;
      train_row.n = 1;
      train_row.ablation_flags = rc.ablation.to_string();
      train_row.seed = rc.seed;
      train_row.wall_clock_ms = wall_ms();
      result.rows.push_back(train_row);
      window_loss = 0.0;
      window_correct = 0;
      window_count = 0;

      if (!dev_head.empty()) {
        EvalResult dev = evaluate(model, dev_head, rc.eval_samples, rc.eval_seed, rc.threads);
        MetricRow dev_row = train_row;
        dev_row.split = "dev";
        dev_row.accuracy = dev.accuracy;
        dev_row.mean_loss = dev.mean_loss;
        dev_row.n = rc.eval_samples;
        dev_row.wall_clock_ms = wall_ms();
        result.rows.push_back(dev_row);
        if (dev.accuracy > result.best_dev_accuracy || result.best_step < 0) {
          result.best_dev_accuracy = dev.accuracy;
          result.best_step = step + 1;
          best_values = model.params.snapshot_values();
        }
      }
    }
  }

  if (!best_values.empty()) model.params.restore_values(best_values);

  if (!dev_set.empty()) {
    EvalResult final_dev = evaluate(model, dev_set, rc.eval_samples, rc.eval_seed, rc.threads);
    result.final_dev_accuracy = final_dev.accuracy;
    MetricRow row;
    row.step = rc.steps;
    row.split = "dev_final";
    row.accuracy = final_dev.accuracy;
    row.mean_loss = final_dev.mean_loss;
    row.n = rc.eval_samples;
    row.ablation_flags = rc.ablation.to_string();
    row.seed = rc.seed;
    row.wall_clock_ms = wall_ms();
    result.rows.push_back(row);
  }
  return result;
}

}  // namespace p2g
