#include "p2g/prompt_estimator.hpp"

namespace p2g {

PatternSequence build_pattern(const std::vector<Event>& chain, const Event& candidate,
                              int candidate_index, const Vocabulary& vocab,
                              int max_sequence_length) {
  PatternSequence seq;
  seq.candidate_index = candidate_index;
  seq.token_ids.push_back(Vocabulary::kCls);
  for (const Event& e : chain)
    for (const std::string& tok : event_to_tokens(e))
      seq.token_ids.push_back(vocab.id_or_unk(tok));
  for (int i = 0; i < 4; ++i) {
    seq.prompt_slot_positions[i] = static_cast<int>(seq.token_ids.size());
    seq.token_ids.push_back(Vocabulary::kPad);  // placeholder, overwritten pre-encode
  }
  seq.mask_position = static_cast<int>(seq.token_ids.size());
  seq.token_ids.push_back(Vocabulary::kMask);
  for (const std::string& tok : event_to_tokens(candidate))
    seq.token_ids.push_back(vocab.id_or_unk(tok));
  seq.token_ids.push_back(Vocabulary::kSep);
  if (static_cast<int>(seq.token_ids.size()) > max_sequence_length)
    throw data_error("pattern length " + std::to_string(seq.token_ids.size()) +
                     " exceeds max_sequence_length " + std::to_string(max_sequence_length));
  return seq;
}

PromptEstimator::PromptEstimator(int hidden_size, ParamSet& params, double log_variance_bias_init)
    : d_(hidden_size) {
  auto reg = [&](const char* which, Family family, double out_bias_init) {
    std::string p = std::string("prompt_estimator/") + which + "/";
    AttnIds ids;
    ids.wq = params.add(p + "Wq", d_, d_, family, Group::Head);
    ids.bq = params.add(p + "bq", 1, d_, family, Group::Head, InitKind::Zero);
    ids.wk = params.add(p + "Wk", d_, d_, family, Group::Head);
    ids.bk = params.add(p + "bk", 1, d_, family, Group::Head, InitKind::Zero);
    ids.wv = params.add(p + "Wv", d_, d_, family, Group::Head);
    ids.bv = params.add(p + "bv", 1, d_, family, Group::Head, InitKind::Zero);
    ids.wo = params.add(p + "Wo", d_, d_, family, Group::Head);
    ids.bo = params.add(p + "bo", 1, d_, family, Group::Head, InitKind::Constant, out_bias_init);
    return ids;
  };
  mu_ = reg("attn_mu", Family::AttnMu, 0.0);
  sigma_ = reg("attn_sigma", Family::AttnSigma, log_variance_bias_init);
}

Var PromptEstimator::attend(Tape& tape, ParamBinding& bind, const AttnIds& ids, Var queries,
                            Var keys_values) const {
  // Single head; the scale uses the full width since d_head == d.
  Var q = tape.add_row_broadcast(tape.matmul(queries, bind(ids.wq)), bind(ids.bq));
  Var k = tape.add_row_broadcast(tape.matmul(keys_values, bind(ids.wk)), bind(ids.bk));
  Var v = tape.add_row_broadcast(tape.matmul(keys_values, bind(ids.wv)), bind(ids.bv));
  Var scores = tape.scale(tape.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(d_)));
  Var attn = tape.softmax_rows(scores);
  Var ctx = tape.matmul(attn, v);
  return tape.add_row_broadcast(tape.matmul(ctx, bind(ids.wo)), bind(ids.bo));
}

PromptEstimator::GaussiansVar PromptEstimator::estimate(Tape& tape, ParamBinding& bind,
                                                        Var candidate_args,
                                                        Var chain_args) const {
  if (candidate_args.rows() != 4)
    throw data_error("estimate_prompt_gaussians: expected 4 candidate argument rows");
  Var mu = attend(tape, bind, mu_, candidate_args, chain_args);
  Var log_var = attend(tape, bind, sigma_, candidate_args, chain_args);
  Var var = tape.exp(log_var);
  GaussiansVar out;
  for (int i = 0; i < 4; ++i) {
    out.mean[i] = tape.gather_rows(mu, {i});
    out.variance[i] = tape.gather_rows(var, {i});
  }
  return out;
}

Var PromptEstimator::sample(Tape& tape, Var mean_row, Var variance_row, const Vec& noise,
                            double variance_floor) {
  Var sigma = tape.sqrt_floor(variance_row, variance_floor);
  Var eps = tape.constant(noise.transpose());
  return tape.add(mean_row, tape.cmul(eps, sigma));
}

std::array<GaussianEmbedding, 4> PromptEstimator::estimate(ParamSet& params,
                                                           const Mat& candidate_args,
                                                           const Mat& chain_args) const {
  Tape tape;
  ParamBinding bind(tape, params);
  GaussiansVar g =
      estimate(tape, bind, tape.constant(candidate_args), tape.constant(chain_args));
  std::array<GaussianEmbedding, 4> out;
  for (int i = 0; i < 4; ++i) {
    out[i].mean = g.mean[i].value().row(0).transpose();
    out[i].variance = g.variance[i].value().row(0).transpose();
  }
  return out;
}

Vec PromptEstimator::sample(const GaussianEmbedding& g, const Vec& noise,
                            double variance_floor) {
  if (noise.size() != g.mean.size())
    throw data_error("sample_prompt: noise length must match dimension");
  Tape tape;
  Var z = sample(tape, tape.constant(g.mean.transpose()), tape.constant(g.variance.transpose()),
                 noise, variance_floor);
  return z.value().row(0).transpose();
}

}  // namespace p2g
