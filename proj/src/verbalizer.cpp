#include "p2g/verbalizer.hpp"

namespace p2g {

Verbalizer::Verbalizer(int hidden_size, int label_token_count, ParamSet& params)
    : l_(label_token_count) {
  if (l_ < 1) throw data_error("label_token_count must be >= 1");
  const int d = hidden_size;
  label_tokens_ =
      params.add("verbalizer/label_tokens", l_, d, Family::LabelTokens, Group::Head);
  w_mu_ = params.add("verbalizer/W_mu", d, d, Family::VerbalizerProj, Group::Head);
  b_mu_ = params.add("verbalizer/b_mu", 1, d, Family::VerbalizerProj, Group::Head, InitKind::Zero);
  w_sigma_ = params.add("verbalizer/W_sigma", d, d, Family::VerbalizerProj, Group::Head);
  b_sigma_ =
      params.add("verbalizer/b_sigma", 1, d, Family::VerbalizerProj, Group::Head, InitKind::Zero);
}

Var Verbalizer::label_token_row(Tape& tape, ParamBinding& bind, int i) const {
  if (i < 0 || i >= l_) throw data_error("label token index out of range");
  return tape.gather_rows(bind(label_tokens_), {i});
}

Verbalizer::LG Verbalizer::estimate(Tape& tape, ParamBinding& bind, Var label_token,
                                    const Backbone& backbone) const {
  Var h_mu =
      tape.relu(tape.add_row_broadcast(tape.matmul(label_token, bind(w_mu_)), bind(b_mu_)));
  Var h_sigma = tape.relu(
      tape.add_row_broadcast(tape.matmul(label_token, bind(w_sigma_)), bind(b_sigma_)));
  LG out;
  out.mean = backbone.mlm_logits(tape, bind, h_mu);
  out.variance = tape.exp(backbone.mlm_logits(tape, bind, h_sigma));
  return out;
}

Verbalizer::LG Verbalizer::aggregate(Tape& tape, const std::vector<LG>& gaussians, double lambda,
                                     double variance_floor, bool plain_sum) {
  if (gaussians.empty()) throw data_error("aggregate requires at least one Gaussian");
  Var mu_sum, var_sum;
  // Fixed ascending-index summation order keeps results bit-stable.
  for (size_t i = 0; i < gaussians.size(); ++i) {
    Var mu_term, var_term;
    if (plain_sum) {
      mu_term = gaussians[i].mean;
      var_term = gaussians[i].variance;
    } else {
      Var sigma = tape.sqrt_floor(gaussians[i].variance, variance_floor);
      Var kappa = tape.exp(tape.scale(sigma, -lambda));
      mu_term = tape.cmul(kappa, gaussians[i].mean);
      var_term = tape.cmul(tape.cmul(kappa, kappa), gaussians[i].variance);
    }
    mu_sum = i == 0 ? mu_term : tape.add(mu_sum, mu_term);
    var_sum = i == 0 ? var_term : tape.add(var_sum, var_term);
  }
  return {mu_sum, var_sum};
}

Var Verbalizer::sample(Tape& tape, const LG& g, const Vec& noise, double variance_floor) {
  Var sigma = tape.sqrt_floor(g.variance, variance_floor);
  return tape.add(g.mean, tape.cmul(tape.constant(noise.transpose()), sigma));
}

LabelGaussian Verbalizer::estimate(ParamSet& params, const Vec& label_token,
                                   const Backbone& backbone) const {
  Tape tape;
  ParamBinding bind(tape, params);
  LG g = estimate(tape, bind, tape.constant(label_token.transpose()), backbone);
  return {g.mean.value().row(0).transpose(), g.variance.value().row(0).transpose()};
}

LabelGaussian Verbalizer::aggregate(const std::vector<LabelGaussian>& gaussians, double lambda,
                                    double variance_floor, bool plain_sum) {
  Tape tape;
  std::vector<LG> vars;
  vars.reserve(gaussians.size());
  for (const LabelGaussian& g : gaussians)
    vars.push_back(
        {tape.constant(g.mean.transpose()), tape.constant(g.variance.transpose())});
  LG out = aggregate(tape, vars, lambda, variance_floor, plain_sum);
  return {out.mean.value().row(0).transpose(), out.variance.value().row(0).transpose()};
}

Vec Verbalizer::sample_label(const LabelGaussian& g, const Vec& noise, double variance_floor) {
  if (noise.size() != g.mean.size())
    throw data_error("sample_label: noise length must match vocabulary size");
  Tape tape;
  LG gv{tape.constant(g.mean.transpose()), tape.constant(g.variance.transpose())};
  Var v_v = sample(tape, gv, noise, variance_floor);
  Var p_v = tape.softmax_rows(v_v);
  return p_v.value().row(0).transpose();
}

}  // namespace p2g
