#pragma once

#include <vector>

#include "p2g/backbone.hpp"
#include "p2g/prompt_estimator.hpp"

namespace p2g {

// Gaussian over the vocabulary simplex's logit space.
struct LabelGaussian {
  Vec mean;      // |V|
  Vec variance;  // |V|, strictly positive
};

// l learnable label tokens lifted to vocabulary-space Gaussians through the
// shared MLM head, aggregated with uncertainty-aware weights
// kappa_i = exp(-lambda * sigma_i).
class Verbalizer {
 public:
  struct LG {
    Var mean;
    Var variance;
  };

  Verbalizer(int hidden_size, int label_token_count, ParamSet& params);

  int label_token_count() const { return l_; }
  int label_tokens_id() const { return label_tokens_; }

  // One stored label token as a 1 x d row.
  Var label_token_row(Tape& tape, ParamBinding& bind, int i) const;

  // mean = MLM-head(ReLU(v W_mu + b_mu)); variance = exp(MLM-head(ReLU(v W_sigma + b_sigma)))
  LG estimate(Tape& tape, ParamBinding& bind, Var label_token, const Backbone& backbone) const;

  static LG aggregate(Tape& tape, const std::vector<LG>& gaussians, double lambda,
                      double variance_floor, bool plain_sum = false);

  // v_v = mean + noise (.) sqrt(max(variance, floor)); the caller softmaxes
  // (after mean-pooling when several samples are drawn).
  static Var sample(Tape& tape, const LG& g, const Vec& noise, double variance_floor);

  // Value-level faces for the op contracts.
  LabelGaussian estimate(ParamSet& params, const Vec& label_token, const Backbone& backbone) const;
  static LabelGaussian aggregate(const std::vector<LabelGaussian>& gaussians, double lambda,
                                 double variance_floor, bool plain_sum = false);
  // Full sample_label: softmax(mean + noise (.) sigma); a probability vector.
  static Vec sample_label(const LabelGaussian& g, const Vec& noise, double variance_floor);

 private:
  int l_;
  int label_tokens_;  // l x d
  int w_mu_, b_mu_, w_sigma_, b_sigma_;
};

}  // namespace p2g
