#pragma once

#include <array>

#include "p2g/backbone.hpp"
#include "p2g/script_data.hpp"

namespace p2g {

// Token layout: [CLS] chain tokens, 4 prompt slots, [MASK], candidate
// tokens, [SEP]. Prompt slots carry [PAD] placeholders in token_ids; their
// input rows are overwritten with sampled prompt vectors before encoding.
struct PatternSequence {
  std::vector<int> token_ids;
  std::array<int, 4> prompt_slot_positions;
  int mask_position = 0;
  int candidate_index = 0;
};

PatternSequence build_pattern(const std::vector<Event>& chain, const Event& candidate,
                              int candidate_index, const Vocabulary& vocab,
                              int max_sequence_length);

// Diagonal Gaussian over hidden space (or vocabulary space for labels).
struct GaussianEmbedding {
  Vec mean;
  Vec variance;
};

// Estimates one Gaussian per candidate argument by attending over the
// chain's argument embeddings: mean from one attention stack, log-variance
// from an independent, identically shaped one.
class PromptEstimator {
 public:
  struct AttnIds {
    int wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct GaussiansVar {
    std::array<Var, 4> mean;
    std::array<Var, 4> variance;
  };

  // log_variance_bias_init seeds Attn_sigma's output bias so that initial
  // sampled noise is commensurate with the embedding scale.
  PromptEstimator(int hidden_size, ParamSet& params, double log_variance_bias_init = 0.0);

  // candidate_args: 4 x d rows in subject/verb/object/indirect order;
  // chain_args: (4n) x d event-major argument embeddings.
  GaussiansVar estimate(Tape& tape, ParamBinding& bind, Var candidate_args,
                        Var chain_args) const;

  // z = mean + noise (.) sqrt(max(variance, floor)); differentiable in both
  // Gaussian parameters for fixed noise.
  static Var sample(Tape& tape, Var mean_row, Var variance_row, const Vec& noise,
                    double variance_floor);

  // Value-level faces.
  std::array<GaussianEmbedding, 4> estimate(ParamSet& params, const Mat& candidate_args,
                                            const Mat& chain_args) const;
  static Vec sample(const GaussianEmbedding& g, const Vec& noise, double variance_floor);

  const AttnIds& mu_ids() const { return mu_; }
  const AttnIds& sigma_ids() const { return sigma_; }
  int hidden_size() const { return d_; }

 private:
  Var attend(Tape& tape, ParamBinding& bind, const AttnIds& ids, Var queries,
             Var keys_values) const;

  int d_;
  AttnIds mu_, sigma_;
};

}  // namespace p2g
