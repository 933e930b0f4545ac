#pragma once

#include "p2g/params.hpp"
#include "p2g/rng.hpp"
#include "p2g/vocab.hpp"

namespace p2g {

struct BackboneConfig {
  int hidden_size = 64;
  int layer_count = 2;
  int head_count = 4;
  int feed_forward_size = 128;
  int max_sequence_length = 64;
  double dropout_rate = 0.0;

  void validate() const;
};

// Small masked language model: token/position embeddings, pre-norm
// transformer encoder with GELU feed-forward, and an untied linear MLM head.
class Backbone {
 public:
  struct LayerIds {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    int ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Ids {
    int tok_emb, pos_emb;
    std::vector<LayerIds> layers;
    int final_ln_g, final_ln_b;
    int mlm_w, mlm_b;
  };

  Backbone(const BackboneConfig& cfg, int vocab_size, ParamSet& params);

  const BackboneConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  const Ids& ids() const { return ids_; }

  // Raw token-table rows; position embeddings are added inside encode().
  Var embed(Tape& tape, ParamBinding& bind, const std::vector<int>& ids) const;
  // rows may mix token-table rows and externally supplied vectors (sampled
  // prompts). Padded positions neither attend nor are attended to.
  Var encode(Tape& tape, ParamBinding& bind, Var rows,
             const std::vector<bool>& real_token_mask, bool train_mode = false,
             Rng* dropout_rng = nullptr) const;
  // Unnormalized vocabulary scores for one or more d-wide state rows.
  Var mlm_logits(Tape& tape, ParamBinding& bind, Var state_rows) const;

  // Value-level faces over a throwaway tape.
  Mat embed(ParamSet& params, const std::vector<int>& ids) const;
  Mat encode(ParamSet& params, const Mat& rows, const std::vector<bool>& real_token_mask) const;
  Vec mlm_logits(ParamSet& params, const Vec& state_row) const;

 private:
  BackboneConfig cfg_;
  int vocab_size_;
  Ids ids_;
};

}  // namespace p2g
