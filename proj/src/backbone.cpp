#include "p2g/backbone.hpp"

namespace p2g {

void BackboneConfig::validate() const {
  if (hidden_size <= 0 || layer_count <= 0 || head_count <= 0 || feed_forward_size <= 0 ||
      max_sequence_length <= 0)
    throw data_error("backbone config fields must be positive");
  if (hidden_size % head_count != 0)
    throw data_error("hidden_size must be divisible by head_count");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw data_error("dropout_rate must lie in [0, 1)");
}

Backbone::Backbone(const BackboneConfig& cfg, int vocab_size, ParamSet& params)
    : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  const int d = cfg_.hidden_size;
  const int ff = cfg_.feed_forward_size;
  const Family enc = Family::Encoder;
  const Group bb = Group::Backbone;

  ids_.tok_emb = params.add("backbone/token_embedding", vocab_size, d, Family::Embeddings, bb);
  ids_.pos_emb =
      params.add("backbone/position_embedding", cfg_.max_sequence_length, d, Family::Embeddings, bb);
  for (int l = 0; l < cfg_.layer_count; ++l) {
    std::string p = "backbone/layer" + std::to_string(l) + "/";
    LayerIds L;
    L.ln1_g = params.add(p + "ln1/gamma", 1, d, enc, bb, InitKind::One);
    L.ln1_b = params.add(p + "ln1/beta", 1, d, enc, bb, InitKind::Zero);
    L.wq = params.add(p + "attn/Wq", d, d, enc, bb);
    L.bq = params.add(p + "attn/bq", 1, d, enc, bb, InitKind::Zero);
    L.wk = params.add(p + "attn/Wk", d, d, enc, bb);
    L.bk = params.add(p + "attn/bk", 1, d, enc, bb, InitKind::Zero);
    L.wv = params.add(p + "attn/Wv", d, d, enc, bb);
    L.bv = params.add(p + "attn/bv", 1, d, enc, bb, InitKind::Zero);
    L.wo = params.add(p + "attn/Wo", d, d, enc, bb);
    L.bo = params.add(p + "attn/bo", 1, d, enc, bb, InitKind::Zero);
    L.ln2_g = params.add(p + "ln2/gamma", 1, d, enc, bb, InitKind::One);
    L.ln2_b = params.add(p + "ln2/beta", 1, d, enc, bb, InitKind::Zero);
    L.w1 = params.add(p + "ffn/W1", d, ff, enc, bb);
    L.b1 = params.add(p + "ffn/b1", 1, ff, enc, bb, InitKind::Zero);
    L.w2 = params.add(p + "ffn/W2", ff, d, enc, bb);
    L.b2 = params.add(p + "ffn/b2", 1, d, enc, bb, InitKind::Zero);
    ids_.layers.push_back(L);
  }
  ids_.final_ln_g = params.add("backbone/final_ln/gamma", 1, d, enc, bb, InitKind::One);
  ids_.final_ln_b = params.add("backbone/final_ln/beta", 1, d, enc, bb, InitKind::Zero);
  ids_.mlm_w = params.add("backbone/mlm_head/W", d, vocab_size, Family::MlmHead, bb);
  ids_.mlm_b = params.add("backbone/mlm_head/b", 1, vocab_size, Family::MlmHead, bb, InitKind::Zero);
}

Var Backbone::embed(Tape& tape, ParamBinding& bind, const std::vector<int>& ids) const {
  for (int id : ids)
    if (id < 0 || id >= vocab_size_)
      throw data_error("embed: token id out of range: " + std::to_string(id));
  return tape.gather_rows(bind(ids_.tok_emb), ids);
}

namespace {

// Inverted dropout by a constant mask; identity when not training.
Var maybe_dropout(Tape& tape, Var x, double rate, bool train_mode, Rng* rng) {
  if (!train_mode || rate <= 0.0 || rng == nullptr) return x;
  Mat mask(x.rows(), x.cols());
  double keep = 1.0 - rate;
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      mask(r, c) = rng->bernoulli(rate) ? 0.0 : 1.0 / keep;
  return tape.cmul(x, tape.constant(std::move(mask)));
}

}  // namespace

Var Backbone::encode(Tape& tape, ParamBinding& bind, Var rows,
                     const std::vector<bool>& real_token_mask, bool train_mode,
                     Rng* dropout_rng) const {
  const int len = static_cast<int>(rows.rows());
  if (len == 0) throw data_error("encode: empty input");
  if (len > cfg_.max_sequence_length)
    throw data_error("encode: sequence length " + std::to_string(len) +
                     " exceeds max_sequence_length " + std::to_string(cfg_.max_sequence_length));
  if (static_cast<int>(real_token_mask.size()) != len)
    throw data_error("encode: mask length does not match input rows");
  bool any_real = false;
  for (bool b : real_token_mask) any_real = any_real || b;
  if (!any_real) throw data_error("encode: all positions are padding");

  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  Var x = tape.add(rows, tape.gather_rows(bind(ids_.pos_emb), positions));
  x = maybe_dropout(tape, x, cfg_.dropout_rate, train_mode, dropout_rng);

  RowVec key_bias(len);
  for (int i = 0; i < len; ++i) key_bias[i] = real_token_mask[i] ? 0.0 : -1e30;

  const int d = cfg_.hidden_size;
  const int nh = cfg_.head_count;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (const LayerIds& L : ids_.layers) {
    Var h = tape.layer_norm(x, bind(L.ln1_g), bind(L.ln1_b));
    Var q = tape.add_row_broadcast(tape.matmul(h, bind(L.wq)), bind(L.bq));
    Var k = tape.add_row_broadcast(tape.matmul(h, bind(L.wk)), bind(L.bk));
    Var v = tape.add_row_broadcast(tape.matmul(h, bind(L.wv)), bind(L.bv));
    std::vector<Var> heads;
    heads.reserve(nh);
    for (int hh = 0; hh < nh; ++hh) {
      Var qh = tape.slice_cols(q, hh * dh, dh);
      Var kh = tape.slice_cols(k, hh * dh, dh);
      Var vh = tape.slice_cols(v, hh * dh, dh);
      Var scores = tape.scale(tape.matmul_nt(qh, kh), scale);
      Var attn = tape.softmax_rows(scores, &key_bias);
      heads.push_back(tape.matmul(attn, vh));
    }
    Var attn_out =
        tape.add_row_broadcast(tape.matmul(tape.concat_cols(heads), bind(L.wo)), bind(L.bo));
    attn_out = maybe_dropout(tape, attn_out, cfg_.dropout_rate, train_mode, dropout_rng);
    x = tape.add(x, attn_out);

    Var f = tape.layer_norm(x, bind(L.ln2_g), bind(L.ln2_b));
    f = tape.add_row_broadcast(tape.matmul(f, bind(L.w1)), bind(L.b1));
    f = tape.gelu(f);
    f = tape.add_row_broadcast(tape.matmul(f, bind(L.w2)), bind(L.b2));
    f = maybe_dropout(tape, f, cfg_.dropout_rate, train_mode, dropout_rng);
    x = tape.add(x, f);
  }
  return tape.layer_norm(x, bind(ids_.final_ln_g), bind(ids_.final_ln_b));
}

Var Backbone::mlm_logits(Tape& tape, ParamBinding& bind, Var state_rows) const {
  return tape.add_row_broadcast(tape.matmul(state_rows, bind(ids_.mlm_w)), bind(ids_.mlm_b));
}

Mat Backbone::embed(ParamSet& params, const std::vector<int>& ids) const {
  Tape tape;
  ParamBinding bind(tape, params);
  return embed(tape, bind, ids).value();
}

Mat Backbone::encode(ParamSet& params, const Mat& rows,
                     const std::vector<bool>& real_token_mask) const {
  Tape tape;
  ParamBinding bind(tape, params);
  return encode(tape, bind, tape.constant(rows), real_token_mask).value();
}

Vec Backbone::mlm_logits(ParamSet& params, const Vec& state_row) const {
  Tape tape;
  ParamBinding bind(tape, params);
  return mlm_logits(tape, bind, tape.constant(state_row.transpose())).value().row(0).transpose();
}

}  // namespace p2g
