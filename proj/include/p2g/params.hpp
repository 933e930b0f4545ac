#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2g/tape.hpp"

namespace p2g {

class Rng;

// Parameter family, used by the gradient checker to sample per-family and by
// checkpoints as metadata.
enum class Family {
  Embeddings,
  Encoder,
  AttnMu,
  AttnSigma,
  VerbalizerProj,
  LabelTokens,
  MlmHead,
  PromptStatic,
};

// Optimizer group: the backbone fine-tunes at a lower rate than the heads.
enum class Group { Backbone, Head };

const char* family_name(Family f);

enum class InitKind { Gaussian02, Zero, One, Constant };

struct Tensor {
  std::string name;
  Family family;
  Group group;
  InitKind init = InitKind::Gaussian02;
  double init_constant = 0.0;
  Mat value;
  Mat grad;
  Mat adam_m;
  Mat adam_v;
};

// Named parameter tensors with stable addresses (deque) so tape leaves can
// point at them across registrations.
class ParamSet {
 public:
  int add(const std::string& name, int rows, int cols, Family family, Group group,
          InitKind init = InitKind::Gaussian02, double init_constant = 0.0);
  // Per-tensor streams keyed by (seed, name), so registration order does not
  // shift other tensors' draws.
  void initialize(uint64_t seed);
  Tensor& at(int i) { return tensors_[i]; }
  const Tensor& at(int i) const { return tensors_[i]; }
  int find(const std::string& name) const;  // -1 when absent
  int count() const { return static_cast<int>(tensors_.size()); }

  void zero_grads();
  bool all_finite() const;
  double group_grad_norm(Group g) const;
  // Deep copy of values only (for best-dev snapshots).
  std::vector<Mat> snapshot_values() const;
  void restore_values(const std::vector<Mat>& values);

 private:
  std::deque<Tensor> tensors_;
  std::unordered_map<std::string, int> index_;
};

// Per-tape view of a ParamSet. Gradients flow either directly into
// Tensor::grad or into caller-owned buffers (for parallel batches).
class ParamBinding {
 public:
  ParamBinding(Tape& tape, ParamSet& params, std::vector<Mat>* sinks = nullptr)
      : tape_(tape), params_(params), sinks_(sinks), vars_(params.count()) {}

  Var operator()(int tensor_index);

 private:
  Tape& tape_;
  ParamSet& params_;
  std::vector<Mat>* sinks_;
  std::vector<Var> vars_;
};

// Decoupled-weight-decay Adam. Constant learning rates, bias correction,
// per-group rates.
class AdamW {
 public:
  AdamW(double backbone_lr, double head_lr, double weight_decay,
        double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : backbone_lr_(backbone_lr), head_lr_(head_lr), weight_decay_(weight_decay),
        beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamSet& params);
  int steps_taken() const { return t_; }

 private:
  double backbone_lr_, head_lr_, weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
};

// Gaussian init (std 0.02) for weights, zeros for biases, ones for LN gains.
void init_gaussian(Mat& m, Rng& rng, double stddev);

}  // namespace p2g
