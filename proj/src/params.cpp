#include "p2g/params.hpp"

#include <cmath>

#include "p2g/rng.hpp"

namespace p2g {

const char* family_name(Family f) {
  switch (f) {
    case Family::Embeddings: return "embeddings";
    case Family::Encoder: return "encoder";
    case Family::AttnMu: return "attn_mu";
    case Family::AttnSigma: return "attn_sigma";
    case Family::VerbalizerProj: return "verbalizer_proj";
    case Family::LabelTokens: return "label_tokens";
    case Family::MlmHead: return "mlm_head";
    case Family::PromptStatic: return "prompt_static";
  }
  return "?";
}

int ParamSet::add(const std::string& name, int rows, int cols, Family family, Group group,
                  InitKind init, double init_constant) {
  if (index_.count(name) != 0)
    throw Error(ErrorKind::Internal, "duplicate parameter tensor: " + name);
  Tensor t;
  t.name = name;
  t.family = family;
  t.group = group;
  t.init = init;
  t.init_constant = init_constant;
  t.value = Mat::Zero(rows, cols);
  t.grad = Mat::Zero(rows, cols);
  t.adam_m = Mat::Zero(rows, cols);
  t.adam_v = Mat::Zero(rows, cols);
  tensors_.push_back(std::move(t));
  int idx = static_cast<int>(tensors_.size()) - 1;
  index_[name] = idx;
  return idx;
}

namespace {
uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}
}  // namespace

void ParamSet::initialize(uint64_t seed) {
  for (Tensor& t : tensors_) {
    switch (t.init) {
      case InitKind::Zero:
        t.value.setZero();
        break;
      case InitKind::One:
        t.value.setOnes();
        break;
      case InitKind::Constant:
        t.value.setConstant(t.init_constant);
        break;
      case InitKind::Gaussian02: {
        Rng rng(mix_key({seed, fnv1a(t.name)}));
        init_gaussian(t.value, rng, 0.02);
        break;
      }
    }
    t.grad.setZero();
    t.adam_m.setZero();
    t.adam_v.setZero();
  }
}

int ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

void ParamSet::zero_grads() {
  for (Tensor& t : tensors_) t.grad.setZero();
}

bool ParamSet::all_finite() const {
  for (const Tensor& t : tensors_)
    if (!t.value.allFinite()) return false;
  return true;
}

double ParamSet::group_grad_norm(Group g) const {
  double sq = 0.0;
  for (const Tensor& t : tensors_)
    if (t.group == g) sq += t.grad.squaredNorm();
  return std::sqrt(sq);
}

std::vector<Mat> ParamSet::snapshot_values() const {
  std::vector<Mat> out;
  out.reserve(tensors_.size());
  for (const Tensor& t : tensors_) out.push_back(t.value);
  return out;
}

void ParamSet::restore_values(const std::vector<Mat>& values) {
  if (values.size() != tensors_.size())
    throw Error(ErrorKind::Internal, "snapshot size mismatch");
  for (size_t i = 0; i < values.size(); ++i) tensors_[i].value = values[i];
}

Var ParamBinding::operator()(int tensor_index) {
  Var& slot = vars_[tensor_index];
  if (!slot.valid()) {
    Tensor& t = params_.at(tensor_index);
    Mat* sink = sinks_ != nullptr ? &(*sinks_)[tensor_index] : &t.grad;
    slot = tape_.leaf(t.value, sink);
  }
  return slot;
}

void AdamW::step(ParamSet& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (int i = 0; i < params.count(); ++i) {
    Tensor& p = params.at(i);
    double lr = p.group == Group::Backbone ? backbone_lr_ : head_lr_;
    p.adam_m = beta1_ * p.adam_m + (1.0 - beta1_) * p.grad;
    p.adam_v = beta2_ * p.adam_v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    Mat m_hat = p.adam_m / bc1;
    Mat v_hat = p.adam_v / bc2;
    p.value -= lr * weight_decay_ * p.value;
    p.value.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps_);
  }
}

void init_gaussian(Mat& m, Rng& rng, double stddev) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = stddev * rng.normal();
}

}  // namespace p2g
