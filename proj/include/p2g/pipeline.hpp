#pragma once

#include <memory>
#include <optional>

#include "p2g/verbalizer.hpp"

namespace p2g {

// Eq-as-printed puts +KL inside the softmax so more divergent candidates
// score higher; the negated convention (default) flips the sign.
enum class SignConvention { Negated, PaperLiteral };
SignConvention sign_convention_from_string(const std::string& s);
const char* to_string(SignConvention s);

struct AblationFlags {
  bool no_pe_variance = false;        // prompt sampling returns the mean
  bool no_ve_variance = false;        // label sampling returns the mean
  bool static_prompt = false;         // candidate-independent learnable Gaussians
  bool plain_sum_aggregation = false; // kappa forced to 1
  bool single_label_token = false;    // l = 1
  bool manual_pvp = false;            // fixed vocab prompt tokens + one-hot label
  bool learnable_prompt_lr = false;   // free prompt vectors + one-hot label

  std::string to_string() const;  // "none" or "+"-joined flag names
};

struct RunConfig {
  double backbone_lr = 1e-4;
  double head_lr = 3e-4;
  double weight_decay = 1e-8;
  int batch_size = 8;
  int steps = 2000;
  int eval_samples = 1;  // inference-time n; 0 uses Gaussian means
  SignConvention sign = SignConvention::Negated;
  AblationFlags ablation;
  uint64_t seed = 42;
  int label_token_count = 3;
  double lambda = 1.0;
  double variance_floor = 1e-8;
  double prob_floor = 1e-12;
  // Initial log-variance of prompt Gaussians (exp(-6) ~ 0.0025, sigma ~ 0.05,
  // matching the 0.02-scale embedding init).
  double initial_prompt_log_variance = -6.0;
  int eval_every = 250;
  int eval_subset = 500;
  bool from_scratch = false;
  std::vector<std::string> manual_prompt_tokens{"the", "next", "event", "is"};
  std::string manual_label_token = "then";
  std::string lr_label_token = "then";
  int threads = 0;
  uint64_t eval_seed = 777;
  // Diagnostic knob: treat every Gaussian as a point mass (exact zero
  // variance in the sampling step, flooring bypassed).
  bool zero_variance_override = false;
};

// Every trainable tensor of the full method over one ParamSet, plus the
// functional modules indexing into it.
struct Model {
  BackboneConfig backbone_config;
  Vocabulary vocab;
  RunConfig run;
  ParamSet params;
  Backbone backbone;
  PromptEstimator prompt_estimator;
  Verbalizer verbalizer;
  int static_prompt_mean = -1;     // 4 x d
  int static_prompt_logvar = -1;   // 4 x d
  int learnable_prompt = -1;       // 4 x d

  Model(const BackboneConfig& bc, Vocabulary v, const RunConfig& rc);
  void init(uint64_t seed) { params.initialize(seed); }
  int effective_label_tokens() const {
    return run.ablation.single_label_token ? 1 : verbalizer.label_token_count();
  }
};

// Per-pass noise; implementations must be pure functions of their arguments
// so parallel evaluation order cannot change results.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Vec prompt(int candidate, int slot, int sample, int len) = 0;
  virtual Vec label(int sample, int len) = 0;
};

class ZeroNoise : public NoiseSource {
 public:
  Vec prompt(int, int, int, int len) override { return Vec::Zero(len); }
  Vec label(int, int len) override { return Vec::Zero(len); }
};

class SeededNoise : public NoiseSource {
 public:
  explicit SeededNoise(uint64_t base) : base_(base) {}
  Vec prompt(int candidate, int slot, int sample, int len) override {
    return gaussian_vector(mix_key({base_, 0xA1ULL, static_cast<uint64_t>(candidate),
                                    static_cast<uint64_t>(slot), static_cast<uint64_t>(sample)}),
                           len);
  }
  Vec label(int sample, int len) override {
    return gaussian_vector(mix_key({base_, 0xB2ULL, static_cast<uint64_t>(sample)}), len);
  }

 private:
  uint64_t base_;
};

struct ForwardOptions {
  int samples = 1;  // n; 0 runs the n=1 path with zero noise
  bool train_mode = false;
  Rng* dropout_rng = nullptr;
};

struct InstanceForward {
  Var loss;                        // -log score[gold]
  Vec scores;                      // m, sums to 1
  std::vector<Vec> candidate_probs;  // p_j per candidate
  Vec label_probs;                 // p_v
  int predicted = 0;
};

InstanceForward forward_instance(Tape& tape, ParamBinding& bind, Model& model,
                                 const ScriptInstance& instance, NoiseSource& noise,
                                 const ForwardOptions& opts);

// Tape route shared by forward_instance and the value-level face below.
Var scores_from_probs(Tape& tape, const std::vector<Var>& candidate_probs, Var label_probs,
                      SignConvention sign, double prob_floor);

Vec candidate_distribution(Model& model, const ScriptInstance& instance, int candidate,
                           NoiseSource& noise, const ForwardOptions& opts);
// The four prompt rows injected for (candidate, sample); exposes the ablation
// contracts (static/manual/learnable prompts, no_pe_variance) to tests.
std::array<Vec, 4> prompt_vectors_for(Model& model, const ScriptInstance& instance, int candidate,
                                      NoiseSource& noise, int sample);
Vec score_candidates(const std::vector<Vec>& candidate_probs, const Vec& label_probs,
                     SignConvention sign, double prob_floor = 1e-12);
int predict(const Vec& scores);
double instance_loss(const Vec& scores, int gold, double prob_floor = 1e-12);

struct MetricRow {
  int step = 0;
  std::string split;
  double accuracy = 0.0;
  double mean_loss = 0.0;
  int n = 0;
  std::string ablation_flags;
  uint64_t seed = 0;
  long long wall_clock_ms = 0;
};

struct EvalRecord {
  int index = 0;
  int gold = 0;
  int predicted = 0;
  Vec scores;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  std::vector<EvalRecord> records;
};

EvalResult evaluate(Model& model, const std::vector<ScriptInstance>& dataset, int samples,
                    uint64_t eval_seed, int threads);

struct TrainResult {
  std::vector<MetricRow> rows;
  double best_dev_accuracy = 0.0;
  int best_step = -1;
  double final_dev_accuracy = 0.0;
};

// Minimizes the summed NLL with decoupled-weight-decay Adam in two groups.
// Keeps the best-subset-dev parameters and restores them before the final
// full-dev evaluation.
TrainResult train(Model& model, const std::vector<ScriptInstance>& train_set,
                  const std::vector<ScriptInstance>& dev_set);

struct GradCheckFamily {
  std::string family;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  int checked = 0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckFamily> families;
  double max_rel_error = 0.0;
  std::string failing_family;  // empty when pass
  bool pass = true;
};

// Tiny-fixture full-pipeline gradient verification (d=8, 1 layer, |V|=20).
// corrupt_tensor, when non-empty, multiplies that tensor's analytic gradient
// by 1.1 to prove the harness catches bad gradients.
GradCheckReport gradient_check(uint64_t seed, int samples_per_family = 12,
                               const std::string& corrupt_tensor = "");

}  // namespace p2g
