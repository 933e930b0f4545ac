#include "p2g/config.hpp"

#include <fstream>
#include <sstream>

namespace p2g {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  auto put = [&c](const char* k, const char* v) { c.kv_[k] = v; };

  put("seed", "42");
  put("runtime.threads", "0");

  put("generator.scenario_count", "4");
  put("generator.vocab_per_scenario", "24");
  put("generator.chain_length", "8");
  put("generator.candidate_count", "5");
  put("generator.null_argument_rate", "0.1");
  put("generator.distractor_overlap_rate", "0.5");
  put("generator.instance_count", "20000");
  put("generator.dev_count", "2000");
  put("generator.test_count", "2000");

  put("backbone.hidden_size", "64");
  put("backbone.layer_count", "2");
  put("backbone.head_count", "4");
  put("backbone.feed_forward_size", "128");
  put("backbone.max_sequence_length", "64");
  put("backbone.dropout_rate", "0");

  put("pretrain.steps", "800");
  put("pretrain.batch_size", "16");
  put("pretrain.mask_probability", "0.15");
  put("pretrain.learning_rate", "3e-4");
  put("pretrain.weight_decay", "1e-8");
  put("pretrain.log_every", "50");

  put("train.backbone_lr", "1e-4");
  put("train.head_lr", "3e-4");
  put("train.weight_decay", "1e-8");
  put("train.batch_size", "8");
  put("train.steps", "2000");
  put("train.eval_every", "250");
  put("train.eval_subset", "500");
  put("train.from_scratch", "false");

  put("model.label_token_count", "3");
  put("model.lambda", "1.0");
  put("model.variance_floor", "1e-8");
  put("model.initial_prompt_log_variance", "-6");
  put("model.prob_floor", "1e-12");
  put("model.divergence_sign", "negated");
  put("model.manual_prompt_tokens", "the,next,event,is");
  put("model.manual_label_token", "then");
  put("model.lr_label_token", "then");

  put("ablation.no_pe_variance", "false");
  put("ablation.no_ve_variance", "false");
  put("ablation.static_prompt", "false");
  put("ablation.plain_sum_aggregation", "false");
  put("ablation.single_label_token", "false");
  put("ablation.manual_pvp", "false");
  put("ablation.learnable_prompt_lr", "false");

  put("eval.samples", "1");
  put("eval.seed", "777");
  put("eval.variance_override", "none");

  put("metrics.wall_clock", "false");
  put("sweep.n_values", "0,1,2,4,6,8,10");
  put("sweep.lambda_values", "0.1,0.5,1.0,2.0");
  return c;
}

void Config::require_known(const std::string& key) const {
  if (kv_.count(key) == 0) throw usage_error("unknown config key: " + key);
}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw usage_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    require_known(key);
    kv_[key] = value;
  }
}

void Config::apply_override(const std::string& kv) {
  size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw usage_error("override must look like key=value, got '" + kv + "'");
  std::string key = trim(kv.substr(0, eq));
  std::string value = trim(kv.substr(eq + 1));
  require_known(key);
  kv_[key] = value;
}

void Config::set(const std::string& key, const std::string& value) {
  require_known(key);
  kv_[key] = value;
}

void Config::overlay(const std::map<std::string, std::string>& entries) {
  for (const auto& [k, v] : entries) set(k, v);
}

const std::string& Config::str(const std::string& key) const {
  require_known(key);
  return kv_.at(key);
}

double Config::num(const std::string& key) const {
  const std::string& v = str(key);
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw usage_error("config key " + key + " is not a number: '" + v + "'");
  }
}

int Config::integer(const std::string& key) const {
  double d = num(key);
  int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw usage_error("config key " + key + " is not an integer");
  return i;
}

bool Config::flag(const std::string& key) const {
  const std::string& v = str(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw usage_error("config key " + key + " is not a boolean: '" + v + "'");
}

uint64_t Config::u64(const std::string& key) const {
  const std::string& v = str(key);
  try {
    size_t pos = 0;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<uint64_t>(x);
  } catch (const std::exception&) {
    throw usage_error("config key " + key + " is not an unsigned integer: '" + v + "'");
  }
}

std::vector<std::string> Config::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::string t = trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

std::vector<int> Config::int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& s : list(key)) out.push_back(std::stoi(s));
  return out;
}

std::vector<double> Config::num_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& s : list(key)) out.push_back(std::stod(s));
  return out;
}

void Config::write_snapshot(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write config snapshot: " + path);
  for (const auto& [k, v] : kv_) out << k << " = " << v << '\n';
}

GeneratorConfig generator_from_config(const Config& cfg) {
  GeneratorConfig g;
  g.scenario_count = cfg.integer("generator.scenario_count");
  g.vocab_per_scenario = cfg.integer("generator.vocab_per_scenario");
  g.chain_length = cfg.integer("generator.chain_length");
  g.candidate_count = cfg.integer("generator.candidate_count");
  g.null_argument_rate = cfg.num("generator.null_argument_rate");
  g.distractor_overlap_rate = cfg.num("generator.distractor_overlap_rate");
  g.instance_count = cfg.integer("generator.instance_count");
  g.seed = cfg.u64("seed");
  return g;
}

BackboneConfig backbone_from_config(const Config& cfg) {
  BackboneConfig b;
  b.hidden_size = cfg.integer("backbone.hidden_size");
  b.layer_count = cfg.integer("backbone.layer_count");
  b.head_count = cfg.integer("backbone.head_count");
  b.feed_forward_size = cfg.integer("backbone.feed_forward_size");
  b.max_sequence_length = cfg.integer("backbone.max_sequence_length");
  b.dropout_rate = cfg.num("backbone.dropout_rate");
  b.validate();
  return b;
}

PretrainConfig pretrain_from_config(const Config& cfg) {
  PretrainConfig p;
  p.steps = cfg.integer("pretrain.steps");
  p.batch_size = cfg.integer("pretrain.batch_size");
  p.mask_probability = cfg.num("pretrain.mask_probability");
  p.learning_rate = cfg.num("pretrain.learning_rate");
  p.weight_decay = cfg.num("pretrain.weight_decay");
  p.seed = cfg.u64("seed");
  p.threads = cfg.integer("runtime.threads");
  p.log_every = cfg.integer("pretrain.log_every");
  return p;
}

RunConfig run_from_config(const Config& cfg) {
  RunConfig r;
  r.backbone_lr = cfg.num("train.backbone_lr");
  r.head_lr = cfg.num("train.head_lr");
  r.weight_decay = cfg.num("train.weight_decay");
  r.batch_size = cfg.integer("train.batch_size");
  r.steps = cfg.integer("train.steps");
  r.eval_samples = cfg.integer("eval.samples");
  r.sign = sign_convention_from_string(cfg.str("model.divergence_sign"));
  r.ablation.no_pe_variance = cfg.flag("ablation.no_pe_variance");
  r.ablation.no_ve_variance = cfg.flag("ablation.no_ve_variance");
  r.ablation.static_prompt = cfg.flag("ablation.static_prompt");
  r.ablation.plain_sum_aggregation = cfg.flag("ablation.plain_sum_aggregation");
  r.ablation.single_label_token = cfg.flag("ablation.single_label_token");
  r.ablation.manual_pvp = cfg.flag("ablation.manual_pvp");
  r.ablation.learnable_prompt_lr = cfg.flag("ablation.learnable_prompt_lr");
  r.seed = cfg.u64("seed");
  r.label_token_count = cfg.integer("model.label_token_count");
  r.lambda = cfg.num("model.lambda");
  r.variance_floor = cfg.num("model.variance_floor");
  r.initial_prompt_log_variance = cfg.num("model.initial_prompt_log_variance");
  r.prob_floor = cfg.num("model.prob_floor");
  r.eval_every = cfg.integer("train.eval_every");
  r.eval_subset = cfg.integer("train.eval_subset");
  r.from_scratch = cfg.flag("train.from_scratch");
  r.manual_prompt_tokens = cfg.list("model.manual_prompt_tokens");
  r.manual_label_token = cfg.str("model.manual_label_token");
  r.lr_label_token = cfg.str("model.lr_label_token");
  r.threads = cfg.integer("runtime.threads");
  r.eval_seed = cfg.u64("eval.seed");
  const std::string& vo = cfg.str("eval.variance_override");
  if (vo == "zero")
    r.zero_variance_override = true;
  else if (vo != "none")
    throw usage_error("eval.variance_override must be 'none' or 'zero'");
  if (r.backbone_lr <= 0 || r.head_lr <= 0) throw usage_error("learning rates must be positive");
  if (r.eval_samples < 0) throw usage_error("eval.samples must be >= 0");
  if (r.lambda <= 0) throw usage_error("model.lambda must be positive");
  return r;
}

}  // namespace p2g
