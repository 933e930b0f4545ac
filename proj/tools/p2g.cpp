// Command-line entry point: corpus generation, backbone pretraining, P2G
// training, evaluation, ablation suites, sweeps, and gradient verification.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "p2g/checkpoint.hpp"
#include "p2g/config.hpp"
#include "p2g/metrics.hpp"
#include "p2g/pretrain.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace p2g;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  std::string seed_override;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_out = true) {
  cmd->add_option("--config", args.config_path, "layered key=value config file");
  auto* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", args.seed_override, "override the run seed");
  cmd->add_option("overrides", args.overrides, "config overrides as key=value");
}

Config resolve_config(const CommonArgs& args) {
  Config cfg = Config::defaults();
  if (!args.config_path.empty()) cfg.load_file(args.config_path);
  for (const std::string& kv : args.overrides) cfg.apply_override(kv);
  if (!args.seed_override.empty()) cfg.set("seed", args.seed_override);
  return cfg;
}

fs::path prepare_out_dir(const std::string& dir) {
  fs::path p(dir);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw io_error("cannot create output directory " + dir + ": " + ec.message());
  return p;
}

// Real wall-clock timings live here, not in the metric CSVs, so re-runs stay
// byte-identical.
class RunMeta {
 public:
  RunMeta(std::string command, fs::path out_dir)
      : command_(std::move(command)),
        out_dir_(std::move(out_dir)),
        t0_(std::chrono::steady_clock::now()) {}

  void note(const std::string& key, const json& value) { extra_[key] = value; }

  ~RunMeta() {
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::steady_clock::now() - t0_)
                  .count();
    json j;
    j["command"] = command_;
    j["wall_clock_ms"] = ms;
    for (auto& [k, v] : extra_.items()) j[k] = v;
    std::ofstream out(out_dir_ / "run_meta.json");
    out << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  fs::path out_dir_;
  std::chrono::steady_clock::time_point t0_;
  json extra_;
};

std::vector<std::string> scan_corpus_tokens(const std::vector<ScriptInstance>& corpus) {
  std::set<std::string> seen;
  for (const ScriptInstance& inst : corpus) {
    auto add_event = [&seen](const Event& e) {
      for (const std::string& tok : event_to_tokens(e))
        if (tok != "[NULL]") seen.insert(tok);
    };
    for (const Event& e : inst.chain) add_event(e);
    for (const Event& e : inst.candidates) add_event(e);
  }
  return {seen.begin(), seen.end()};
}

// vocab.json manifest written by generate next to its corpora.
void write_vocab_manifest(const fs::path& path, const Vocabulary& vocab) {
  json j;
  j["tokens"] = vocab.tokens();
  j["hash"] = hash_hex(vocab.hash());
  std::ofstream out(path);
  if (!out) throw io_error("cannot write vocabulary manifest: " + path.string());
  out << j.dump() << '\n';
}

std::optional<Vocabulary> sidecar_vocabulary(const std::string& corpus_path) {
  fs::path manifest = fs::path(corpus_path).parent_path() / "vocab.json";
  if (!fs::exists(manifest)) return std::nullopt;
  std::ifstream in(manifest);
  json j;
  try {
    in >> j;
    return Vocabulary::from_token_list(j.at("tokens").get<std::vector<std::string>>());
  } catch (const std::exception& ex) {
    throw data_error("corrupt vocabulary manifest " + manifest.string() + ": " + ex.what());
  }
}

Vocabulary vocabulary_for_corpus(const std::string& corpus_path,
                                 const std::vector<ScriptInstance>& corpus) {
  if (auto v = sidecar_vocabulary(corpus_path)) return *v;
  return Vocabulary::build(scan_corpus_tokens(corpus));
}

void check_vocab_hash(const std::string& corpus_path, const std::string& checkpoint_hash) {
  if (auto v = sidecar_vocabulary(corpus_path)) {
    if (hash_hex(v->hash()) != checkpoint_hash)
      throw data_error("vocabulary mismatch: corpus manifest hash " + hash_hex(v->hash()) +
                       " differs from checkpoint hash " + checkpoint_hash);
  }
}

json config_as_json(const Config& cfg) { return json(cfg.entries()); }

std::map<std::string, std::string> config_map_from_json(const json& j) {
  std::map<std::string, std::string> m;
  for (auto& [k, v] : j.items()) m[k] = v.get<std::string>();
  return m;
}

int cmd_generate(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  fs::path out = prepare_out_dir(args.out_dir);
  cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("generate", out);

  GeneratorConfig base = generator_from_config(cfg);
  Vocabulary vocab = Vocabulary::build(generator_token_universe(base));
  write_vocab_manifest(out / "vocab.json", vocab);

  struct Split {
    const char* name;
    int count;
    uint64_t tag;
  };
  const Split splits[] = {{"train", base.instance_count, 1},
                          {"dev", cfg.integer("generator.dev_count"), 2},
                          {"test", cfg.integer("generator.test_count"), 3}};
  for (const Split& s : splits) {
    if (s.count <= 0) continue;
    GeneratorConfig gc = base;
    gc.instance_count = s.count;
    gc.seed = mix_key({base.seed, 0x5EEDULL, s.tag});
    GeneratedCorpus corpus = generate_corpus(gc);
    save_corpus((out / (std::string(s.name) + ".jsonl")).string(), corpus.instances);
    std::cout << "wrote " << s.name << ".jsonl (" << s.count << " instances)\n";
  }
  meta.note("vocab_hash", hash_hex(vocab.hash()));
  return 0;
}

int cmd_pretrain(const CommonArgs& args, const std::string& corpus_path,
                 const std::string& dev_path) {
  Config cfg = resolve_config(args);
  fs::path out = prepare_out_dir(args.out_dir);
  cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("pretrain", out);

  std::vector<ScriptInstance> corpus = load_corpus(corpus_path);
  Vocabulary vocab = vocabulary_for_corpus(corpus_path, corpus);
  BackboneConfig bc = backbone_from_config(cfg);
  RunConfig rc = run_from_config(cfg);
  Model model(bc, vocab, rc);
  model.init(cfg.u64("seed"));

  PretrainConfig pc = pretrain_from_config(cfg);
  PretrainResult res = pretrain(model, corpus, pc);

  double held_out = 0.0;
  bool has_dev = !dev_path.empty();
  if (has_dev) {
    std::vector<ScriptInstance> dev = load_corpus(dev_path);
    held_out = masked_lm_loss(model, dev, pc.mask_probability, cfg.u64("eval.seed"), pc.threads);
    std::cout << "held-out masked loss " << format_metric(held_out) << " (uniform baseline "
              << format_metric(std::log(vocab.size())) << ")\n";
  }
  write_pretrain_csv((out / "pretrain_loss.csv").string(), res.loss_log, held_out, has_dev);
  save_checkpoint((out / "backbone.ckpt").string(), "backbone", bc, vocab, model.params,
                  json{{"config", config_as_json(cfg)}});
  meta.note("final_loss", res.final_loss);
  meta.note("vocab_hash", hash_hex(vocab.hash()));
  std::cout << "final pretraining loss " << format_metric(res.final_loss) << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_path, const std::string& dev_path,
              const std::string& pretrained_path) {
  Config cfg = resolve_config(args);
  fs::path out = prepare_out_dir(args.out_dir);

  std::vector<ScriptInstance> corpus = load_corpus(corpus_path);
  std::vector<ScriptInstance> dev = load_corpus(dev_path);

  std::optional<LoadedCheckpoint> ck;
  Vocabulary vocab = Vocabulary::build({});
  if (!pretrained_path.empty()) {
    ck = load_checkpoint(pretrained_path);
    check_vocab_hash(corpus_path, ck->vocab_hash);
    vocab = Vocabulary::from_token_list(ck->vocab_tokens);
    // The checkpoint's architecture wins; reflect it in the snapshot.
    cfg.set("backbone.hidden_size", std::to_string(ck->backbone.hidden_size));
    cfg.set("backbone.layer_count", std::to_string(ck->backbone.layer_count));
    cfg.set("backbone.head_count", std::to_string(ck->backbone.head_count));
    cfg.set("backbone.feed_forward_size", std::to_string(ck->backbone.feed_forward_size));
    cfg.set("backbone.max_sequence_length", std::to_string(ck->backbone.max_sequence_length));
  } else if (!cfg.flag("train.from_scratch")) {
    throw usage_error("train requires --pretrained, or train.from_scratch=true");
  } else {
    vocab = vocabulary_for_corpus(corpus_path, corpus);
  }

  cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("train", out);

  BackboneConfig bc = ck ? ck->backbone : backbone_from_config(cfg);
  RunConfig rc = run_from_config(cfg);
  Model model(bc, vocab, rc);
  model.init(cfg.u64("seed"));
  if (ck) {
    const std::string prefix = ck->kind == "backbone" ? "backbone/" : "";
    copy_tensors_into(model.params, ck->tensors, prefix, /*require_all=*/true);
  }

  TrainResult res = train(model, corpus, dev);

  MetricsCsv csv((out / "metrics.csv").string(), cfg.flag("metrics.wall_clock"));
  for (const MetricRow& row : res.rows) csv.write(row);
  save_checkpoint((out / "model.ckpt").string(), "full", bc, vocab, model.params,
                  json{{"config", config_as_json(cfg)},
                       {"best_dev_accuracy", res.best_dev_accuracy},
                       {"best_step", res.best_step}});
  meta.note("final_dev_accuracy", res.final_dev_accuracy);
  meta.note("best_dev_accuracy", res.best_dev_accuracy);
  std::cout << "final dev accuracy " << format_metric(res.final_dev_accuracy) << " (best subset "
            << format_metric(res.best_dev_accuracy) << " at step " << res.best_step << ")\n";
  return 0;
}

// Loads a full checkpoint and rebuilds its Model under the training-time
// config, overlaid with the caller's eval-time keys.
struct RestoredModel {
  Config cfg = Config::defaults();
  std::unique_ptr<Model> model;
  std::string vocab_hash;
};

RestoredModel restore_model(const std::string& checkpoint_path, const CommonArgs& args) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint_path);
  if (ck.kind != "full")
    throw data_error("expected a full checkpoint (got kind '" + ck.kind + "')");
  RestoredModel rm;
  if (ck.extra.contains("config")) rm.cfg.overlay(config_map_from_json(ck.extra["config"]));
  if (!args.config_path.empty()) rm.cfg.load_file(args.config_path);
  for (const std::string& kv : args.overrides) rm.cfg.apply_override(kv);
  if (!args.seed_override.empty()) rm.cfg.set("seed", args.seed_override);

  Vocabulary vocab = Vocabulary::from_token_list(ck.vocab_tokens);
  RunConfig rc = run_from_config(rm.cfg);
  rm.model = std::make_unique<Model>(ck.backbone, vocab, rc);
  rm.model->init(rm.cfg.u64("seed"));
  copy_tensors_into(rm.model->params, ck.tensors, "", /*require_all=*/true);
  rm.vocab_hash = ck.vocab_hash;
  return rm;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& corpus_path) {
  RestoredModel rm = restore_model(checkpoint_path, args);
  fs::path out = prepare_out_dir(args.out_dir);
  rm.cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("eval", out);

  check_vocab_hash(corpus_path, rm.vocab_hash);
  std::vector<ScriptInstance> dataset = load_corpus(corpus_path);

  const int n = rm.cfg.integer("eval.samples");
  EvalResult res =
      evaluate(*rm.model, dataset, n, rm.cfg.u64("eval.seed"), rm.cfg.integer("runtime.threads"));

  json acc;
  acc["accuracy"] = res.accuracy;
  acc["mean_loss"] = res.mean_loss;
  acc["n"] = n;
  acc["instances"] = dataset.size();
  std::ofstream(out / "accuracy.json") << acc.dump(2) << '\n';
  write_per_instance_csv((out / "per_instance.csv").string(), res.records);

  MetricsCsv csv((out / "metrics.csv").string(), rm.cfg.flag("metrics.wall_clock"));
  MetricRow row;
  row.split = "eval";
  row.accuracy = res.accuracy;
  row.mean_loss = res.mean_loss;
  row.n = n;
  row.ablation_flags = rm.model->run.ablation.to_string();
  row.seed = rm.cfg.u64("seed");
  csv.write(row);
  meta.note("accuracy", res.accuracy);
  std::cout << "accuracy " << format_metric(res.accuracy) << " over " << dataset.size()
            << " instances (n=" << n << ")\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& corpus_path, const std::string& dev_path,
               const std::string& pretrained_path) {
  Config cfg = resolve_config(args);
  fs::path out = prepare_out_dir(args.out_dir);
  cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("ablate", out);

  std::vector<ScriptInstance> corpus = load_corpus(corpus_path);
  std::vector<ScriptInstance> dev = load_corpus(dev_path);

  std::optional<LoadedCheckpoint> ck;
  Vocabulary vocab = Vocabulary::build({});
  if (!pretrained_path.empty()) {
    ck = load_checkpoint(pretrained_path);
    check_vocab_hash(corpus_path, ck->vocab_hash);
    vocab = Vocabulary::from_token_list(ck->vocab_tokens);
  } else if (!cfg.flag("train.from_scratch")) {
    throw usage_error("ablate requires --pretrained, or train.from_scratch=true");
  } else {
    vocab = vocabulary_for_corpus(corpus_path, corpus);
  }
  BackboneConfig bc = ck ? ck->backbone : backbone_from_config(cfg);

  struct Variant {
    const char* name;
    void (*apply)(AblationFlags&);
  };
  const Variant variants[] = {
      {"full", [](AblationFlags&) {}},
      {"no_pe_variance", [](AblationFlags& f) { f.no_pe_variance = true; }},
      {"no_ve_variance", [](AblationFlags& f) { f.no_ve_variance = true; }},
      {"no_pe+no_ve",
       [](AblationFlags& f) {
         f.no_pe_variance = true;
         f.no_ve_variance = true;
       }},
      {"static_prompt", [](AblationFlags& f) { f.static_prompt = true; }},
      {"plain_sum_aggregation", [](AblationFlags& f) { f.plain_sum_aggregation = true; }},
      {"single_label_token", [](AblationFlags& f) { f.single_label_token = true; }},
  };

  MetricsCsv csv((out / "ablate_metrics.csv").string(), cfg.flag("metrics.wall_clock"));
  for (const Variant& v : variants) {
    RunConfig rc = run_from_config(cfg);
    rc.ablation = AblationFlags{};
    v.apply(rc.ablation);
    Model model(bc, vocab, rc);
    model.init(cfg.u64("seed"));
    if (ck) {
      const std::string prefix = ck->kind == "backbone" ? "backbone/" : "";
      copy_tensors_into(model.params, ck->tensors, prefix, true);
    }
    TrainResult res = train(model, corpus, dev);
    MetricRow row;
    row.step = rc.steps;
    row.split = "dev_final";
    row.accuracy = res.final_dev_accuracy;
    for (auto it = res.rows.rbegin(); it != res.rows.rend(); ++it)
      if (it->split == "dev_final") {
        row.mean_loss = it->mean_loss;
        break;
      }
    row.n = rc.eval_samples;
    row.ablation_flags = rc.ablation.to_string();
    row.seed = rc.seed;
    csv.write(row);
    std::cout << v.name << ": dev accuracy " << format_metric(res.final_dev_accuracy) << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& kind, const std::string& checkpoint_path,
              const std::string& corpus_path) {
  if (kind != "n" && kind != "lambda") throw usage_error("sweep --kind must be 'n' or 'lambda'");
  RestoredModel rm = restore_model(checkpoint_path, args);
  fs::path out = prepare_out_dir(args.out_dir);
  rm.cfg.write_snapshot((out / "config.resolved.txt").string());
  RunMeta meta("sweep", out);

  check_vocab_hash(corpus_path, rm.vocab_hash);
  std::vector<ScriptInstance> dataset = load_corpus(corpus_path);

  MetricsCsv csv((out / "sweep_metrics.csv").string(), rm.cfg.flag("metrics.wall_clock"));
  const int threads = rm.cfg.integer("runtime.threads");
  const uint64_t eval_seed = rm.cfg.u64("eval.seed");

  if (kind == "n") {
    for (int n : rm.cfg.int_list("sweep.n_values")) {
      EvalResult res = evaluate(*rm.model, dataset, n, eval_seed, threads);
      MetricRow row;
      row.split = "eval";
      row.accuracy = res.accuracy;
      row.mean_loss = res.mean_loss;
      row.n = n;
      row.ablation_flags = rm.model->run.ablation.to_string();
      row.seed = rm.cfg.u64("seed");
      csv.write(row);
      std::cout << "n=" << n << " accuracy " << format_metric(res.accuracy) << "\n";
    }
  } else {
    const int n = rm.cfg.integer("eval.samples");
    for (double lambda : rm.cfg.num_list("sweep.lambda_values")) {
      rm.model->run.lambda = lambda;
      EvalResult res = evaluate(*rm.model, dataset, n, eval_seed, threads);
      MetricRow row;
      row.split = "eval";
      row.accuracy = res.accuracy;
      row.mean_loss = res.mean_loss;
      row.n = n;
      row.ablation_flags = "lambda=" + format_metric(lambda);
      row.seed = rm.cfg.u64("seed");
      csv.write(row);
      std::cout << "lambda=" << lambda << " accuracy " << format_metric(res.accuracy) << "\n";
    }
  }
  return 0;
}

int cmd_gradcheck(const CommonArgs& args) {
  Config cfg = resolve_config(args);
  GradCheckReport report = gradient_check(cfg.u64("seed"));

  std::ostringstream text;
  for (const GradCheckFamily& f : report.families)
    text << f.family << ": max_rel_error " << format_metric(f.max_rel_error) << " over "
         << f.checked << " parameters" << (f.pass ? "" : " FAIL at " + f.worst_parameter) << "\n";
  text << (report.pass ? "PASS" : "FAIL (" + report.failing_family + ")")
       << ": max relative error " << format_metric(report.max_rel_error) << "\n";
  std::cout << text.str();
  if (!args.out_dir.empty()) {
    fs::path out = prepare_out_dir(args.out_dir);
    cfg.write_snapshot((out / "config.resolved.txt").string());
    std::ofstream(out / "gradcheck.txt") << text.str();
  }
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian prompt and verbalizer learning for script event prediction"};
  app.require_subcommand(1);

  CommonArgs generate_args, pretrain_args, train_args, eval_args, ablate_args, sweep_args,
      gradcheck_args;
  std::string corpus, dev, pretrained, checkpoint, sweep_kind;

  CLI::App* c_generate = app.add_subcommand("generate", "write synthetic corpora + vocab manifest");
  add_common(c_generate, generate_args);

  CLI::App* c_pretrain = app.add_subcommand("pretrain", "masked-LM pretraining of the backbone");
  add_common(c_pretrain, pretrain_args);
  c_pretrain->add_option("--corpus", corpus, "training corpus (jsonl)")->required();
  c_pretrain->add_option("--dev", dev, "held-out corpus for the final masked loss");

  CLI::App* c_train = app.add_subcommand("train", "train the full model");
  add_common(c_train, train_args);
  c_train->add_option("--corpus", corpus, "training corpus (jsonl)")->required();
  c_train->add_option("--dev", dev, "dev corpus (jsonl)")->required();
  c_train->add_option("--pretrained", pretrained, "backbone checkpoint from pretrain");

  CLI::App* c_eval = app.add_subcommand("eval", "evaluate a trained checkpoint");
  add_common(c_eval, eval_args);
  c_eval->add_option("--checkpoint", checkpoint, "full checkpoint from train")->required();
  c_eval->add_option("--corpus", corpus, "evaluation corpus (jsonl)")->required();

  CLI::App* c_ablate = app.add_subcommand("ablate", "train every ablation variant");
  add_common(c_ablate, ablate_args);
  c_ablate->add_option("--corpus", corpus, "training corpus (jsonl)")->required();
  c_ablate->add_option("--dev", dev, "dev corpus (jsonl)")->required();
  c_ablate->add_option("--pretrained", pretrained, "backbone checkpoint from pretrain");

  CLI::App* c_sweep = app.add_subcommand("sweep", "evaluate across n or lambda values");
  add_common(c_sweep, sweep_args);
  c_sweep->add_option("--kind", sweep_kind, "'n' or 'lambda'")->required();
  c_sweep->add_option("--checkpoint", checkpoint, "full checkpoint from train")->required();
  c_sweep->add_option("--corpus", corpus, "evaluation corpus (jsonl)")->required();

  CLI::App* c_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(c_gradcheck, gradcheck_args, /*needs_out=*/false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\nerror: " << e.get_name() << ": " << e.what() << "\n";
    return 2;
  }

  try {
    if (c_generate->parsed()) return cmd_generate(generate_args);
    if (c_pretrain->parsed()) return cmd_pretrain(pretrain_args, corpus, dev);
    if (c_train->parsed()) return cmd_train(train_args, corpus, dev, pretrained);
    if (c_eval->parsed()) return cmd_eval(eval_args, checkpoint, corpus);
    if (c_ablate->parsed()) return cmd_ablate(ablate_args, corpus, dev, pretrained);
    if (c_sweep->parsed()) return cmd_sweep(sweep_args, sweep_kind, checkpoint, corpus);
    if (c_gradcheck->parsed()) return cmd_gradcheck(gradcheck_args);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    switch (err.kind()) {
      case ErrorKind::Usage:
        return 2;
      case ErrorKind::Nan:
        return 3;
      default:
        return 1;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
