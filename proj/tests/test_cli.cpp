#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "p2g/checkpoint.hpp"
#include "p2g/config.hpp"

using namespace p2g;
namespace fs = std::filesystem;

namespace {

const char* kCli = P2G_CLI_PATH;

struct Workdir {
  fs::path root;
  Workdir() {
    root = fs::temp_directory_path() / ("p2g_cli_" + std::to_string(::getpid()));
    fs::create_directories(root);
  }
  ~Workdir() { fs::remove_all(root); }
  std::string operator/(const std::string& rel) const { return (root / rel).string(); }
};

int run(const std::string& args, const std::string& log = "/dev/null") {
  std::string cmd = std::string(kCli) + " " + args + " >" + log + " 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small end-to-end settings shared by the pipeline cases.
const std::string kTinyGen =
    "generator.scenario_count=2 generator.vocab_per_scenario=6 generator.chain_length=3 "
    "generator.candidate_count=3 generator.instance_count=60 generator.dev_count=20 "
    "generator.test_count=0";
const std::string kTinyNet =
    "backbone.hidden_size=16 backbone.layer_count=1 backbone.head_count=2 "
    "backbone.feed_forward_size=32 backbone.max_sequence_length=32";
const std::string kTinyPretrain = "pretrain.steps=30 pretrain.batch_size=4";
const std::string kTinyTrain =
    "train.steps=12 train.batch_size=4 train.eval_every=6 train.eval_subset=10";

}  // namespace

TEST_CASE("unknown command exits 2 with usage text") {
  Workdir wd;
  CHECK(run("frobnicate", wd / "log.txt") == 2);
  CHECK(slurp(wd / "log.txt").find("Usage") != std::string::npos);
}

TEST_CASE("missing input file exits 1") {
  Workdir wd;
  CHECK(run("pretrain --corpus " + (wd / "nope.jsonl") + " --out " + (wd / "o"), wd / "log.txt") ==
        1);
}

TEST_CASE("unknown config key exits 2") {
  Workdir wd;
  CHECK(run("generate --out " + (wd / "g") + " totally.bogus=1", wd / "log.txt") == 2);
  CHECK(slurp(wd / "log.txt").find("unknown config key") != std::string::npos);
}

TEST_CASE("generate is byte-deterministic and writes the manifest") {
  Workdir wd;
  REQUIRE(run("generate --out " + (wd / "a") + " " + kTinyGen) == 0);
  REQUIRE(run("generate --out " + (wd / "b") + " " + kTinyGen) == 0);
  CHECK(slurp(wd / "a/train.jsonl") == slurp(wd / "b/train.jsonl"));
  CHECK(slurp(wd / "a/dev.jsonl") == slurp(wd / "b/dev.jsonl"));
  CHECK(slurp(wd / "a/vocab.json") == slurp(wd / "b/vocab.json"));
  CHECK(fs::exists(wd / "a/config.resolved.txt"));
  CHECK(fs::exists(wd / "a/run_meta.json"));
  CHECK(!fs::exists(wd / "a/test.jsonl"));  // test_count=0

  // The resolved snapshot alone reproduces the command.
  REQUIRE(run("generate --config " + (wd / "a/config.resolved.txt") + " --out " + (wd / "c")) == 0);
  CHECK(slurp(wd / "a/train.jsonl") == slurp(wd / "c/train.jsonl"));
}

TEST_CASE("pipeline: pretrain, train, eval, sweep run end to end") {
  Workdir wd;
  REQUIRE(run("generate --out " + (wd / "data") + " " + kTinyGen) == 0);

  SUBCASE("full pipeline with determinism and mismatch guard") {
    REQUIRE(run("pretrain --corpus " + (wd / "data/train.jsonl") + " --dev " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "pre") + " " + kTinyNet + " " +
                kTinyPretrain) == 0);
    CHECK(fs::exists(wd / "pre/backbone.ckpt"));
    std::string loss_csv = slurp(wd / "pre/pretrain_loss.csv");
    CHECK(loss_csv.find("step,split,loss") == 0);
    CHECK(loss_csv.find(",dev,") != std::string::npos);

    // backbone checkpoint round-trips through the loader
    LoadedCheckpoint ck = load_checkpoint(wd / "pre/backbone.ckpt");
    CHECK(ck.kind == "backbone");
    CHECK(ck.backbone.hidden_size == 16);
    CHECK(ck.tensors.count("backbone/token_embedding") == 1);
    CHECK(ck.tensors.count("verbalizer/label_tokens") == 0);

    REQUIRE(run("train --corpus " + (wd / "data/train.jsonl") + " --dev " +
                (wd / "data/dev.jsonl") + " --pretrained " + (wd / "pre/backbone.ckpt") +
                " --out " + (wd / "run1") + " " + kTinyTrain) == 0);
    REQUIRE(run("train --corpus " + (wd / "data/train.jsonl") + " --dev " +
                (wd / "data/dev.jsonl") + " --pretrained " + (wd / "pre/backbone.ckpt") +
                " --out " + (wd / "run2") + " " + kTinyTrain) == 0);
    CHECK(slurp(wd / "run1/metrics.csv") == slurp(wd / "run2/metrics.csv"));
    CHECK(slurp(wd / "run1/metrics.csv").find("step,split,accuracy,mean_loss,n,ablation_flags,"
                                              "seed,wall_clock_ms") == 0);

    LoadedCheckpoint full = load_checkpoint(wd / "run1/model.ckpt");
    CHECK(full.kind == "full");
    CHECK(full.tensors.count("verbalizer/label_tokens") == 1);
    CHECK(full.tensors.count("prompt_estimator/attn_mu/Wq") == 1);

    REQUIRE(run("eval --checkpoint " + (wd / "run1/model.ckpt") + " --corpus " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "ev1")) == 0);
    REQUIRE(run("eval --checkpoint " + (wd / "run1/model.ckpt") + " --corpus " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "ev2")) == 0);
    CHECK(slurp(wd / "ev1/metrics.csv") == slurp(wd / "ev2/metrics.csv"));
    CHECK(slurp(wd / "ev1/per_instance.csv") == slurp(wd / "ev2/per_instance.csv"));
    CHECK(slurp(wd / "ev1/accuracy.json").find("accuracy") != std::string::npos);
    std::string per_instance = slurp(wd / "ev1/per_instance.csv");
    CHECK(per_instance.find("instance,gold,predicted,correct,score_0,score_1,score_2") == 0);

    REQUIRE(run("sweep --kind n --checkpoint " + (wd / "run1/model.ckpt") + " --corpus " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "sw") + " sweep.n_values=0,1,2") == 0);
    std::string sweep_csv = slurp(wd / "sw/sweep_metrics.csv");
    int rows = -1;  // header
    for (char c : sweep_csv)
      if (c == '\n') ++rows;
    CHECK(rows == 3);

    REQUIRE(run("sweep --kind lambda --checkpoint " + (wd / "run1/model.ckpt") + " --corpus " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "swl") +
                " sweep.lambda_values=0.5,1.0") == 0);
    CHECK(slurp(wd / "swl/sweep_metrics.csv").find("lambda=0.5") != std::string::npos);

    // A corpus generated under a different vocabulary universe is refused.
    REQUIRE(run("generate --out " + (wd / "other") + " " + kTinyGen +
                " generator.vocab_per_scenario=5") == 0);
    CHECK(run("eval --checkpoint " + (wd / "run1/model.ckpt") + " --corpus " +
              (wd / "other/dev.jsonl") + " --out " + (wd / "bad"),
              wd / "mismatch.log") == 1);
    CHECK(slurp(wd / "mismatch.log").find("vocabulary mismatch") != std::string::npos);
  }

  SUBCASE("train without a pretrained backbone requires the from-scratch flag") {
    CHECK(run("train --corpus " + (wd / "data/train.jsonl") + " --dev " + (wd / "data/dev.jsonl") +
              " --out " + (wd / "r"),
              wd / "log.txt") == 2);
    CHECK(slurp(wd / "log.txt").find("from_scratch") != std::string::npos);
    CHECK(run("train --corpus " + (wd / "data/train.jsonl") + " --dev " + (wd / "data/dev.jsonl") +
              " --out " + (wd / "r2") + " train.from_scratch=true " + kTinyNet + " " + kTinyTrain +
              " train.steps=4") == 0);
  }

  SUBCASE("ablate emits one row per variant") {
    REQUIRE(run("ablate --corpus " + (wd / "data/train.jsonl") + " --dev " +
                (wd / "data/dev.jsonl") + " --out " + (wd / "abl") +
                " train.from_scratch=true " + kTinyNet + " " + kTinyTrain +
                " train.steps=3 train.eval_subset=5") == 0);
    std::string csv = slurp(wd / "abl/ablate_metrics.csv");
    int rows = -1;
    for (char c : csv)
      if (c == '\n') ++rows;
    CHECK(rows == 7);
    CHECK(csv.find("none") != std::string::npos);
    CHECK(csv.find("no_pe_variance+no_ve_variance") != std::string::npos);
    CHECK(csv.find("plain_sum_aggregation") != std::string::npos);
  }
}

TEST_CASE("gradcheck command reports per-family lines and exits 0") {
  Workdir wd;
  CHECK(run("gradcheck --out " + (wd / "gc"), wd / "log.txt") == 0);
  std::string text = slurp(wd / "gc/gradcheck.txt");
  CHECK(text.find("embeddings") != std::string::npos);
  CHECK(text.find("attn_sigma") != std::string::npos);
  CHECK(text.find("PASS") != std::string::npos);
}

TEST_CASE("checkpoint round-trip preserves tensors bit-exactly") {
  Workdir wd;
  Vocabulary vocab = Vocabulary::build({"x", "y", "z"});
  BackboneConfig bc;
  bc.hidden_size = 8;
  bc.layer_count = 1;
  bc.head_count = 2;
  bc.feed_forward_size = 16;
  bc.max_sequence_length = 16;
  RunConfig rc;
  Model model(bc, vocab, rc);
  model.init(99);
  save_checkpoint(wd / "m.ckpt", "full", bc, vocab, model.params, {{"note", "t"}});
  LoadedCheckpoint ck = load_checkpoint(wd / "m.ckpt");
  CHECK(ck.vocab_tokens == vocab.tokens());
  CHECK(ck.vocab_hash == hash_hex(vocab.hash()));
  CHECK(ck.extra.at("note") == "t");
  for (int i = 0; i < model.params.count(); ++i) {
    const Tensor& t = model.params.at(i);
    REQUIRE(ck.tensors.count(t.name) == 1);
    CHECK((ck.tensors.at(t.name) - t.value).norm() == 0.0);
  }
}

TEST_CASE("config layering: file, overrides, snapshot") {
  Workdir wd;
  {
    std::ofstream f(wd / "base.cfg");
    f << "# comment line\n";
    f << "train.steps = 77\n";
    f << "model.lambda = 0.5\n";
  }
  Config cfg = Config::defaults();
  cfg.load_file(wd / "base.cfg");
  cfg.apply_override("train.steps=88");
  CHECK(cfg.integer("train.steps") == 88);
  CHECK(cfg.num("model.lambda") == 0.5);
  CHECK_THROWS_AS(cfg.apply_override("nope=1"), Error);
  CHECK_THROWS_AS(cfg.apply_override("garbage"), Error);
  cfg.write_snapshot(wd / "snap.cfg");
  Config back = Config::defaults();
  back.load_file(wd / "snap.cfg");
  CHECK(back.entries() == cfg.entries());
}
