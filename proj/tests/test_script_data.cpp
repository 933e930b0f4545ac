#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "p2g/script_data.hpp"
#include "p2g/vocab.hpp"

using namespace p2g;

namespace {

std::string well_formed_record() {
  ScriptInstance inst;
  for (int i = 0; i < 8; ++i)
    inst.chain.push_back({"alice", "v" + std::to_string(i), "obj" + std::to_string(i), "NULL"});
  for (int i = 0; i < 5; ++i)
    inst.candidates.push_back({"alice", "c" + std::to_string(i), "x", "y"});
  inst.gold = 2;
  return serialize_instance(inst);
}

}  // namespace

TEST_CASE("well-formed record round-trips") {
  std::string line = well_formed_record();
  ScriptInstance inst = parse_instance(line);
  CHECK(inst.chain.size() == 8);
  CHECK(inst.candidates.size() == 5);
  CHECK(inst.gold == 2);
  CHECK(serialize_instance(inst) == line);
}

TEST_CASE("NULL argument strings are preserved") {
  std::string line =
      R"({"chain":[["waiter","give","bob","NULL"],["bob","eat","food","NULL"]],"candidates":[["bob","pay","bill","NULL"],["sky","fall","down","NULL"]],"gold":0})";
  ScriptInstance inst = parse_instance(line);
  CHECK(inst.chain[0].indirect_object == "NULL");
  CHECK(serialize_instance(inst) == line);
}

TEST_CASE("gold out of range is rejected with line number") {
  ScriptInstance inst = parse_instance(well_formed_record());
  inst.gold = 7;
  std::string bad = serialize_instance(inst);
  CHECK_THROWS_WITH_AS(parse_instance(bad, 3), doctest::Contains("gold out of range"), Error);
  CHECK_THROWS_WITH_AS(parse_instance(bad, 3), doctest::Contains("line 3"), Error);
}

TEST_CASE("malformed records are rejected") {
  CHECK_THROWS_WITH_AS(parse_instance("not json", 1), doctest::Contains("malformed"), Error);
  CHECK_THROWS_AS(parse_instance(R"({"chain":[],"candidates":[["a","b","c","d"]],"gold":0})"),
                  Error);
  // wrong arity inside an event
  CHECK_THROWS_AS(
      parse_instance(R"({"chain":[["a","b","c"]],"candidates":[["a","b","c","d"]],"gold":0})"),
      Error);
  // NULL verb
  CHECK_THROWS_AS(
      parse_instance(
          R"({"chain":[["a","NULL","c","d"]],"candidates":[["a","b","c","d"]],"gold":0})"),
      Error);
  // unknown field
  CHECK_THROWS_AS(
      parse_instance(
          R"({"chain":[["a","b","c","d"]],"candidates":[["a","b","c","d"]],"gold":0,"x":1})"),
      Error);
}

TEST_CASE("event_to_tokens renders subject-verb-object-indirect with [NULL]") {
  // give(waiter, bob, food)
  Event give{"waiter", "give", "bob", "food"};
  CHECK(event_to_tokens(give) == std::vector<std::string>{"waiter", "give", "bob", "food"});
  Event boasted{"clinton", "boasted", "public", "NULL"};
  CHECK(event_to_tokens(boasted) ==
        std::vector<std::string>{"clinton", "boasted", "public", "[NULL]"});
  Event any{"a", "b", "NULL", "NULL"};
  CHECK(event_to_tokens(any).size() == 4);
}

TEST_CASE("generator is deterministic under seed") {
  GeneratorConfig cfg;
  cfg.instance_count = 50;
  GeneratedCorpus a = generate_corpus(cfg);
  GeneratedCorpus b = generate_corpus(cfg);
  REQUIRE(a.instances.size() == b.instances.size());
  for (size_t i = 0; i < a.instances.size(); ++i)
    CHECK(serialize_instance(a.instances[i]) == serialize_instance(b.instances[i]));

  cfg.seed = 43;
  GeneratedCorpus c = generate_corpus(cfg);
  bool any_diff = false;
  for (size_t i = 0; i < a.instances.size(); ++i)
    any_diff = any_diff || serialize_instance(a.instances[i]) != serialize_instance(c.instances[i]);
  CHECK(any_diff);
}

TEST_CASE("gold indices are uniform over candidates") {
  GeneratorConfig cfg;
  cfg.instance_count = 10000;
  cfg.candidate_count = 5;
  GeneratedCorpus corpus = generate_corpus(cfg);
  std::vector<int> counts(5, 0);
  for (const ScriptInstance& inst : corpus.instances) ++counts[inst.gold];
  // Binomial(10000, 0.2): mean 2000, sd sqrt(10000*0.2*0.8) = 40.
  const double mean = 10000 * 0.2;
  const double sd = std::sqrt(10000 * 0.2 * 0.8);
  for (int c = 0; c < 5; ++c) CHECK(std::abs(counts[c] - mean) < 3.0 * sd);
}

TEST_CASE("null rate zero produces no NULL arguments") {
  GeneratorConfig cfg;
  cfg.instance_count = 200;
  cfg.null_argument_rate = 0.0;
  GeneratedCorpus corpus = generate_corpus(cfg);
  for (const ScriptInstance& inst : corpus.instances) {
    auto check_event = [](const Event& e) {
      CHECK(e.subject != "NULL");
      CHECK(e.verb != "NULL");
      CHECK(e.object != "NULL");
      CHECK(e.indirect_object != "NULL");
    };
    for (const Event& e : inst.chain) check_event(e);
    for (const Event& e : inst.candidates) check_event(e);
  }
}

TEST_CASE("gold shares the chain scenario; at least one distractor does not") {
  GeneratorConfig cfg;
  cfg.instance_count = 500;
  cfg.distractor_overlap_rate = 1.0;  // adversarial: all optional distractors near-miss
  GeneratedCorpus corpus = generate_corpus(cfg);
  for (size_t i = 0; i < corpus.instances.size(); ++i) {
    const ScriptInstance& inst = corpus.instances[i];
    const InstanceProvenance& prov = corpus.provenance[i];
    CHECK(prov.candidates[inst.gold].kind == CandidateProvenance::Kind::Gold);
    CHECK(prov.candidates[inst.gold].scenario == prov.chain_scenario);
    int off_scenario = 0;
    for (int c = 0; c < static_cast<int>(inst.candidates.size()); ++c)
      if (prov.candidates[c].scenario != prov.chain_scenario) ++off_scenario;
    CHECK(off_scenario >= 1);
  }
}

TEST_CASE("candidates are distinct and instances validate") {
  GeneratorConfig cfg;
  cfg.instance_count = 300;
  GeneratedCorpus corpus = generate_corpus(cfg);
  for (const ScriptInstance& inst : corpus.instances) {
    for (size_t a = 0; a < inst.candidates.size(); ++a)
      for (size_t b = a + 1; b < inst.candidates.size(); ++b)
        CHECK(!(inst.candidates[a] == inst.candidates[b]));
    validate_instance(inst);
  }
}

TEST_CASE("scenario_count below 2 is rejected") {
  GeneratorConfig cfg;
  cfg.scenario_count = 1;
  CHECK_THROWS_WITH_AS(generate_corpus(cfg), doctest::Contains("scenario_count"), Error);
}

TEST_CASE("token universe is seed-independent and covers generated corpora") {
  GeneratorConfig cfg;
  cfg.instance_count = 100;
  std::vector<std::string> universe = generator_token_universe(cfg);
  cfg.seed = 999;
  CHECK(universe == generator_token_universe(cfg));

  std::set<std::string> allowed(universe.begin(), universe.end());
  allowed.insert("NULL");
  GeneratedCorpus corpus = generate_corpus(cfg);
  for (const ScriptInstance& inst : corpus.instances) {
    auto check_event = [&](const Event& e) {
      CHECK(allowed.count(e.subject) == 1);
      CHECK(allowed.count(e.verb) == 1);
      CHECK(allowed.count(e.object) == 1);
      CHECK(allowed.count(e.indirect_object) == 1);
    };
    for (const Event& e : inst.chain) check_event(e);
    for (const Event& e : inst.candidates) check_event(e);
  }
}

TEST_CASE("corpus file round-trip and arity checks") {
  GeneratorConfig cfg;
  cfg.instance_count = 20;
  GeneratedCorpus corpus = generate_corpus(cfg);
  std::string path = "test_corpus_tmp.jsonl";
  save_corpus(path, corpus.instances);
  std::vector<ScriptInstance> loaded = load_corpus(path);
  REQUIRE(loaded.size() == corpus.instances.size());
  for (size_t i = 0; i < loaded.size(); ++i)
    CHECK(serialize_instance(loaded[i]) == serialize_instance(corpus.instances[i]));
  std::remove(path.c_str());
}

TEST_CASE("vocabulary reserved ids and hash") {
  Vocabulary v = Vocabulary::build({"zebra", "apple"});
  CHECK(v.id("[PAD]") == 0);
  CHECK(v.id("[CLS]") == 1);
  CHECK(v.id("[SEP]") == 2);
  CHECK(v.id("[MASK]") == 3);
  CHECK(v.id("[NULL]") == 4);
  CHECK(v.id("[UNK]") == 5);
  CHECK(v.id_or_unk("missing") == Vocabulary::kUnk);
  CHECK(v.contains("then"));

  Vocabulary w = Vocabulary::build({"zebra", "apple"});
  CHECK(v.hash() == w.hash());
  Vocabulary u = Vocabulary::build({"zebra"});
  CHECK(v.hash() != u.hash());
  CHECK(Vocabulary::from_token_list(v.tokens()).hash() == v.hash());
}
