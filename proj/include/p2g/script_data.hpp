#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "p2g/common.hpp"

namespace p2g {

// Verb-centric event tuple. "NULL" marks an absent argument; the verb is
// never "NULL".
struct Event {
  std::string subject;
  std::string verb;
  std::string object;
  std::string indirect_object;

  bool operator==(const Event&) const = default;
};

struct ScriptInstance {
  std::vector<Event> chain;       // n ordered events
  std::vector<Event> candidates;  // m candidate next events
  int gold = 0;                   // index of the correct candidate
};

struct GeneratorConfig {
  int scenario_count = 4;
  int vocab_per_scenario = 24;
  int chain_length = 8;
  int candidate_count = 5;
  double null_argument_rate = 0.1;
  double distractor_overlap_rate = 0.5;
  int instance_count = 20000;
  uint64_t seed = 42;
};

// Generator bookkeeping kept out of the model's view; used by tests to
// assert scenario structure.
struct CandidateProvenance {
  enum class Kind { Gold, NearMiss, OffScenario };
  int scenario = 0;
  Kind kind = Kind::Gold;
};

struct InstanceProvenance {
  int chain_scenario = 0;
  std::vector<CandidateProvenance> candidates;
};

struct GeneratedCorpus {
  std::vector<ScriptInstance> instances;
  std::vector<InstanceProvenance> provenance;
};

void validate_event(const Event& e);
void validate_instance(const ScriptInstance& inst);

// One JSONL record: {"chain": [[s,v,o,p],...], "candidates": [...], "gold": k}
ScriptInstance parse_instance(const std::string& line, int line_number = 0);
std::string serialize_instance(const ScriptInstance& inst);

// Whole-file I/O with cross-record arity checks (uniform n and m).
std::vector<ScriptInstance> load_corpus(const std::string& path);
void save_corpus(const std::string& path, const std::vector<ScriptInstance>& instances);

// Surface form "s v o p"; "NULL" renders as the reserved [NULL] token so
// every event keeps arity 4.
std::vector<std::string> event_to_tokens(const Event& e);

// All tokens the generator can ever emit for this config, independent of
// seed and instance count. Sorted, deterministic.
std::vector<std::string> generator_token_universe(const GeneratorConfig& config);

GeneratedCorpus generate_corpus(const GeneratorConfig& config);

}  // namespace p2g
