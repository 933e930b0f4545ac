#include "p2g/script_data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "p2g/rng.hpp"

namespace p2g {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string line_prefix(int line_number) {
  return line_number > 0 ? "line " + std::to_string(line_number) + ": " : "";
}

bool token_ok(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') return false;
  return true;
}

Event event_from_json(const ordered_json& j, int line_number, const char* where, size_t pos) {
  if (!j.is_array() || j.size() != 4)
    throw data_error(line_prefix(line_number) + "malformed record: " + where + "[" +
                     std::to_string(pos) + "] must be an array of 4 strings");
  for (const auto& f : j)
    if (!f.is_string())
      throw data_error(line_prefix(line_number) + "malformed record: " + where + "[" +
                       std::to_string(pos) + "] must contain only strings");
  Event e{j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>(),
          j[3].get<std::string>()};
  try {
    validate_event(e);
  } catch (const Error& err) {
    throw data_error(line_prefix(line_number) + where + "[" + std::to_string(pos) +
                     "]: " + err.what());
  }
  return e;
}

}  // namespace

void validate_event(const Event& e) {
  if (!token_ok(e.subject) || !token_ok(e.verb) || !token_ok(e.object) ||
      !token_ok(e.indirect_object))
    throw data_error("event fields must be non-empty whitespace-free tokens");
  if (e.verb == "NULL") throw data_error("event verb must not be NULL");
}

void validate_instance(const ScriptInstance& inst) {
  if (inst.chain.empty()) throw data_error("chain must be non-empty");
  if (inst.candidates.empty()) throw data_error("candidates must be non-empty");
  for (const Event& e : inst.chain) validate_event(e);
  for (const Event& e : inst.candidates) validate_event(e);
  if (inst.gold < 0 || inst.gold >= static_cast<int>(inst.candidates.size()))
    throw data_error("gold out of range");
}

ScriptInstance parse_instance(const std::string& line, int line_number) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const std::exception& ex) {
    throw data_error(line_prefix(line_number) + "malformed record: " + ex.what());
  }
  if (!j.is_object())
    throw data_error(line_prefix(line_number) + "malformed record: not a JSON object");
  for (const auto& item : j.items())
    if (item.key() != "chain" && item.key() != "candidates" && item.key() != "gold")
      throw data_error(line_prefix(line_number) + "malformed record: unknown field \"" +
                       item.key() + "\"");
  if (!j.contains("chain") || !j.contains("candidates") || !j.contains("gold"))
    throw data_error(line_prefix(line_number) +
                     "malformed record: requires fields chain, candidates, gold");
  if (!j["chain"].is_array() || !j["candidates"].is_array() ||
      !j["gold"].is_number_integer())
    throw data_error(line_prefix(line_number) + "malformed record: wrong field types");

  ScriptInstance inst;
  for (size_t i = 0; i < j["chain"].size(); ++i)
    inst.chain.push_back(event_from_json(j["chain"][i], line_number, "chain", i));
  for (size_t i = 0; i < j["candidates"].size(); ++i)
    inst.candidates.push_back(event_from_json(j["candidates"][i], line_number, "candidates", i));
  inst.gold = j["gold"].get<int>();

  if (inst.chain.empty())
    throw data_error(line_prefix(line_number) + "chain must be non-empty");
  if (inst.candidates.empty())
    throw data_error(line_prefix(line_number) + "candidates must be non-empty");
  if (inst.gold < 0 || inst.gold >= static_cast<int>(inst.candidates.size()))
    throw data_error(line_prefix(line_number) + "gold out of range (gold=" +
                     std::to_string(inst.gold) + ", m=" +
                     std::to_string(inst.candidates.size()) + ")");
  return inst;
}

std::string serialize_instance(const ScriptInstance& inst) {
  ordered_json j;
  ordered_json chain = ordered_json::array();
  for (const Event& e : inst.chain)
    chain.push_back({e.subject, e.verb, e.object, e.indirect_object});
  ordered_json cands = ordered_json::array();
  for (const Event& e : inst.candidates)
    cands.push_back({e.subject, e.verb, e.object, e.indirect_object});
  j["chain"] = std::move(chain);
  j["candidates"] = std::move(cands);
  j["gold"] = inst.gold;
  return j.dump();
}

std::vector<ScriptInstance> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open corpus file: " + path);
  std::vector<ScriptInstance> out;
  std::string line;
  int lineno = 0;
  size_t n = 0, m = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    ScriptInstance inst = parse_instance(line, lineno);
    if (out.empty()) {
      n = inst.chain.size();
      m = inst.candidates.size();
    } else {
      if (inst.chain.size() != n)
        throw data_error("line " + std::to_string(lineno) + ": chain length " +
                         std::to_string(inst.chain.size()) + " does not match corpus arity " +
                         std::to_string(n));
      if (inst.candidates.size() != m)
        throw data_error("line " + std::to_string(lineno) + ": candidate count " +
                         std::to_string(inst.candidates.size()) +
                         " does not match corpus arity " + std::to_string(m));
    }
    out.push_back(std::move(inst));
  }
  if (out.empty()) throw data_error("corpus file is empty: " + path);
  return out;
}

void save_corpus(const std::string& path, const std::vector<ScriptInstance>& instances) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write corpus file: " + path);
  for (const ScriptInstance& inst : instances) out << serialize_instance(inst) << '\n';
}

std::vector<std::string> event_to_tokens(const Event& e) {
  auto surface = [](const std::string& s) { return s == "NULL" ? std::string("[NULL]") : s; };
  return {surface(e.subject), e.verb, surface(e.object), surface(e.indirect_object)};
}

namespace {

struct ScenarioPools {
  // Names are scheme-based so the token universe depends only on the config,
  // never on the seed.
  static std::string subject(int s, int i) { return "s" + std::to_string(s) + "_" + std::to_string(i); }
  static std::string verb(int s, int i) { return "v" + std::to_string(s) + "_" + std::to_string(i); }
  static std::string object(int s, int i) { return "o" + std::to_string(s) + "_" + std::to_string(i); }
  static std::string indirect(int s, int i) { return "p" + std::to_string(s) + "_" + std::to_string(i); }
};

void validate_generator_config(const GeneratorConfig& c) {
  if (c.scenario_count < 2)
    throw data_error("generator requires scenario_count >= 2");
  if (c.vocab_per_scenario < 2) throw data_error("vocab_per_scenario must be >= 2");
  if (c.chain_length < 2) throw data_error("chain_length must be >= 2");
  if (c.candidate_count < 2) throw data_error("candidate_count must be >= 2");
  if (c.instance_count < 1) throw data_error("instance_count must be >= 1");
  if (c.null_argument_rate < 0.0 || c.null_argument_rate > 1.0 ||
      c.distractor_overlap_rate < 0.0 || c.distractor_overlap_rate > 1.0)
    throw data_error("rates must lie in [0, 1]");
}

}  // namespace

std::vector<std::string> generator_token_universe(const GeneratorConfig& config) {
  validate_generator_config(config);
  std::vector<std::string> tokens;
  tokens.reserve(static_cast<size_t>(config.scenario_count) * config.vocab_per_scenario * 4);
  for (int s = 0; s < config.scenario_count; ++s)
    for (int i = 0; i < config.vocab_per_scenario; ++i) {
      tokens.push_back(ScenarioPools::subject(s, i));
      tokens.push_back(ScenarioPools::verb(s, i));
      tokens.push_back(ScenarioPools::object(s, i));
      tokens.push_back(ScenarioPools::indirect(s, i));
    }
  std::sort(tokens.begin(), tokens.end());
  return tokens;
}

GeneratedCorpus generate_corpus(const GeneratorConfig& config) {
  validate_generator_config(config);
  const int S = config.scenario_count;
  const int K = config.vocab_per_scenario;
  const int n = config.chain_length;
  const int m = config.candidate_count;

  GeneratedCorpus out;
  out.instances.reserve(config.instance_count);
  out.provenance.reserve(config.instance_count);

  for (int t = 0; t < config.instance_count; ++t) {
    // One stream per instance: results do not depend on generation order.
    Rng rng(mix_key({config.seed, 0x5C71D0ULL, static_cast<uint64_t>(t)}));

    const int scen = rng.uniform_int(S);
    const int start = rng.uniform_int(K);
    const std::string protagonist = ScenarioPools::subject(scen, rng.uniform_int(K));

    auto maybe_null = [&](std::string tok) {
      return rng.bernoulli(config.null_argument_rate) ? std::string("NULL") : tok;
    };
    auto scenario_event = [&](int s, int verb_idx, const std::string& subj) {
      Event e;
      e.subject = subj;
      e.verb = ScenarioPools::verb(s, verb_idx);
      e.object = maybe_null(ScenarioPools::object(s, rng.uniform_int(K)));
      e.indirect_object = maybe_null(ScenarioPools::indirect(s, rng.uniform_int(K)));
      return e;
    };

    ScriptInstance inst;
    for (int i = 0; i < n; ++i)
      inst.chain.push_back(scenario_event(scen, (start + i) % K, protagonist));

    const int gold_verb = (start + n) % K;
    Event gold = scenario_event(scen, gold_verb, protagonist);

    std::vector<Event> distractors;
    std::vector<CandidateProvenance> dist_prov;
    auto already_used = [&](const Event& e) {
      if (e == gold) return true;
      return std::find(distractors.begin(), distractors.end(), e) != distractors.end();
    };

    auto off_scenario = [&]() {
      int s2 = rng.uniform_int(S - 1);
      if (s2 >= scen) ++s2;
      Event e = scenario_event(s2, rng.uniform_int(K),
                               ScenarioPools::subject(s2, rng.uniform_int(K)));
      return std::make_pair(e, CandidateProvenance{s2, CandidateProvenance::Kind::OffScenario});
    };
    auto near_miss = [&]() {
      Event e;
      switch (rng.uniform_int(3)) {
        case 0: {  // wrong verb, everything else scenario-consistent
          int q = rng.uniform_int(K - 1);
          if (q >= gold_verb) ++q;
          e = scenario_event(scen, q, protagonist);
          break;
        }
        case 1: {  // role swap: an object-pool noun as subject, protagonist demoted
          e.subject = ScenarioPools::object(scen, rng.uniform_int(K));
          e.verb = ScenarioPools::verb(scen, gold_verb);
          e.object = protagonist;
          e.indirect_object = maybe_null(ScenarioPools::indirect(scen, rng.uniform_int(K)));
          break;
        }
        default: {  // right verb, wrong protagonist
          std::string subj = protagonist;
          while (subj == protagonist) subj = ScenarioPools::subject(scen, rng.uniform_int(K));
          e = scenario_event(scen, gold_verb, subj);
          break;
        }
      }
      return std::make_pair(e, CandidateProvenance{scen, CandidateProvenance::Kind::NearMiss});
    };

    for (int d = 0; d < m - 1; ++d) {
      // The first distractor is always off-scenario, so every instance keeps
      // at least one candidate outside the chain's scenario family.
      bool overlap = d > 0 && rng.bernoulli(config.distractor_overlap_rate);
      std::pair<Event, CandidateProvenance> cand;
      int tries = 0;
      do {
        cand = overlap ? near_miss() : off_scenario();
        ++tries;
      } while (already_used(cand.first) && tries < 16);
      if (already_used(cand.first)) {
        // Deterministic eviction of a rare collision: bump the object index.
        for (int i = 0; i < K && already_used(cand.first); ++i)
          cand.first.object = ScenarioPools::object(cand.second.scenario, i);
      }
      distractors.push_back(cand.first);
      dist_prov.push_back(cand.second);
    }

    const int gold_pos = rng.uniform_int(m);
    InstanceProvenance prov;
    prov.chain_scenario = scen;
    int next_distractor = 0;
    for (int c = 0; c < m; ++c) {
      if (c == gold_pos) {
        inst.candidates.push_back(gold);
        prov.candidates.push_back({scen, CandidateProvenance::Kind::Gold});
      } else {
        inst.candidates.push_back(distractors[next_distractor]);
        prov.candidates.push_back(dist_prov[next_distractor]);
        ++next_distractor;
      }
    }
    inst.gold = gold_pos;

    out.instances.push_back(std::move(inst));
    out.provenance.push_back(std::move(prov));
  }
  return out;
}

}  // namespace p2g
