#pragma once

#include <map>

#include <json.hpp>

#include "p2g/backbone.hpp"

namespace p2g {

// Single-file container: 8-byte magic, u64 JSON header length, JSON header
// (version, kind, configs, vocabulary, tensor directory), then row-major
// little-endian float64 payloads in directory order.
inline constexpr char kCheckpointMagic[8] = {'P', '2', 'G', 'C', 'K', 'P', 'T', '\n'};
inline constexpr int kCheckpointVersion = 1;

nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);

// kind "backbone" stores only backbone/* tensors; "full" stores everything.
void save_checkpoint(const std::string& path, const std::string& kind,
                     const BackboneConfig& config, const Vocabulary& vocab,
                     const ParamSet& params, const nlohmann::json& extra);

struct LoadedCheckpoint {
  int version = 0;
  std::string kind;
  BackboneConfig backbone;
  std::vector<std::string> vocab_tokens;
  std::string vocab_hash;
  nlohmann::json extra;
  std::map<std::string, Mat> tensors;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies tensors whose names start with prefix (empty = all) into params.
// require_all insists every selected destination tensor is present.
void copy_tensors_into(ParamSet& params, const std::map<std::string, Mat>& tensors,
                       const std::string& prefix, bool require_all);

}  // namespace p2g
