#pragma once

#include <map>
#include <string>
#include <vector>

#include "p2g/backbone.hpp"
#include "p2g/pipeline.hpp"
#include "p2g/pretrain.hpp"
#include "p2g/script_data.hpp"

namespace p2g {

// Flat dotted-key configuration: a full default registry, overlaid by a
// config file and then by key=value command-line overrides. Unknown keys are
// rejected. The resolved snapshot alone re-runs any command.
class Config {
 public:
  static Config defaults();

  void load_file(const std::string& path);
  void apply_override(const std::string& key_equals_value);
  void set(const std::string& key, const std::string& value);
  void overlay(const std::map<std::string, std::string>& entries);

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  uint64_t u64(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;  // comma-separated
  std::vector<int> int_list(const std::string& key) const;
  std::vector<double> num_list(const std::string& key) const;

  void write_snapshot(const std::string& path) const;
  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  void require_known(const std::string& key) const;
  std::map<std::string, std::string> kv_;
};

GeneratorConfig generator_from_config(const Config& cfg);
BackboneConfig backbone_from_config(const Config& cfg);
PretrainConfig pretrain_from_config(const Config& cfg);
RunConfig run_from_config(const Config& cfg);

}  // namespace p2g
