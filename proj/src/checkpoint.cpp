#include "p2g/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace p2g {

using nlohmann::json;

json backbone_config_to_json(const BackboneConfig& cfg) {
  return json{{"hidden_size", cfg.hidden_size},
              {"layer_count", cfg.layer_count},
              {"head_count", cfg.head_count},
              {"feed_forward_size", cfg.feed_forward_size},
              {"max_sequence_length", cfg.max_sequence_length},
              {"dropout_rate", cfg.dropout_rate}};
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig cfg;
  cfg.hidden_size = j.at("hidden_size").get<int>();
  cfg.layer_count = j.at("layer_count").get<int>();
  cfg.head_count = j.at("head_count").get<int>();
  cfg.feed_forward_size = j.at("feed_forward_size").get<int>();
  cfg.max_sequence_length = j.at("max_sequence_length").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, const std::string& kind,
                     const BackboneConfig& config, const Vocabulary& vocab,
                     const ParamSet& params, const json& extra) {
  if (kind != "backbone" && kind != "full")
    throw Error(ErrorKind::Internal, "checkpoint kind must be 'backbone' or 'full'");

  json dir = json::array();
  std::vector<int> selected;
  for (int i = 0; i < params.count(); ++i) {
    const Tensor& t = params.at(i);
    if (kind == "backbone" && t.name.rfind("backbone/", 0) != 0) continue;
    selected.push_back(i);
    dir.push_back({{"name", t.name},
                   {"rows", t.value.rows()},
                   {"cols", t.value.cols()},
                   {"family", family_name(t.family)},
                   {"group", t.group == Group::Backbone ? "backbone" : "head"}});
  }

  json header;
  header["version"] = kCheckpointVersion;
  header["kind"] = kind;
  header["backbone_config"] = backbone_config_to_json(config);
  header["vocab"] = vocab.tokens();
  header["vocab_hash"] = hash_hex(vocab.hash());
  header["extra"] = extra;
  header["tensors"] = std::move(dir);
  const std::string header_bytes = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  uint64_t len = header_bytes.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
  for (int i : selected) {
    const Mat& m = params.at(i).value;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        double v = m(r, c);
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
  }
  if (!out) throw io_error("failed writing checkpoint payload: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw data_error("not a checkpoint file: " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_bytes(len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(len));
  if (!in) throw data_error("truncated checkpoint header: " + path);

  json header;
  try {
    header = json::parse(header_bytes);
  } catch (const std::exception& ex) {
    throw data_error(std::string("corrupt checkpoint header: ") + ex.what());
  }

  LoadedCheckpoint ck;
  ck.version = header.at("version").get<int>();
  if (ck.version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(ck.version));
  ck.kind = header.at("kind").get<std::string>();
  ck.backbone = backbone_config_from_json(header.at("backbone_config"));
  ck.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
  ck.vocab_hash = header.at("vocab_hash").get<std::string>();
  ck.extra = header.value("extra", json::object());

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        m(r, c) = v;
      }
    if (!in) throw data_error("truncated checkpoint payload at tensor " + name);
    ck.tensors.emplace(name, std::move(m));
  }
  return ck;
}

void copy_tensors_into(ParamSet& params, const std::map<std::string, Mat>& tensors,
                       const std::string& prefix, bool require_all) {
  for (int i = 0; i < params.count(); ++i) {
    Tensor& t = params.at(i);
    if (!prefix.empty() && t.name.rfind(prefix, 0) != 0) continue;
    auto it = tensors.find(t.name);
    if (it == tensors.end()) {
      if (require_all) throw data_error("checkpoint is missing tensor " + t.name);
      continue;
    }
    if (it->second.rows() != t.value.rows() || it->second.cols() != t.value.cols())
      throw data_error("checkpoint tensor shape mismatch for " + t.name);
    t.value = it->second;
  }
}

}  // namespace p2g
