#ifndef NDT_SERIALIZE_HPP_
#define NDT_SERIALIZE_HPP_

#include <map>
#include <string>

#include <json.hpp>

#include "ndt/trainer.hpp"

namespace ndt {

// Topology JSON with fixed key order:
// {"nodes":[{"id":..,"pos":[x,y]}],"links":[{"src":..,"dst":..,
//  "capacity_kbps":..,"weight":..}]}
nlohmann::ordered_json topology_to_json(const NetworkGraph& g);
NetworkGraph topology_from_json(const nlohmann::json& j);

nlohmann::ordered_json kpis_to_json(const FlowKpis& k);
FlowKpis kpis_from_json(const nlohmann::json& j);

nlohmann::ordered_json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j);

// JSON Lines: a meta object on the first line, one scenario per line after.
void write_dataset_jsonl(const Dataset& ds, const std::string& path);
Dataset read_dataset_jsonl(const std::string& path);

// Binary checkpoint: magic, version, named parameter blocks (shape +
// little-endian doubles), Adam moment blocks, step counter.
void save_checkpoint(const std::string& path, const ParamStore& params);
ParamStore load_checkpoint(const std::string& path);

// Ensemble manifest JSON plus one checkpoint file per fold member.
void save_ensemble(const std::string& dir, const Ensemble& ensemble,
                   const std::string& train_config_hash);
Ensemble load_ensemble(const std::string& manifest_path);

// Plain-text key=value config with [section] headers; keys are flattened to
// "section.key". Files written here are deterministic (sorted).
using KvMap = std::map<std::string, std::string>;
KvMap read_kv_file(const std::string& path);
void write_kv_file(const std::string& path, const KvMap& kv);
KvMap parse_kv_text(const std::string& text);
std::string kv_to_text(const KvMap& kv);
std::string kv_hash_hex(const KvMap& kv);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace ndt

#endif  // NDT_SERIALIZE_HPP_
