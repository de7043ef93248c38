#include "ndt/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ndt/rng.hpp"

namespace ndt {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json topology_to_json(const NetworkGraph& g) {
  ordered_json j;
  j["nodes"] = ordered_json::array();
  for (const auto& n : g.nodes) {
    ordered_json jn;
    jn["id"] = n.id;
    jn["pos"] = {n.pos.x, n.pos.y};
    j["nodes"].push_back(jn);
  }
  j["links"] = ordered_json::array();
  for (const auto& l : g.links) {
    ordered_json jl;
    jl["src"] = l.src;
    jl["dst"] = l.dst;
    jl["capacity_kbps"] = l.capacity_kbps;
    jl["weight"] = l.weight;
    j["links"].push_back(jl);
  }
  return j;
}

NetworkGraph topology_from_json(const json& j) {
  NetworkGraph g;
  for (const auto& jn : j.at("nodes")) {
    NodeRecord n;
    n.id = jn.at("id").get<int>();
    n.pos.x = jn.at("pos").at(0).get<double>();
    n.pos.y = jn.at("pos").at(1).get<double>();
    g.nodes.push_back(n);
  }
  for (const auto& jl : j.at("links")) {
    LinkRecord l;
    l.src = jl.at("src").get<int>();
    l.dst = jl.at("dst").get<int>();
    l.capacity_kbps = jl.at("capacity_kbps").get<double>();
    l.weight = jl.at("weight").get<double>();
    g.links.push_back(l);
  }
  g.validate();
  return g;
}

ordered_json kpis_to_json(const FlowKpis& k) {
  ordered_json j;
  if (k.delay_ms) j["delay_ms"] = *k.delay_ms; else j["delay_ms"] = nullptr;
  if (k.jitter_ms) j["jitter_ms"] = *k.jitter_ms; else j["jitter_ms"] = nullptr;
  j["throughput_kbps"] = k.throughput_kbps;
  j["drops"] = static_cast<int64_t>(k.drops);
  j["tx"] = static_cast<int64_t>(k.tx_packets);
  j["rx"] = static_cast<int64_t>(k.rx_packets);
  return j;
}

FlowKpis kpis_from_json(const json& j) {
  FlowKpis k;
  if (!j.at("delay_ms").is_null()) k.delay_ms = j.at("delay_ms").get<double>();
  if (!j.at("jitter_ms").is_null()) k.jitter_ms = j.at("jitter_ms").get<double>();
  k.throughput_kbps = j.at("throughput_kbps").get<double>();
  k.drops = j.at("drops").get<double>();
  k.tx_packets = j.at("tx").get<double>();
  k.rx_packets = j.at("rx").get<double>();
  return k;
}

ordered_json sample_to_json(const Sample& s) {
  ordered_json j;
  j["topology"] = topology_to_json(s.scenario.graph);
  j["paths"] = ordered_json::array();
  for (const auto& p : s.scenario.paths) j["paths"].push_back(p.links);
  j["traffic"] = ordered_json::array();
  for (const auto& row : s.scenario.traffic.rows)
    j["traffic"].push_back({row.tau_on_s, row.tau_off_s});
  j["data_rate_kbps"] = s.scenario.traffic.data_rate_kbps;
  j["kpis"] = ordered_json::array();
  for (const auto& k : s.kpis) j["kpis"].push_back(kpis_to_json(k));
  j["seed"] = s.seed;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  if (j.at("topology").is_string()) {
    s.scenario.graph = topology_from_json(json::parse(read_text_file(j.at("topology"))));
  } else {
    s.scenario.graph = topology_from_json(j.at("topology"));
  }
  for (const auto& jp : j.at("paths")) {
    PathSpec p;
    p.links = jp.get<std::vector<int>>();
    if (!p.links.empty()) {
      p.source = s.scenario.graph.links[p.links.front()].src;
      p.destination = s.scenario.graph.links[p.links.back()].dst;
    }
    s.scenario.paths.push_back(std::move(p));
  }
  for (const auto& jt : j.at("traffic")) {
    s.scenario.traffic.rows.push_back({jt.at(0).get<double>(), jt.at(1).get<double>()});
  }
  s.scenario.traffic.data_rate_kbps = j.at("data_rate_kbps").get<double>();
  for (const auto& jk : j.at("kpis")) s.kpis.push_back(kpis_from_json(jk));
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

void write_dataset_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  ordered_json meta;
  meta["meta"] = {{"family", ds.meta.family},
                  {"data_rate_kbps", ds.meta.data_rate_kbps},
                  {"ptx_dbm", ds.meta.ptx_dbm},
                  {"seed", ds.meta.seed},
                  {"requested", ds.meta.requested},
                  {"skipped", ds.meta.skipped},
                  {"config_hash", ds.meta.config_hash},
                  {"generator", ds.meta.generator}};
  out << meta.dump() << '\n';
  for (const auto& s : ds.samples) out << sample_to_json(s).dump() << '\n';
}

Dataset read_dataset_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  Dataset ds;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    if (first && j.contains("meta")) {
      const auto& m = j.at("meta");
      ds.meta.family = m.at("family").get<std::string>();
      ds.meta.data_rate_kbps = m.at("data_rate_kbps").get<double>();
      ds.meta.ptx_dbm = m.at("ptx_dbm").get<double>();
      ds.meta.seed = m.at("seed").get<uint64_t>();
      ds.meta.requested = m.at("requested").get<int>();
      ds.meta.skipped = m.at("skipped").get<int>();
      ds.meta.config_hash = m.at("config_hash").get<std::string>();
      ds.meta.generator = m.at("generator").get<std::map<std::string, std::string>>();
      first = false;
      continue;
    }
    first = false;
    ds.samples.push_back(sample_from_json(j));
  }
  return ds;
}

namespace {

constexpr char kCkptMagic[8] = {'N', 'D', 'T', 'C', 'K', 'P', 'T', '1'};

void write_u32(std::ostream& o, uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_i64(std::ostream& o, int64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t read_u32(std::istream& i) {
  uint32_t v;
  i.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
int64_t read_i64(std::istream& i) {
  int64_t v;
  i.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

void write_tensor(std::ostream& o, const Tensor& t) {
  write_u32(o, static_cast<uint32_t>(t.shape.size()));
  for (int d : t.shape) write_i64(o, d);
  o.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& i) {
  const uint32_t ndim = read_u32(i);
  std::vector<int> shape;
  for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(read_i64(i)));
  Tensor t = Tensor::zeros(shape);
  i.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out.write(kCkptMagic, 8);
  write_u32(out, 1);  // version
  write_u32(out, static_cast<uint32_t>(params.size()));
  for (int i = 0; i < params.size(); ++i) {
    const auto& e = params.entry(i);
    write_u32(out, static_cast<uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(out, e.value);
  }
  write_i64(out, params.step());
  for (int i = 0; i < params.size(); ++i) {
    write_tensor(out, params.entry(i).m);
    write_tensor(out, params.entry(i).v);
  }
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kCkptMagic, 8) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  const uint32_t version = read_u32(in);
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  const uint32_t count = read_u32(in);
  ParamStore params;
  std::vector<std::string> names;
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = read_u32(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    Tensor value = read_tensor(in);
    auto& t = params.add_zeros(name, value.shape);
    t.data = value.data;
    names.push_back(name);
  }
  params.set_step(read_i64(in));
  for (uint32_t i = 0; i < count; ++i) {
    params.entry(static_cast<int>(i)).m = read_tensor(in);
    params.entry(static_cast<int>(i)).v = read_tensor(in);
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path);
  return params;
}

namespace {

ordered_json model_config_to_json(const ModelConfig& m) {
  ordered_json j;
  j["variant"] = variant_name(m.variant);
  j["iterations"] = m.iterations;
  j["path_dim"] = m.path_dim;
  j["link_dim"] = m.link_dim;
  j["node_dim"] = m.node_dim;
  j["link_mlp_hidden"] = m.link_mlp_hidden;
  j["readout_hidden"] = m.readout_hidden;
  j["share_weights"] = m.share_weights;
  j["gnn_output_paths"] = m.gnn_output_paths;
  j["gnn_conv_dim"] = m.gnn_conv_dim;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig m;
  m.variant = variant_from_name(j.at("variant").get<std::string>());
  m.iterations = j.at("iterations").get<int>();
  m.path_dim = j.at("path_dim").get<int>();
  m.link_dim = j.at("link_dim").get<int>();
  m.node_dim = j.at("node_dim").get<int>();
  m.link_mlp_hidden = j.at("link_mlp_hidden").get<std::vector<int>>();
  m.readout_hidden = j.at("readout_hidden").get<std::vector<int>>();
  m.share_weights = j.at("share_weights").get<bool>();
  m.gnn_output_paths = j.at("gnn_output_paths").get<int>();
  m.gnn_conv_dim = j.at("gnn_conv_dim").get<int>();
  return m;
}

std::string dir_of(const std::string& path) {
  const auto pos = path.find_last_of('/');
  return pos == std::string::npos ? std::string(".") : path.substr(0, pos);
}

}  // namespace

void save_ensemble(const std::string& dir, const Ensemble& ensemble,
                   const std::string& train_config_hash) {
  ordered_json j;
  j["kind"] = "ndt-model";
  j["kpi"] = kpi_name(ensemble.kpi);
  j["model"] = model_config_to_json(ensemble.model);
  j["scales"] = {{"tau", ensemble.scales.tau},
                 {"capacity", ensemble.scales.capacity},
                 {"degree", ensemble.scales.degree}};
  j["train_config_hash"] = train_config_hash;
  j["folds"] = ordered_json::array();
  for (size_t f = 0; f < ensemble.members.size(); ++f) {
    const std::string ckpt = "fold" + std::to_string(f) + ".ckpt";
    save_checkpoint(dir + "/" + ckpt, ensemble.members[f].params);
    j["folds"].push_back({{"checkpoint", ckpt},
                          {"target_mean", ensemble.members[f].target_mean},
                          {"target_std", ensemble.members[f].target_std}});
  }
  write_text_file(dir + "/model_manifest.json", j.dump(2) + "\n");
}

Ensemble load_ensemble(const std::string& manifest_path) {
  const json j = json::parse(read_text_file(manifest_path));
  Ensemble e;
  e.kpi = kpi_from_name(j.at("kpi").get<std::string>());
  e.model = model_config_from_json(j.at("model"));
  e.scales.tau = j.at("scales").at("tau").get<double>();
  e.scales.capacity = j.at("scales").at("capacity").get<double>();
  e.scales.degree = j.at("scales").at("degree").get<double>();
  const std::string dir = dir_of(manifest_path);
  for (const auto& jf : j.at("folds")) {
    EnsembleMember m;
    m.params = load_checkpoint(dir + "/" + jf.at("checkpoint").get<std::string>());
    m.target_mean = jf.at("target_mean").get<double>();
    m.target_std = jf.at("target_std").get<double>();
    e.members.push_back(std::move(m));
  }
  return e;
}

KvMap parse_kv_text(const std::string& text) {
  KvMap kv;
  std::istringstream in(text);
  std::string line;
  std::string section;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("bad config line: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    kv[section.empty() ? key : section + "." + key] = value;
  }
  return kv;
}

std::string kv_to_text(const KvMap& kv) {
  // Sectionless keys first, then grouped sections; deterministic order.
  std::ostringstream os;
  for (const auto& [key, value] : kv) {
    if (key.find('.') == std::string::npos) os << key << " = " << value << '\n';
  }
  std::string section;
  for (const auto& [key, value] : kv) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << '\n' << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << '\n';
  }
  return os.str();
}

KvMap read_kv_file(const std::string& path) { return parse_kv_text(read_text_file(path)); }

void write_kv_file(const std::string& path, const KvMap& kv) {
  write_text_file(path, kv_to_text(kv));
}

std::string kv_hash_hex(const KvMap& kv) {
  std::string blob;
  for (const auto& [k, v] : kv) {
    blob += k;
    blob += '=';
    blob += v;
    blob += '\n';
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << content;
}

}  // namespace ndt
