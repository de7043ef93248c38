#include "ndt/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ndt/errors.hpp"
#include "ndt/evalkit.hpp"
#include "ndt/serialize.hpp"

namespace ndt {

namespace {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

std::string fmt17(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Resolution order: command-line flags beat config-file values beat defaults.
struct Resolver {
  KvMap values;

  void set_default(const std::string& key, const std::string& v) { values[key] = v; }

  void overlay_file(const std::string& path) {
    for (const auto& [k, v] : read_kv_file(path)) values[k] = v;
  }

  void overlay_flag(const CLI::Option* opt, const std::string& key, const std::string& v) {
    if (opt != nullptr && opt->count() > 0) values[key] = v;
  }

  const std::string& get(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw UsageError("missing config key: " + key);
    return it->second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }
  double get_d(const std::string& key) const { return std::stod(get(key)); }
  int get_i(const std::string& key) const { return std::stoi(get(key)); }
  uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }
};

int resolve_workers(const Resolver& r) {
  const int w = r.get_i("run.workers");
  if (w > 0) return w;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_runconfig(const Resolver& r, const std::string& out_dir) {
  write_kv_file(out_dir + "/runconfig.cfg", r.values);
}

std::string prepare_out_dir(const Resolver& r) {
  const std::string out = r.get("run.out");
  fs::create_directories(out);
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::string join_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

GeneratorSpec generator_from_resolver(const Resolver& r) {
  KvMap kv;
  for (const auto& [k, v] : r.values) kv[k] = v;
  return GeneratorSpec::from_kv(kv);
}

RadioConfig radio_from_resolver(const Resolver& r) {
  RadioConfig radio;
  radio.ptx_dbm = r.get_d("radio.ptx_dbm");
  radio.pl0_db = r.get_d("radio.pl0_db");
  radio.gamma = r.get_d("radio.gamma");
  radio.rx_sens_dbm = r.get_d("radio.rx_sens_dbm");
  return radio;
}

void add_radio_defaults(Resolver& r) {
  const RadioConfig radio;
  r.set_default("radio.ptx_dbm", fmt17(radio.ptx_dbm));
  r.set_default("radio.pl0_db", fmt17(radio.pl0_db));
  r.set_default("radio.gamma", fmt17(radio.gamma));
  r.set_default("radio.rx_sens_dbm", fmt17(radio.rx_sens_dbm));
}

void add_generator_defaults(Resolver& r) {
  const GeneratorSpec spec;
  for (const auto& [k, v] : spec.to_kv()) r.set_default(k, v);
}

ModelConfig model_from_resolver(const Resolver& r) {
  ModelConfig m;
  m.variant = variant_from_name(r.get("model.variant"));
  m.iterations = r.get_i("model.iterations");
  m.path_dim = r.get_i("model.path_dim");
  m.link_dim = r.get_i("model.link_dim");
  m.node_dim = r.get_i("model.node_dim");
  m.link_mlp_hidden = parse_int_list(r.get("model.link_mlp_hidden"));
  m.readout_hidden = parse_int_list(r.get("model.readout_hidden"));
  m.share_weights = r.get("model.share_weights") == "true";
  m.gnn_conv_dim = r.get_i("model.gnn_conv_dim");
  return m;
}

void add_model_defaults(Resolver& r) {
  const ModelConfig m;
  r.set_default("model.variant", variant_name(m.variant));
  r.set_default("model.iterations", std::to_string(m.iterations));
  r.set_default("model.path_dim", std::to_string(m.path_dim));
  r.set_default("model.link_dim", std::to_string(m.link_dim));
  r.set_default("model.node_dim", std::to_string(m.node_dim));
  r.set_default("model.link_mlp_hidden", join_int_list(m.link_mlp_hidden));
  r.set_default("model.readout_hidden", join_int_list(m.readout_hidden));
  r.set_default("model.share_weights", "false");
  r.set_default("model.gnn_conv_dim", std::to_string(m.gnn_conv_dim));
}

TrainConfig traincfg_from_resolver(const Resolver& r) {
  TrainConfig t;
  t.kpi = kpi_from_name(r.get("train.kpi"));
  t.folds = r.get_i("train.folds");
  t.epochs = r.get_i("train.epochs");
  t.batch_size = r.get_i("train.batch_size");
  t.lr = r.get_d("train.lr");
  t.l2_lambda = r.get_d("train.l2_lambda");
  t.patience = r.get_i("train.patience");
  t.seed = r.get_u64("run.seed");
  return t;
}

void add_train_defaults(Resolver& r) {
  const TrainConfig t;
  r.set_default("train.kpi", kpi_name(t.kpi));
  r.set_default("train.folds", std::to_string(t.folds));
  r.set_default("train.epochs", std::to_string(t.epochs));
  r.set_default("train.batch_size", std::to_string(t.batch_size));
  r.set_default("train.lr", fmt17(t.lr));
  r.set_default("train.l2_lambda", fmt17(t.l2_lambda));
  r.set_default("train.patience", std::to_string(t.patience));
}

int cmd_topology(const Resolver& r) {
  const std::string family = r.get_or("topology.family", "");
  if (family.empty()) throw UsageError("topology: --family is required");
  const std::string out = prepare_out_dir(r);
  const RadioConfig radio = radio_from_resolver(r);
  NetworkGraph g;
  if (family == "nsfnet") {
    g = gen_nsfnet(r.get_d("dataset.wired_capacity_kbps"));
  } else if (family == "grid" || family == "perturbed-grid") {
    g = gen_grid(r.get_i("grid.rows"), r.get_i("grid.cols"), r.get_d("grid.spacing_m"), radio,
                 r.get_d("dataset.wireless_capacity_kbps"));
    if (family == "perturbed-grid") {
      g = perturb(g, r.get_d("dataset.perturb_radius_m"), radio,
                  stable_hash64(r.get_u64("run.seed"), "perturb"),
                  r.get_d("dataset.wireless_capacity_kbps"));
    }
  } else {
    throw UsageError("topology: unknown family " + family);
  }
  write_text_file(out + "/topology.json", topology_to_json(g).dump(2) + "\n");
  write_runconfig(r, out);
  std::printf("topology family=%s nodes=%d links=%d -> %s/topology.json\n", family.c_str(),
              g.node_count(), g.link_count(), out.c_str());
  return 0;
}

int cmd_dataset(const Resolver& r) {
  const std::string out = prepare_out_dir(r);
  const GeneratorSpec spec = generator_from_resolver(r);
  const int n = r.get_i("run.n");
  const uint64_t seed = r.get_u64("run.seed");
  const Dataset ds = build_dataset(spec, n, seed, resolve_workers(r));
  write_dataset_jsonl(ds, out + "/dataset.jsonl");
  write_runconfig(r, out);

  double delay_lo = 0, delay_hi = 0;
  bool have_delay = false;
  for (const auto& s : ds.samples) {
    for (const auto& k : s.kpis) {
      if (!k.delay_ms) continue;
      if (!have_delay) {
        delay_lo = delay_hi = *k.delay_ms;
        have_delay = true;
      }
      delay_lo = std::min(delay_lo, *k.delay_ms);
      delay_hi = std::max(delay_hi, *k.delay_ms);
    }
  }
  std::printf("dataset family=%s samples=%zu skipped=%d rate=%g kb/s delay=[%g, %g] ms -> "
              "%s/dataset.jsonl\n",
              ds.meta.family.c_str(), ds.samples.size(), ds.meta.skipped,
              ds.meta.data_rate_kbps, delay_lo, delay_hi, out.c_str());
  return 0;
}

int cmd_train(const Resolver& r) {
  const std::string dataset_path = r.get_or("run.dataset", "");
  if (dataset_path.empty()) throw UsageError("train: --dataset is required");
  const std::string out = prepare_out_dir(r);
  const Dataset ds = read_dataset_jsonl(dataset_path);
  ModelConfig model = model_from_resolver(r);
  const TrainConfig tcfg = traincfg_from_resolver(r);

  if (model.variant == Variant::kGenericGnn) {
    size_t width = ds.samples.empty() ? 0 : ds.samples[0].scenario.paths.size();
    for (const auto& s : ds.samples) {
      if (s.scenario.paths.size() != width) {
        std::fprintf(stderr,
                     "train: generic_gnn has a fixed output width and cannot fit a dataset "
                     "with varying path counts (%zu vs %zu)\n",
                     s.scenario.paths.size(), width);
        return 1;
      }
    }
    model.gnn_output_paths = static_cast<int>(width);
  }

  const TrainResult result = train(ds, model, tcfg, resolve_workers(r));
  save_ensemble(out, to_ensemble(result), kv_hash_hex(r.values));

  std::ostringstream curves;
  curves << "fold,epoch,train_loss,val_mae\n";
  for (const auto& c : result.curves) {
    curves << c.fold << ',' << c.epoch << ',' << fmt17(c.train_loss) << ','
           << fmt17(c.val_mae) << '\n';
  }
  write_text_file(out + "/curves.csv", curves.str());
  write_runconfig(r, out);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : result.folds) best = std::min(best, f.best_val_mae);
  std::printf("train variant=%s kpi=%s folds=%zu best_val_mae=%g -> %s\n",
              variant_name(model.variant).c_str(), kpi_name(tcfg.kpi).c_str(),
              result.folds.size(), best, out.c_str());
  return 0;
}

int cmd_eval(const Resolver& r) {
  const std::string dataset_path = r.get_or("run.test", "");
  if (dataset_path.empty()) throw UsageError("eval: --test is required");
  const std::string predictors_arg = r.get_or("eval.predictors", "");
  if (predictors_arg.empty()) throw UsageError("eval: --predictors is required");
  const std::string out = prepare_out_dir(r);
  const Dataset ds = read_dataset_jsonl(dataset_path);
  const GeneratorSpec spec = GeneratorSpec::from_kv(ds.meta.generator);

  std::vector<Predictor> predictors;
  for (const std::string& p : split_list(predictors_arg)) {
    if (p == "truth") {
      predictors.push_back(make_truth_predictor());
    } else if (p.rfind("simavg:", 0) == 0) {
      predictors.push_back(make_simavg_predictor(spec, std::stoi(p.substr(7))));
    } else if (p.rfind("model:", 0) == 0) {
      predictors.push_back(make_ensemble_predictor(load_ensemble(p.substr(6))));
    } else {
      throw UsageError("eval: unknown predictor spec: " + p);
    }
  }
  std::vector<Kpi> kpis;
  for (const std::string& k : split_list(r.get("eval.kpis"))) kpis.push_back(kpi_from_name(k));
  const double alpha = r.get_d("eval.alpha");

  const MetricReport report = compare(ds, predictors, kpis, alpha);
  write_text_file(out + "/report.csv", report_to_csv(report));
  write_text_file(out + "/boxstats.csv", box_stats_csv(ds, predictors, kpis));

  ordered_json j;
  j["group"] = ds.meta.family;
  j["rows"] = ordered_json::array();
  for (const auto& row : report.rows) {
    j["rows"].push_back({{"method", row.method},
                         {"kpi", row.kpi},
                         {"group", row.group},
                         {"nmae_mean", row.nmae_mean},
                         {"nmae_sd", row.nmae_sd},
                         {"mae_mean", row.mae_mean},
                         {"mae_sd", row.mae_sd},
                         {"n", row.n},
                         {"significant_vs", row.significant_vs}});
  }
  j["warnings"] = report.warnings;
  write_text_file(out + "/report.json", j.dump(2) + "\n");
  write_runconfig(r, out);

  for (const auto& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const std::string& kname : split_list(r.get("eval.kpis"))) {
    const ReportRow* best = nullptr;
    for (const auto& row : report.rows) {
      if (row.kpi != kname) continue;
      if (best == nullptr || row.nmae_mean < best->nmae_mean) best = &row;
    }
    if (best != nullptr)
      std::printf("eval %s: best=%s nmae=%g\n", kname.c_str(), best->method.c_str(),
                  best->nmae_mean);
  }
  return 0;
}

int cmd_bench(const Resolver& r) {
  const std::string dataset_path = r.get_or("run.dataset", "");
  const std::string model_path = r.get_or("run.model", "");
  if (dataset_path.empty() || model_path.empty())
    throw UsageError("bench: --dataset and --model are required");
  const int reps = r.get_i("bench.reps");
  if (reps < 3) throw UsageError("bench: need at least 3 repetitions");
  const std::string out = prepare_out_dir(r);
  const Dataset ds = read_dataset_jsonl(dataset_path);
  if (ds.samples.empty()) throw std::runtime_error("bench: dataset has no samples");
  const int index = std::min<int>(r.get_i("bench.index"), static_cast<int>(ds.samples.size()) - 1);
  const Sample& sample = ds.samples[index];
  const GeneratorSpec spec = GeneratorSpec::from_kv(ds.meta.generator);
  const Ensemble ensemble = load_ensemble(model_path);

  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };

  const ScenarioPlan plan = build_plan(sample.scenario, ensemble.scales);
  std::vector<double> fwd_ms;
  volatile double sink = 0;
  for (int rep = 0; rep < reps; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto values = forward_values(ensemble.members[0].params, ensemble.model, plan);
    const auto t1 = std::chrono::steady_clock::now();
    for (double v : values) sink = sink + v;
    fwd_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  SimConfig cfg = spec.sim;
  cfg.wireless = spec.family != TopoFamily::kNsfnet;
  if (cfg.wireless && cfg.interference_radius_m <= 0)
    cfg.interference_radius_m = max_link_distance(spec.radio);
  std::vector<double> sim_ms;
  for (int rep = 0; rep < reps; ++rep) {
    cfg.seed = stable_hash64(sample.seed, "bench", static_cast<uint64_t>(rep));
    const auto t0 = std::chrono::steady_clock::now();
    const auto kpis = simulate(sample.scenario.graph, sample.scenario.paths,
                               sample.scenario.traffic, cfg);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + kpis.size();
    sim_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }

  const double fwd = median_of(fwd_ms);
  const double sim = median_of(sim_ms);
  const double ratio = sim / fwd;
  ordered_json j;
  j["repetitions"] = reps;
  j["forward_ms_median"] = fwd;
  j["simulate_ms_median"] = sim;
  j["speedup"] = ratio;
  write_text_file(out + "/bench.json", j.dump(2) + "\n");
  write_runconfig(r, out);
  std::printf("bench: forward=%.3f ms simulate=%.3f ms speedup=%.1fx (reps=%d)\n", fwd, sim,
              ratio, reps);
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"network digital twin toolkit: simulate KPIs and train embedding models"};
  app.require_subcommand(1);

  // Shared flag storage; each subcommand binds what it needs.
  std::string config_path, out_dir, family, dataset_path, model_path, test_path;
  std::string predictors, kpis, model_config_path, train_config_path, variant;
  uint64_t seed = 0;
  int n = 100, workers = 0, reps = 21, index = 0, epochs = 0, ptx = 0;
  double alpha = 0.05, rate = 0;

  auto* topo = app.add_subcommand("topology", "generate a topology file");
  auto* t_cfg = topo->add_option("--config", config_path, "key=value config file");
  auto* t_family = topo->add_option("--family", family, "nsfnet | grid | perturbed-grid");
  auto* t_ptx = topo->add_option("--ptx", ptx, "transmit power, dBm");
  auto* t_seed = topo->add_option("--seed", seed, "global seed");
  auto* t_out = topo->add_option("--out", out_dir, "output directory");

  auto* data = app.add_subcommand("dataset", "simulate a labeled dataset");
  auto* d_spec = data->add_option("--spec,--config", config_path, "generator spec file");
  auto* d_n = data->add_option("--n", n, "number of samples");
  auto* d_seed = data->add_option("--seed", seed, "global seed");
  auto* d_rate = data->add_option("--rate", rate, "data rate, kb/s");
  auto* d_family = data->add_option("--family", family, "topology family");
  auto* d_ptx = data->add_option("--ptx", ptx, "transmit power, dBm");
  auto* d_workers = data->add_option("--workers", workers, "parallel workers (0 = auto)");
  auto* d_out = data->add_option("--out", out_dir, "output directory");

  auto* tr = app.add_subcommand("train", "cross-validated training");
  auto* r_cfg = tr->add_option("--config", config_path, "resolved config file");
  auto* r_data = tr->add_option("--dataset", dataset_path, "dataset jsonl");
  auto* r_model_cfg = tr->add_option("--model-config", model_config_path, "model config file");
  auto* r_train_cfg = tr->add_option("--train-config", train_config_path, "train config file");
  auto* r_variant = tr->add_option("--variant", variant, "model variant");
  auto* r_kpi = tr->add_option("--kpi", kpis, "target kpi");
  auto* r_epochs = tr->add_option("--epochs", epochs, "epoch budget");
  auto* r_seed = tr->add_option("--seed", seed, "training seed");
  auto* r_workers = tr->add_option("--workers", workers, "parallel workers (0 = auto)");
  auto* r_out = tr->add_option("--out", out_dir, "output directory");

  auto* ev = app.add_subcommand("eval", "evaluate predictors on a test set");
  auto* e_cfg = ev->add_option("--config", config_path, "resolved config file");
  auto* e_test = ev->add_option("--test", test_path, "test dataset jsonl");
  auto* e_pred = ev->add_option("--predictors", predictors,
                                "comma list: truth | model:<manifest> | simavg:<runs>");
  auto* e_kpis = ev->add_option("--kpis", kpis, "comma list of kpis");
  auto* e_alpha = ev->add_option("--alpha", alpha, "significance level");
  auto* e_seed = ev->add_option("--seed", seed, "global seed");
  auto* e_out = ev->add_option("--out", out_dir, "output directory");

  auto* be = app.add_subcommand("bench", "forward pass vs simulation timing");
  auto* b_cfg = be->add_option("--config", config_path, "resolved config file");
  auto* b_data = be->add_option("--dataset", dataset_path, "dataset jsonl");
  auto* b_index = be->add_option("--index", index, "sample index");
  auto* b_model = be->add_option("--model", model_path, "model manifest");
  auto* b_reps = be->add_option("--reps", reps, "repetitions (>= 3)");
  auto* b_seed = be->add_option("--seed", seed, "global seed");
  auto* b_out = be->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    Resolver r;
    r.set_default("run.seed", "0");
    r.set_default("run.workers", "0");
    r.set_default("run.out", "out");

    if (topo->parsed()) {
      r.set_default("run.command", "topology");
      add_radio_defaults(r);
      add_generator_defaults(r);
      if (t_cfg->count() > 0) r.overlay_file(config_path);
      r.overlay_flag(t_family, "topology.family", family);
      r.overlay_flag(t_ptx, "radio.ptx_dbm", std::to_string(ptx));
      r.overlay_flag(t_seed, "run.seed", std::to_string(seed));
      r.overlay_flag(t_out, "run.out", out_dir);
      return cmd_topology(r);
    }
    if (data->parsed()) {
      r.set_default("run.command", "dataset");
      r.set_default("run.n", "100");
      add_generator_defaults(r);
      if (d_spec->count() > 0) r.overlay_file(config_path);
      r.overlay_flag(d_n, "run.n", std::to_string(n));
      r.overlay_flag(d_seed, "run.seed", std::to_string(seed));
      r.overlay_flag(d_rate, "dataset.data_rate_kbps", fmt17(rate));
      r.overlay_flag(d_family, "dataset.family", family);
      r.overlay_flag(d_ptx, "radio.ptx_dbm", std::to_string(ptx));
      r.overlay_flag(d_workers, "run.workers", std::to_string(workers));
      r.overlay_flag(d_out, "run.out", out_dir);
      return cmd_dataset(r);
    }
    if (tr->parsed()) {
      r.set_default("run.command", "train");
      add_model_defaults(r);
      add_train_defaults(r);
      if (r_cfg->count() > 0) r.overlay_file(config_path);
      if (r_model_cfg->count() > 0) r.overlay_file(model_config_path);
      if (r_train_cfg->count() > 0) r.overlay_file(train_config_path);
      r.overlay_flag(r_data, "run.dataset", dataset_path);
      r.overlay_flag(r_variant, "model.variant", variant);
      r.overlay_flag(r_kpi, "train.kpi", kpis);
      r.overlay_flag(r_epochs, "train.epochs", std::to_string(epochs));
      r.overlay_flag(r_seed, "run.seed", std::to_string(seed));
      r.overlay_flag(r_workers, "run.workers", std::to_string(workers));
      r.overlay_flag(r_out, "run.out", out_dir);
      return cmd_train(r);
    }
    if (ev->parsed()) {
      r.set_default("run.command", "eval");
      r.set_default("eval.kpis", "delay,jitter,throughput,drops");
      r.set_default("eval.alpha", fmt17(0.05));
      if (e_cfg->count() > 0) r.overlay_file(config_path);
      r.overlay_flag(e_test, "run.test", test_path);
      r.overlay_flag(e_pred, "eval.predictors", predictors);
      r.overlay_flag(e_kpis, "eval.kpis", kpis);
      r.overlay_flag(e_alpha, "eval.alpha", fmt17(alpha));
      r.overlay_flag(e_seed, "run.seed", std::to_string(seed));
      r.overlay_flag(e_out, "run.out", out_dir);
      return cmd_eval(r);
    }
    if (be->parsed()) {
      r.set_default("run.command", "bench");
      r.set_default("bench.reps", "21");
      r.set_default("bench.index", "0");
      if (b_cfg->count() > 0) r.overlay_file(config_path);
      r.overlay_flag(b_data, "run.dataset", dataset_path);
      r.overlay_flag(b_index, "bench.index", std::to_string(index));
      r.overlay_flag(b_model, "run.model", model_path);
      r.overlay_flag(b_reps, "bench.reps", std::to_string(reps));
      r.overlay_flag(b_seed, "run.seed", std::to_string(seed));
      r.overlay_flag(b_out, "run.out", out_dir);
      return cmd_bench(r);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}

}  // namespace ndt
