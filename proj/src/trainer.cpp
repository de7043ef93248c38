#include "ndt/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ndt/errors.hpp"
#include "ndt/rng.hpp"

namespace ndt {

std::string kpi_name(Kpi k) {
  switch (k) {
    case Kpi::kDelay: return "delay";
    case Kpi::kJitter: return "jitter";
    case Kpi::kThroughput: return "throughput";
    case Kpi::kDrops: return "drops";
  }
  return "unknown";
}

Kpi kpi_from_name(const std::string& name) {
  if (name == "delay") return Kpi::kDelay;
  if (name == "jitter") return Kpi::kJitter;
  if (name == "throughput") return Kpi::kThroughput;
  if (name == "drops") return Kpi::kDrops;
  throw std::invalid_argument("unknown kpi: " + name);
}

std::optional<double> kpi_value(const FlowKpis& kpis, Kpi k) {
  switch (k) {
    case Kpi::kDelay: return kpis.delay_ms;
    case Kpi::kJitter: return kpis.jitter_ms;
    case Kpi::kThroughput: return kpis.throughput_kbps;
    case Kpi::kDrops: return kpis.drops;
  }
  return std::nullopt;
}

std::string family_name(TopoFamily f) {
  switch (f) {
    case TopoFamily::kNsfnet: return "nsfnet";
    case TopoFamily::kGrid: return "grid";
    case TopoFamily::kPerturbedGrid: return "perturbed-grid";
  }
  return "unknown";
}

TopoFamily family_from_name(const std::string& name) {
  if (name == "nsfnet") return TopoFamily::kNsfnet;
  if (name == "grid") return TopoFamily::kGrid;
  if (name == "perturbed-grid") return TopoFamily::kPerturbedGrid;
  throw std::invalid_argument("unknown topology family: " + name);
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += fmt(v[i]);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> GeneratorSpec::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["dataset.family"] = family_name(family);
  kv["dataset.num_paths"] = std::to_string(num_paths);
  kv["dataset.max_hops"] = std::to_string(max_hops);
  kv["dataset.pair_seed"] = std::to_string(pair_seed);
  kv["dataset.mean_set"] = join_doubles(mean_set);
  kv["dataset.data_rate_kbps"] = fmt(data_rate_kbps);
  kv["dataset.perturb_radius_m"] = fmt(perturb_radius_m);
  kv["dataset.wired_capacity_kbps"] = fmt(wired_capacity_kbps);
  kv["dataset.wireless_capacity_kbps"] = fmt(wireless_capacity_kbps);
  kv["grid.rows"] = std::to_string(grid_rows);
  kv["grid.cols"] = std::to_string(grid_cols);
  kv["grid.spacing_m"] = fmt(grid_spacing_m);
  kv["radio.ptx_dbm"] = fmt(radio.ptx_dbm);
  kv["radio.pl0_db"] = fmt(radio.pl0_db);
  kv["radio.gamma"] = fmt(radio.gamma);
  kv["radio.rx_sens_dbm"] = fmt(radio.rx_sens_dbm);
  kv["sim.duration_s"] = fmt(sim.duration_s);
  kv["sim.packet_size_bytes"] = std::to_string(sim.packet_size_bytes);
  kv["sim.queue_capacity"] = std::to_string(sim.queue_capacity);
  kv["sim.backoff_mean_s"] = fmt(sim.backoff_mean_s);
  kv["sim.prop_delay_s"] = fmt(sim.prop_delay_s);
  kv["sim.interference_radius_m"] = fmt(sim.interference_radius_m);
  return kv;
}

GeneratorSpec GeneratorSpec::from_kv(const std::map<std::string, std::string>& kv) {
  GeneratorSpec spec;
  auto get = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };
  if (auto v = get("dataset.family")) spec.family = family_from_name(*v);
  if (auto v = get("dataset.num_paths")) spec.num_paths = std::stoi(*v);
  if (auto v = get("dataset.max_hops")) spec.max_hops = std::stoi(*v);
  if (auto v = get("dataset.pair_seed")) spec.pair_seed = std::stoull(*v);
  if (auto v = get("dataset.mean_set")) spec.mean_set = split_doubles(*v);
  if (auto v = get("dataset.data_rate_kbps")) spec.data_rate_kbps = std::stod(*v);
  if (auto v = get("dataset.perturb_radius_m")) spec.perturb_radius_m = std::stod(*v);
  if (auto v = get("dataset.wired_capacity_kbps")) spec.wired_capacity_kbps = std::stod(*v);
  if (auto v = get("dataset.wireless_capacity_kbps")) spec.wireless_capacity_kbps = std::stod(*v);
  if (auto v = get("grid.rows")) spec.grid_rows = std::stoi(*v);
  if (auto v = get("grid.cols")) spec.grid_cols = std::stoi(*v);
  if (auto v = get("grid.spacing_m")) spec.grid_spacing_m = std::stod(*v);
  if (auto v = get("radio.ptx_dbm")) spec.radio.ptx_dbm = std::stod(*v);
  if (auto v = get("radio.pl0_db")) spec.radio.pl0_db = std::stod(*v);
  if (auto v = get("radio.gamma")) spec.radio.gamma = std::stod(*v);
  if (auto v = get("radio.rx_sens_dbm")) spec.radio.rx_sens_dbm = std::stod(*v);
  if (auto v = get("sim.duration_s")) spec.sim.duration_s = std::stod(*v);
  if (auto v = get("sim.packet_size_bytes")) spec.sim.packet_size_bytes = std::stoi(*v);
  if (auto v = get("sim.queue_capacity")) spec.sim.queue_capacity = std::stoi(*v);
  if (auto v = get("sim.backoff_mean_s")) spec.sim.backoff_mean_s = std::stod(*v);
  if (auto v = get("sim.prop_delay_s")) spec.sim.prop_delay_s = std::stod(*v);
  if (auto v = get("sim.interference_radius_m")) spec.sim.interference_radius_m = std::stod(*v);
  return spec;
}

namespace {

std::string kv_hash(const std::map<std::string, std::string>& kv) {
  std::string blob;
  for (const auto& [k, v] : kv) {
    blob += k;
    blob += '=';
    blob += v;
    blob += '\n';
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx",
           static_cast<unsigned long long>(fnv1a64(blob)));
  return buf;
}

}  // namespace

Dataset build_dataset(const GeneratorSpec& spec, int n, uint64_t seed, int workers) {
  if (n < 0) throw std::invalid_argument("build_dataset: n must be >= 0");
  const bool wireless = spec.family != TopoFamily::kNsfnet;
  NetworkGraph base = wireless
                          ? gen_grid(spec.grid_rows, spec.grid_cols, spec.grid_spacing_m,
                                     spec.radio, spec.wireless_capacity_kbps)
                          : gen_nsfnet(spec.wired_capacity_kbps);
  SimConfig sim = spec.sim;
  sim.wireless = wireless;
  if (wireless && sim.interference_radius_m <= 0)
    sim.interference_radius_m = max_link_distance(spec.radio);

  const auto pairs = select_path_pairs(base, spec.num_paths, spec.max_hops,
                                       stable_hash64(spec.pair_seed, "pairs"));
  std::vector<PathSpec> base_paths;
  for (const auto& [s, d] : pairs) base_paths.push_back(shortest_path(base, s, d));

  std::vector<std::optional<Sample>> slots(n);
  std::vector<std::string> diagnostics;
  std::mutex diag_mutex;

  auto make_sample = [&](int i) {
    const uint64_t sample_seed = stable_hash64(seed, "sample", static_cast<uint64_t>(i));
    try {
      Scenario scenario;
      if (spec.family == TopoFamily::kPerturbedGrid) {
        scenario.graph = perturb(base, spec.perturb_radius_m, spec.radio,
                                 stable_hash64(sample_seed, "perturb"),
                                 spec.wireless_capacity_kbps);
        for (const auto& [s, d] : pairs)
          scenario.paths.push_back(shortest_path(scenario.graph, s, d));
      } else {
        scenario.graph = base;
        scenario.paths = base_paths;
      }
      scenario.traffic = sample_traffic_matrix(spec.num_paths, spec.mean_set,
                                               spec.data_rate_kbps,
                                               stable_hash64(sample_seed, "traffic"));
      SimConfig cfg = sim;
      cfg.seed = stable_hash64(sample_seed, "sim");
      Sample sample;
      sample.kpis = simulate(scenario.graph, scenario.paths, scenario.traffic, cfg);
      sample.scenario = std::move(scenario);
      sample.seed = sample_seed;
      slots[i] = std::move(sample);
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(diag_mutex);
      diagnostics.push_back("sample " + std::to_string(i) + " skipped: " + e.what());
    }
  };

  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) make_sample(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int count = std::min(workers, n);
    for (int w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) make_sample(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  Dataset ds;
  for (auto& slot : slots) {
    if (slot) ds.samples.push_back(std::move(*slot));
  }
  const int skipped = n - static_cast<int>(ds.samples.size());
  if (n > 0 && skipped > 0.01 * n) {
    std::string msg = "build_dataset: " + std::to_string(skipped) + "/" + std::to_string(n) +
                      " samples skipped";
    for (const auto& d : diagnostics) msg += "\n  " + d;
    throw DatasetBuildError(msg);
  }
  ds.meta.family = family_name(spec.family);
  ds.meta.data_rate_kbps = spec.data_rate_kbps;
  ds.meta.ptx_dbm = spec.radio.ptx_dbm;
  ds.meta.seed = seed;
  ds.meta.requested = n;
  ds.meta.skipped = skipped;
  ds.meta.generator = spec.to_kv();
  ds.meta.config_hash = kv_hash(ds.meta.generator);
  return ds;
}

std::vector<std::pair<std::vector<int>, std::vector<int>>> split_cv(int n_samples, int folds,
                                                                    uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("split_cv: folds must be >= 2");
  if (folds > n_samples) throw std::invalid_argument("split_cv: folds exceed sample count");
  std::vector<int> order(n_samples);
  for (int i = 0; i < n_samples; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const int base = n_samples / folds;
  const int rem = n_samples % folds;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> result;
  int off = 0;
  for (int f = 0; f < folds; ++f) {
    const int size = base + (f < rem ? 1 : 0);
    std::vector<int> val(order.begin() + off, order.begin() + off + size);
    std::vector<int> train;
    train.insert(train.end(), order.begin(), order.begin() + off);
    train.insert(train.end(), order.begin() + off + size, order.end());
    std::sort(val.begin(), val.end());
    std::sort(train.begin(), train.end());
    result.push_back({std::move(train), std::move(val)});
    off += size;
  }
  return result;
}

void TrainConfig::validate() const {
  if (folds < 2) throw std::invalid_argument("train: folds must be >= 2");
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be positive");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (l2_lambda < 0) throw std::invalid_argument("train: l2 lambda must be >= 0");
  if (patience < 0) throw std::invalid_argument("train: patience must be >= 0");
}

FeatureScales compute_feature_scales(const Dataset& dataset) {
  FeatureScales scales;
  double max_tau = 0, max_cap = 0;
  int max_deg = 0;
  for (const auto& s : dataset.samples) {
    for (const auto& row : s.scenario.traffic.rows) {
      max_tau = std::max({max_tau, row.tau_on_s, row.tau_off_s});
    }
    for (const auto& l : s.scenario.graph.links) max_cap = std::max(max_cap, l.capacity_kbps);
    for (int d : s.scenario.graph.out_degrees()) max_deg = std::max(max_deg, d);
  }
  if (max_tau > 0) scales.tau = max_tau;
  if (max_cap > 0) scales.capacity = max_cap;
  if (max_deg > 0) scales.degree = max_deg;
  return scales;
}

namespace {

struct FoldOutput {
  FoldResult result;
  std::vector<CurvePoint> curve;
};

FoldOutput train_fold(const std::vector<ScenarioPlan>& plans,
                      const std::vector<std::vector<std::optional<double>>>& targets,
                      const ModelConfig& model, const TrainConfig& config, int fold,
                      std::vector<int> train_idx, std::vector<int> val_idx) {
  // Target standardization from this fold's training split only.
  double sum = 0, sum2 = 0;
  int64_t count = 0;
  for (int i : train_idx) {
    for (const auto& t : targets[i]) {
      if (t) {
        sum += *t;
        sum2 += *t * *t;
        count++;
      }
    }
  }
  if (count == 0) throw TrainingError("train: no defined targets in fold training split");
  bool any_val = false;
  for (int i : val_idx) {
    for (const auto& t : targets[i]) any_val = any_val || t.has_value();
  }
  if (!any_val) throw TrainingError("train: no defined targets in fold validation split");
  const double mean = sum / count;
  const double var = std::max(0.0, sum2 / count - mean * mean);
  const double stdev = std::max(std::sqrt(var), 1e-9);

  ParamStore params = init_params(model, stable_hash64(config.seed, "init", fold));

  auto val_mae = [&](const ParamStore& p) {
    double err = 0;
    int64_t n = 0;
    for (int i : val_idx) {
      const auto pred = forward_values(p, model, plans[i]);
      for (size_t k = 0; k < pred.size(); ++k) {
        if (!targets[i][k]) continue;
        err += std::abs(pred[k] * stdev + mean - *targets[i][k]);
        n++;
      }
    }
    return err / n;
  };

  FoldOutput out;
  double best = std::numeric_limits<double>::infinity();
  ParamStore best_params = params;
  int bad_epochs = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<int> order = train_idx;
    Rng rng(stable_hash64(config.seed, "shuffle",
                          static_cast<uint64_t>(fold) * 1000003 + epoch));
    rng.shuffle(order);

    double loss_sum = 0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      Tape tape;
      const auto bound = bind_params(tape, params);
      std::vector<VarId> outs;
      std::vector<double> target_vals;
      std::vector<uint8_t> mask;
      for (size_t k = start; k < end; ++k) {
        const int i = order[k];
        outs.push_back(forward(tape, plans[i], bound, params, model));
        for (size_t p = 0; p < targets[i].size(); ++p) {
          if (targets[i][p]) {
            target_vals.push_back((*targets[i][p] - mean) / stdev);
            mask.push_back(1);
          } else {
            target_vals.push_back(0);
            mask.push_back(0);
          }
        }
      }
      bool any = false;
      for (uint8_t m : mask) any = any || m;
      if (!any) continue;  // nothing to fit in this batch
      const VarId preds = outs.size() == 1 ? outs[0] : tape.hcat(outs);
      const VarId loss = tape.mse_l2_loss(
          preds, Tensor({static_cast<int>(target_vals.size())}, target_vals), mask, bound,
          config.l2_lambda);
      tape.backward(loss);
      const auto grads = collect_grads(tape, bound, params);
      adam_step(params, grads, config.lr);
      loss_sum += tape.scalar(loss);
      batches++;
    }
    const double train_loss = batches > 0 ? loss_sum / batches : 0.0;
    const double vmae = val_mae(params);
    out.curve.push_back({fold, epoch, train_loss, vmae});
    if (vmae < best) {
      best = vmae;
      best_params = params;
      bad_epochs = 0;
    } else {
      bad_epochs++;
      if (bad_epochs > config.patience) break;
    }
  }
  out.result.params = std::move(best_params);
  out.result.target_mean = mean;
  out.result.target_std = stdev;
  out.result.best_val_mae = best;
  out.result.train_idx = std::move(train_idx);
  out.result.val_idx = std::move(val_idx);
  return out;
}

}  // namespace

TrainResult train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                  int workers) {
  config.validate();
  model.validate();
  if (dataset.samples.empty()) throw TrainingError("train: empty dataset");

  const FeatureScales scales = compute_feature_scales(dataset);
  std::vector<ScenarioPlan> plans;
  plans.reserve(dataset.samples.size());
  std::vector<std::vector<std::optional<double>>> targets;
  for (const auto& s : dataset.samples) {
    plans.push_back(build_plan(s.scenario, scales));
    std::vector<std::optional<double>> t;
    for (const auto& k : s.kpis) t.push_back(kpi_value(k, config.kpi));
    targets.push_back(std::move(t));
  }

  const auto folds = split_cv(static_cast<int>(dataset.samples.size()), config.folds,
                              stable_hash64(config.seed, "cv"));

  std::vector<FoldOutput> outputs(folds.size());
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run_fold = [&](int f) {
    try {
      outputs[f] = train_fold(plans, targets, model, config, f, folds[f].first,
                              folds[f].second);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  };
  if (workers <= 1) {
    for (size_t f = 0; f < folds.size(); ++f) run_fold(static_cast<int>(f));
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int count = std::min<int>(workers, static_cast<int>(folds.size()));
    for (int w = 0; w < count; ++w) {
      pool.emplace_back([&] {
        for (int f = next.fetch_add(1); f < static_cast<int>(folds.size());
             f = next.fetch_add(1))
          run_fold(f);
      });
    }
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  TrainResult result;
  result.model = model;
  result.scales = scales;
  result.config = config;
  for (auto& out : outputs) {
    result.folds.push_back(std::move(out.result));
    result.curves.insert(result.curves.end(), out.curve.begin(), out.curve.end());
  }
  return result;
}

Ensemble to_ensemble(const TrainResult& result) {
  Ensemble e;
  e.model = result.model;
  e.scales = result.scales;
  e.kpi = result.config.kpi;
  for (const auto& f : result.folds) {
    e.members.push_back({f.params, f.target_mean, f.target_std});
  }
  return e;
}

std::vector<double> predict_ensemble(const Ensemble& ensemble, const Scenario& scenario) {
  if (ensemble.members.empty())
    throw std::invalid_argument("predict_ensemble: no checkpoints");
  const ScenarioPlan plan = build_plan(scenario, ensemble.scales);
  std::vector<double> mean;
  for (const auto& m : ensemble.members) {
    const auto pred = forward_values(m.params, ensemble.model, plan);
    if (mean.empty()) mean.assign(pred.size(), 0.0);
    for (size_t i = 0; i < pred.size(); ++i) {
      mean[i] += (pred[i] * m.target_std + m.target_mean) / ensemble.members.size();
    }
  }
  return mean;
}

Ensemble merge_ensembles(const std::vector<Ensemble>& parts) {
  if (parts.empty()) throw std::invalid_argument("merge_ensembles: empty");
  Ensemble merged = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) {
    if (parts[i].kpi != merged.kpi)
      throw std::invalid_argument("merge_ensembles: mixed-KPI checkpoints");
    if (variant_name(parts[i].model.variant) != variant_name(merged.model.variant))
      throw std::invalid_argument("merge_ensembles: mixed model variants");
    for (const auto& m : parts[i].members) merged.members.push_back(m);
  }
  return merged;
}

}  // namespace ndt
