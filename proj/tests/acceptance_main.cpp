// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Expects the CLI binary path via --ndt-bin for the
// determinism checks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "ndt/evalkit.hpp"
#include "ndt/serialize.hpp"
#include "ndt/trainer.hpp"
#include "test_support.hpp"

using namespace ndt;
using namespace ndt::testsupport;
namespace fs = std::filesystem;

namespace {

std::string g_ndt_bin;

struct CheckFailure : std::runtime_error {
  explicit CheckFailure(const std::string& what) : std::runtime_error(what) {}
};

void require(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

int run_cli(const std::string& args) {
  const std::string cmd = g_ndt_bin + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  require(status >= 0, "failed to launch " + cmd);
  return WEXITSTATUS(status);
}

std::string fnum(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------------------

std::string c1_distinguishability() {
  const auto configs = fig3_configs();
  const FeatureScales scales;

  ModelConfig lpo;
  lpo.variant = Variant::kLinkPathOnly;
  double worst_lpo = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const ParamStore params = init_params(lpo, seed);
    std::vector<std::vector<double>> outs;
    for (const auto& sc : configs) outs.push_back(forward_values(params, lpo, scales, sc));
    for (size_t a = 0; a < outs.size(); ++a) {
      for (size_t b = a + 1; b < outs.size(); ++b) {
        for (size_t i = 0; i < outs[a].size(); ++i) {
          worst_lpo = std::max(worst_lpo, std::abs(outs[a][i] - outs[b][i]));
        }
      }
    }
  }
  require(worst_lpo <= 1e-9, "link_path_only outputs differ across configurations by " +
                                 fnum(worst_lpo));

  ModelConfig plan;  // defaults are plan_net
  int distinct = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const ParamStore params = init_params(plan, seed);
    const auto parallel = forward_values(params, plan, scales, configs[0]);
    const auto star = forward_values(params, plan, scales, configs[2]);
    double diff = 0;
    for (size_t i = 0; i < parallel.size(); ++i)
      diff = std::max(diff, std::abs(parallel[i] - star[i]));
    if (diff > 1e-6) distinct++;
  }
  require(distinct >= 9, "plan_net distinguished parallel from star in only " +
                             std::to_string(distinct) + "/10 initializations");
  return "ablation max spread " + fnum(worst_lpo) + ", plan_net distinct in " +
         std::to_string(distinct) + "/10 inits";
}

std::string c2_gradient() {
  Scenario s;
  s.graph = gen_grid(2, 2, 30, RadioConfig{});  // 4 nodes
  PathSpec a;
  a.source = 0;
  a.destination = 3;
  a.links = {*s.graph.find_link(0, 1), *s.graph.find_link(1, 3)};
  PathSpec b;
  b.source = 2;
  b.destination = 3;
  b.links = {*s.graph.find_link(2, 3)};
  s.paths = {a, b};
  s.traffic = matched_traffic(2, 10, 20, 100);

  ModelConfig cfg;
  cfg.iterations = 2;
  cfg.path_dim = 8;
  cfg.link_dim = 6;
  cfg.node_dim = 5;
  cfg.link_mlp_hidden = {9, 7};
  cfg.readout_hidden = {6};
  const ScenarioPlan plan = build_plan(s, FeatureScales{});
  ParamStore params = init_params(cfg, 2718);
  // Targets sit near the initial predictions so the loss magnitude (which
  // sets the finite-difference roundoff floor at h = 1e-6) stays small
  // relative to the gradient scale.
  const auto init_pred = forward_values(params, cfg, plan);
  const Tensor target({2}, {init_pred[0] + 0.05, init_pred[1] - 0.04});
  const std::vector<uint8_t> mask = {1, 1};

  auto objective = [&](std::span<const double> x, std::span<double> grad_out) {
    params.unflatten(x);
    Tape tape;
    const auto bound = bind_params(tape, params);
    const VarId out = forward(tape, plan, bound, params, cfg);
    const VarId loss = tape.mse_l2_loss(out, target, mask, bound, 1e-3);
    if (!grad_out.empty()) {
      tape.backward(loss);
      const auto grads = collect_grads(tape, bound, params);
      size_t off = 0;
      for (const auto& g : grads) {
        std::copy(g.data.begin(), g.data.end(), grad_out.begin() + off);
        off += g.data.size();
      }
    }
    return tape.scalar(loss);
  };
  const double err = grad_check(objective, params.flatten(), 1e-6);
  require(err < 1e-5, "max relative gradient error " + fnum(err));
  return "max relative error " + fnum(err) + " over " +
         std::to_string(params.total_param_count()) + " parameters";
}

std::string c3_ordering() {
  GeneratorSpec spec;
  spec.family = TopoFamily::kGrid;
  spec.radio.ptx_dbm = 16;
  spec.data_rate_kbps = 150;
  // This pair set keeps the ten flows almost link-disjoint (1 of 45 path
  // pairs shares a link) while 40 of 45 pairs are within carrier-sense range
  // of each other, so cross-flow delay structure is carried by the medium,
  // not by shared queues.
  spec.pair_seed = 8;
  const Dataset train_ds = build_dataset(spec, 300, 101, 2);
  const Dataset test_ds = build_dataset(spec, 100, 202, 2);

  auto run_variant = [&](Variant v, uint64_t seed) {
    ModelConfig model;
    model.variant = v;
    TrainConfig tc;
    tc.kpi = Kpi::kDelay;
    tc.epochs = 40;
    tc.patience = 12;
    tc.lr = 1e-3;
    tc.batch_size = 16;
    tc.seed = seed;
    const TrainResult r = train(train_ds, model, tc, 2);
    const Ensemble e = to_ensemble(r);
    std::vector<double> truth, pred;
    for (const auto& sample : test_ds.samples) {
      const auto p = predict_ensemble(e, sample.scenario);
      for (size_t i = 0; i < p.size(); ++i) {
        if (const auto t = kpi_value(sample.kpis[i], Kpi::kDelay)) {
          truth.push_back(*t);
          pred.push_back(p[i]);
        }
      }
    }
    return nmae(truth, pred);
  };

  double mean_plan = 0, mean_lpo = 0;
  std::string detail;
  for (uint64_t seed : {1, 2, 3}) {
    const double np = run_variant(Variant::kPlanNet, seed);
    const double nl = run_variant(Variant::kLinkPathOnly, seed);
    mean_plan += np / 3;
    mean_lpo += nl / 3;
    detail += " seed" + std::to_string(seed) + ": " + fnum(np) + " vs " + fnum(nl) + ";";
  }
  require(mean_plan < mean_lpo, "mean NMAE " + fnum(mean_plan) + " !< " + fnum(mean_lpo));
  return "3-seed mean delay NMAE plan_net " + fnum(mean_plan) + " < link_path_only " +
         fnum(mean_lpo) + " (" + detail + ")";
}

std::string c4_sim_ladder() {
  GeneratorSpec spec;
  spec.family = TopoFamily::kNsfnet;
  spec.data_rate_kbps = 100;
  const Dataset test_ds = build_dataset(spec, 120, 7, 2);

  std::vector<std::vector<double>> errors(3);
  std::vector<double> truth_all;
  std::vector<std::vector<std::optional<double>>> preds(3);
  for (int k = 0; k < 3; ++k) {
    const Predictor p = make_simavg_predictor(spec, k + 1);
    for (const auto& sample : test_ds.samples) {
      const auto out = p.predict(sample, Kpi::kDelay);
      preds[k].insert(preds[k].end(), out.begin(), out.end());
    }
  }
  for (const auto& sample : test_ds.samples) {
    for (const auto& kp : sample.kpis) {
      truth_all.push_back(kp.delay_ms ? *kp.delay_ms : std::nan(""));
    }
  }
  for (size_t i = 0; i < truth_all.size(); ++i) {
    if (std::isnan(truth_all[i])) continue;
    bool all = true;
    for (int k = 0; k < 3; ++k) all = all && preds[k][i].has_value();
    if (!all) continue;
    for (int k = 0; k < 3; ++k) errors[k].push_back(std::abs(truth_all[i] - *preds[k][i]));
  }
  require(errors[0].size() >= 1000, "too few defined delay pairs");

  std::vector<double> truth_defined;
  for (double t : truth_all) {
    if (!std::isnan(t)) truth_defined.push_back(t);
  }
  const double spread = iqr(truth_defined);
  auto nmae_of = [&](const std::vector<double>& errs) {
    return std::accumulate(errs.begin(), errs.end(), 0.0) / errs.size() / spread;
  };
  const double n1 = nmae_of(errors[0]);
  const double n2 = nmae_of(errors[1]);
  const double n3 = nmae_of(errors[2]);
  require(n3 <= n2 && n2 <= n1,
          "ladder violated: " + fnum(n3) + " / " + fnum(n2) + " / " + fnum(n1));
  require(signif_lower(errors[1], errors[0], 0.05), "avg-2 not significantly below avg-1");
  require(signif_lower(errors[2], errors[1], 0.05), "avg-3 not significantly below avg-2");
  return "delay NMAE avg-1 " + fnum(n1) + " >= avg-2 " + fnum(n2) + " >= avg-3 " + fnum(n3) +
         ", both gaps p < 0.05 (n=" + std::to_string(errors[0].size()) + ")";
}

std::string c5_conservation() {
  int64_t paths_checked = 0;
  auto sweep = [&](GeneratorSpec spec, int n, uint64_t seed) {
    spec.sim.duration_s = 6;
    const Dataset ds = build_dataset(spec, n, seed, 2);
    require(static_cast<int>(ds.samples.size()) == n, "sweep lost samples");
    for (const auto& s : ds.samples) {
      for (const auto& k : s.kpis) {
        require(k.drops + k.rx_packets == k.tx_packets, "conservation violated");
        const double expect =
            k.rx_packets * spec.sim.packet_size_bytes * 8 / spec.sim.duration_s / 1000;
        require(std::abs(k.throughput_kbps - expect) <= 1e-9 * std::max(1.0, expect),
                "throughput identity violated");
        paths_checked++;
      }
    }
  };
  GeneratorSpec nsf;
  nsf.family = TopoFamily::kNsfnet;
  nsf.data_rate_kbps = 150;
  sweep(nsf, 400, 17);
  GeneratorSpec grid;
  grid.family = TopoFamily::kGrid;
  grid.data_rate_kbps = 125;
  sweep(grid, 300, 18);
  GeneratorSpec pert;
  pert.family = TopoFamily::kPerturbedGrid;
  pert.data_rate_kbps = 100;
  sweep(pert, 300, 19);
  return "1000 samples, " + std::to_string(paths_checked) + " path KPI rows exact";
}

std::string c6_metrics() {
  const std::vector<double> truth = {0, 1, 2, 3};
  std::vector<double> pred = truth;
  for (double& v : pred) v += 1;
  require(nmae(truth, pred) == 2.0 / 3.0, "reference NMAE is not exactly 2/3");
  require(nmae(truth, truth) == 0.0, "self NMAE nonzero");
  Rng rng(5);
  std::vector<double> t2, p2;
  for (int i = 0; i < 32; ++i) {
    t2.push_back(rng.uniform(0, 100));
    p2.push_back(rng.uniform(0, 100));
  }
  const double base = nmae(t2, p2);
  for (double c : {1e-3, 7.0, 1e6}) {
    std::vector<double> ts = t2, ps = p2;
    for (double& v : ts) v *= c;
    for (double& v : ps) v *= c;
    require(std::abs(nmae(ts, ps) - base) <= 1e-12, "joint rescaling changed NMAE");
  }
  return "reference value exact, rescaling invariant to 1e-12";
}

std::string c7_param_overhead() {
  ModelConfig plan;
  ModelConfig lpo;
  lpo.variant = Variant::kLinkPathOnly;
  const int64_t plan_count = init_params(plan, 1).total_param_count();
  const int64_t lpo_count = init_params(lpo, 1).total_param_count();
  require(plan_count == 78033, "plan_net parameter count " + std::to_string(plan_count));
  require(lpo_count == 74961, "ablation parameter count " + std::to_string(lpo_count));
  const double growth = static_cast<double>(plan_count - lpo_count) / lpo_count;
  require(growth < 0.09, "growth " + fnum(growth));
  return "78033 vs 74961 parameters, +" + fnum(growth * 100) + "%";
}

std::string c8_grid_density() {
  RadioConfig radio;
  radio.ptx_dbm = 12;
  const int l12 = gen_grid(4, 4, 30, radio).link_count();
  radio.ptx_dbm = 16;
  const int l16 = gen_grid(4, 4, 30, radio).link_count();
  radio.ptx_dbm = 20;
  const int l20 = gen_grid(4, 4, 30, radio).link_count();
  require(l12 == 48 && l16 == 84 && l20 == 164,
          "link counts " + std::to_string(l12) + "/" + std::to_string(l16) + "/" +
              std::to_string(l20));
  require(l12 < l16 && l16 < l20, "density not strictly increasing");
  return "links 48 < 84 < 164 at 12/16/20 dBm";
}

std::string c9_speed() {
  // congested 16-node grid: 20 nearly-always-on flows at 600 kb/s saturate
  // the medium (about 40% of packets drop) over a 120 s run
  GeneratorSpec spec;
  spec.family = TopoFamily::kGrid;
  spec.radio.ptx_dbm = 16;
  spec.num_paths = 20;
  const NetworkGraph graph = gen_grid(4, 4, 30, spec.radio);
  const auto pairs = select_path_pairs(graph, 20, 3, stable_hash64(spec.pair_seed, "pairs"));
  std::vector<PathSpec> paths;
  for (const auto& [s, d] : pairs) paths.push_back(shortest_path(graph, s, d));
  const TrafficMatrix traffic = matched_traffic(20, 20, 1, 600);
  SimConfig cfg;
  cfg.duration_s = 120;
  cfg.wireless = true;
  cfg.interference_radius_m = max_link_distance(spec.radio);

  Scenario scenario{graph, paths, traffic};
  ModelConfig model;  // plan_net defaults
  const ParamStore params = init_params(model, 3);
  const ScenarioPlan plan = build_plan(scenario, FeatureScales{});

  using Clock = std::chrono::steady_clock;
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> fwd_ms, sim_ms;
  volatile double sink = 0;
  for (int rep = 0; rep < 21; ++rep) {
    const auto t0 = Clock::now();
    const auto out = forward_values(params, model, plan);
    fwd_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    sink = sink + out[0];
  }
  for (int rep = 0; rep < 21; ++rep) {
    cfg.seed = 900 + rep;
    const auto t0 = Clock::now();
    const auto kpis = simulate(graph, paths, traffic, cfg);
    sim_ms.push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    sink = sink + kpis[0].tx_packets;
  }
  const double fwd = median_of(fwd_ms);
  const double sim = median_of(sim_ms);
  const double ratio = sim / fwd;
  require(ratio >= 100.0, "speedup " + fnum(ratio) + "x < 100x (fwd " + fnum(fwd) +
                              " ms, sim " + fnum(sim) + " ms)");
  return "forward " + fnum(fwd) + " ms vs simulate " + fnum(sim) + " ms, " + fnum(ratio) +
         "x over 21 reps";
}

std::string c10_determinism() {
  require(!g_ndt_bin.empty(), "--ndt-bin not provided");
  const std::string root = "/tmp/ndt_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string spec_path = root + "/spec.cfg";
  write_text_file(spec_path,
                  "[dataset]\nfamily = nsfnet\ndata_rate_kbps = 100\n"
                  "[sim]\nduration_s = 5\n");

  require(run_cli("dataset --spec " + spec_path + " --n 20 --seed 77 --out " + root +
                  "/ds1") == 0,
          "dataset generation failed");
  require(run_cli("dataset --spec " + root + "/ds1/runconfig.cfg --out " + root + "/ds2") == 0,
          "dataset rerun failed");
  require(read_text_file(root + "/ds1/dataset.jsonl") ==
              read_text_file(root + "/ds2/dataset.jsonl"),
          "dataset rerun differs");

  const std::string model_cfg = root + "/model.cfg";
  write_text_file(model_cfg,
                  "[model]\nvariant = plan_net\niterations = 2\npath_dim = 8\nlink_dim = 4\n"
                  "node_dim = 4\nlink_mlp_hidden = 8,8\nreadout_hidden = 8\n");
  const std::string train_cfg = root + "/train.cfg";
  write_text_file(train_cfg,
                  "[train]\nkpi = delay\nepochs = 4\nbatch_size = 8\nlr = 0.002\n"
                  "l2_lambda = 0.0001\npatience = 4\n");
  require(run_cli("train --dataset " + root + "/ds1/dataset.jsonl --model-config " + model_cfg +
                  " --train-config " + train_cfg + " --seed 5 --workers 1 --out " + root +
                  "/tr1") == 0,
          "training failed");
  require(run_cli("train --config " + root + "/tr1/runconfig.cfg --workers 1 --out " + root +
                  "/tr2") == 0,
          "training rerun failed");
  for (const std::string f : {"fold0.ckpt", "fold1.ckpt", "fold2.ckpt", "curves.csv"}) {
    require(read_text_file(root + "/tr1/" + f) == read_text_file(root + "/tr2/" + f),
            "training rerun differs in " + f);
  }
  return "dataset and training reruns byte-identical from emitted run configs";
}

}  // namespace

int main(int argc, char** argv) {
  std::string only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--ndt-bin" && i + 1 < argc) g_ndt_bin = argv[++i];
    if (arg == "--only" && i + 1 < argc) only = argv[++i];
  }

  struct Criterion {
    int id;
    std::string name;
    std::function<std::string()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "distinguishability of parallel vs star", c1_distinguishability},
      {2, "end-to-end gradient correctness", c2_gradient},
      {3, "delay NMAE ordering on the grid task", c3_ordering},
      {4, "simulator averaging ladder", c4_sim_ladder},
      {5, "KPI conservation sweep", c5_conservation},
      {6, "metric reference values", c6_metrics},
      {7, "parameter overhead below 9%", c7_param_overhead},
      {8, "grid density monotone in transmit power", c8_grid_density},
      {9, "forward pass at least 100x faster than simulation", c9_speed},
      {10, "byte-identical reruns from emitted run configs", c10_determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only != std::to_string(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const std::string detail = c.run();
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("[PASS] C%d %s: %s (%.1f s)\n", c.id, c.name.c_str(), detail.c_str(), secs);
    } catch (const std::exception& e) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::printf("[FAIL] C%d %s: %s (%.1f s)\n", c.id, c.name.c_str(), e.what(), secs);
      failures++;
    }
    std::fflush(stdout);
  }
  if (failures == 0) {
    std::printf("acceptance: all criteria passed\n");
  } else {
    std::printf("acceptance: %d criterion(s) failed\n", failures);
  }
  return failures == 0 ? 0 : 1;
}
