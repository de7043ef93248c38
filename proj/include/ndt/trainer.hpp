#ifndef NDT_TRAINER_HPP_
#define NDT_TRAINER_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ndt/plannet.hpp"
#include "ndt/simcore.hpp"

namespace ndt {

enum class Kpi : uint8_t { kDelay, kJitter, kThroughput, kDrops };

std::string kpi_name(Kpi k);
Kpi kpi_from_name(const std::string& name);
std::optional<double> kpi_value(const FlowKpis& kpis, Kpi k);

enum class TopoFamily : uint8_t { kNsfnet, kGrid, kPerturbedGrid };

std::string family_name(TopoFamily f);
TopoFamily family_from_name(const std::string& name);

// Everything needed to synthesize one dataset: topology family, radio and
// traffic knobs, and the simulator configuration used for ground truth.
struct GeneratorSpec {
  TopoFamily family{TopoFamily::kGrid};
  int grid_rows{4};
  int grid_cols{4};
  double grid_spacing_m{30.0};
  RadioConfig radio;
  double perturb_radius_m{10.0};
  int num_paths{10};
  int max_hops{3};
  uint64_t pair_seed{1};  // fixed per setting so train/test share routing
  std::vector<double> mean_set{1, 10, 20};
  double data_rate_kbps{100.0};
  double wired_capacity_kbps{kWiredCapacityKbps};
  double wireless_capacity_kbps{kWirelessCapacityKbps};
  SimConfig sim;  // seed/wireless/interference filled in per sample

  std::map<std::string, std::string> to_kv() const;
  static GeneratorSpec from_kv(const std::map<std::string, std::string>& kv);
};

struct Sample {
  Scenario scenario;
  std::vector<FlowKpis> kpis;
  uint64_t seed{0};
};

struct DatasetMeta {
  std::string family;
  double data_rate_kbps{0};
  double ptx_dbm{0};
  uint64_t seed{0};
  int requested{0};
  int skipped{0};
  std::string config_hash;
  std::map<std::string, std::string> generator;  // full spec, for re-simulation
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Sample> samples;
};

// Simulates n freshly sampled scenarios (topology perturbed per sample for
// the perturbed-grid family). Samples that fail to route or simulate are
// skipped; more than 1% skips aborts the build.
Dataset build_dataset(const GeneratorSpec& spec, int n, uint64_t seed, int workers = 1);

// Seeded shuffle then contiguous fold partition; remainder goes to the
// earliest folds. Returns (train, val) index sets per fold, each sorted.
std::vector<std::pair<std::vector<int>, std::vector<int>>> split_cv(int n_samples, int folds,
                                                                    uint64_t seed);

struct TrainConfig {
  Kpi kpi{Kpi::kDelay};
  int folds{3};
  int epochs{200};
  int batch_size{16};
  double lr{1e-3};
  double l2_lambda{1e-4};
  int patience{20};
  uint64_t seed{0};

  void validate() const;
};

struct CurvePoint {
  int fold{0};
  int epoch{0};
  double train_loss{0};
  double val_mae{0};
};

struct FoldResult {
  ParamStore params;  // best-validation snapshot
  double target_mean{0};
  double target_std{1};
  double best_val_mae{0};
  std::vector<int> train_idx;
  std::vector<int> val_idx;
};

struct TrainResult {
  std::vector<FoldResult> folds;
  std::vector<CurvePoint> curves;
  ModelConfig model;
  FeatureScales scales;
  TrainConfig config;
};

FeatureScales compute_feature_scales(const Dataset& dataset);

// Per fold: Adam on masked MSE with L2, early stopping on validation MAE.
TrainResult train(const Dataset& dataset, const ModelConfig& model, const TrainConfig& config,
                  int workers = 1);

// Fold-best ensemble usable as a predictor.
struct EnsembleMember {
  ParamStore params;
  double target_mean{0};
  double target_std{1};
};

struct Ensemble {
  ModelConfig model;
  FeatureScales scales;
  Kpi kpi{Kpi::kDelay};
  std::vector<EnsembleMember> members;
};

Ensemble to_ensemble(const TrainResult& result);

// De-standardized mean of member predictions. Throws std::invalid_argument
// when members are empty.
std::vector<double> predict_ensemble(const Ensemble& ensemble, const Scenario& scenario);

// Checks that two ensembles target the same KPI before combining predictions.
Ensemble merge_ensembles(const std::vector<Ensemble>& parts);

}  // namespace ndt

#endif  // NDT_TRAINER_HPP_
