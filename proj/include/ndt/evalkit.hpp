#ifndef NDT_EVALKIT_HPP_
#define NDT_EVALKIT_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ndt/trainer.hpp"

namespace ndt {

struct PairedErrors {
  std::vector<double> errors;  // per defined pair, input order
  double mean{0};
};

// Element-wise absolute errors over pairs where both values are defined.
// Throws std::invalid_argument when no defined pair remains.
PairedErrors mae(const std::vector<std::optional<double>>& truth,
                 const std::vector<std::optional<double>>& pred);
PairedErrors mae(const std::vector<double>& truth, const std::vector<double>& pred);

// Q3 - Q1 with linear-interpolation quantiles. Requires at least 4 values.
double iqr(std::vector<double> values);

// quantile helper shared by iqr and box_stats (p in [0,1], type-7 rule)
double quantile_type7(const std::vector<double>& sorted_values, double p);

// MAE normalized by the IQR of the truth. Throws DegenerateSpreadError when
// the truth has zero spread.
double nmae(const std::vector<double>& truth, const std::vector<double>& pred);

struct BoxStats {
  double lo_whisker{0};
  double q1{0};
  double median{0};
  double q3{0};
  double hi_whisker{0};
  std::vector<double> outliers;  // ascending
};

// Tukey box statistics with 1.5 IQR fences.
BoxStats box_stats(std::vector<double> values);

// One-sided Wilcoxon signed-rank test that median(a - b) < 0. Exact null
// distribution for fewer than 25 nonzero differences without ties, normal
// approximation with tie correction otherwise.
bool signif_lower(const std::vector<double>& a, const std::vector<double>& b,
                  double alpha = 0.05);
double wilcoxon_p_lower(const std::vector<double>& a, const std::vector<double>& b);

struct Predictor {
  std::string name;
  std::function<std::vector<std::optional<double>>(const Sample&, Kpi)> predict;
};

// Predictor that re-simulates each scenario `runs` times with seeds disjoint
// from the ground-truth stream and averages the results.
Predictor make_simavg_predictor(const GeneratorSpec& spec, int runs);
Predictor make_truth_predictor();
Predictor make_ensemble_predictor(const Ensemble& ensemble);

struct ReportRow {
  std::string method;
  std::string kpi;
  std::string group;
  double nmae_mean{0};
  double nmae_sd{0};
  double mae_mean{0};
  double mae_sd{0};
  int64_t n{0};
  std::vector<std::string> significant_vs;
};

struct MetricReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> warnings;
};

// Evaluates every predictor on every sample, pooled over (scenario, path)
// pairs. Predictors that fail on a sample (fixed-width models on mismatched
// path counts, say) are dropped with a warning.
MetricReport compare(const Dataset& test, const std::vector<Predictor>& predictors,
                     const std::vector<Kpi>& kpis, double alpha = 0.05,
                     const std::string& group = "");

std::string report_to_csv(const MetricReport& report);
std::string box_stats_csv(const Dataset& test, const std::vector<Predictor>& predictors,
                          const std::vector<Kpi>& kpis);

}  // namespace ndt

#endif  // NDT_EVALKIT_HPP_
