#include "ndt/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ndt/errors.hpp"
#include "ndt/rng.hpp"

namespace ndt {

PairedErrors mae(const std::vector<std::optional<double>>& truth,
                 const std::vector<std::optional<double>>& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("mae: length mismatch");
  PairedErrors out;
  double sum = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    if (!truth[i] || !pred[i]) continue;
    const double e = std::abs(*truth[i] - *pred[i]);
    out.errors.push_back(e);
    sum += e;
  }
  if (out.errors.empty()) throw std::invalid_argument("mae: no defined pairs");
  out.mean = sum / out.errors.size();
  return out;
}

PairedErrors mae(const std::vector<double>& truth, const std::vector<double>& pred) {
  if (truth.size() != pred.size()) throw std::invalid_argument("mae: length mismatch");
  if (truth.empty()) throw std::invalid_argument("mae: empty input");
  PairedErrors out;
  double sum = 0;
  for (size_t i = 0; i < truth.size(); ++i) {
    const double e = std::abs(truth[i] - pred[i]);
    out.errors.push_back(e);
    sum += e;
  }
  out.mean = sum / out.errors.size();
  return out;
}

double quantile_type7(const std::vector<double>& sorted_values, double p) {
  const size_t n = sorted_values.size();
  if (n == 0) throw std::invalid_argument("quantile: empty input");
  if (n == 1) return sorted_values[0];
  const double h = (n - 1) * p;
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, n - 1);
  const double frac = h - lo;
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

double iqr(std::vector<double> values) {
  if (values.size() < 4) throw std::invalid_argument("iqr: need at least 4 values");
  std::sort(values.begin(), values.end());
  return quantile_type7(values, 0.75) - quantile_type7(values, 0.25);
}

double nmae(const std::vector<double>& truth, const std::vector<double>& pred) {
  const double spread = iqr(truth);
  if (!(spread > 0)) throw DegenerateSpreadError("nmae: truth has zero inter-quartile range");
  return mae(truth, pred).mean / spread;
}

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("box_stats: empty input");
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.q1 = quantile_type7(values, 0.25);
  s.median = quantile_type7(values, 0.5);
  s.q3 = quantile_type7(values, 0.75);
  const double spread = s.q3 - s.q1;
  const double lo_fence = s.q1 - 1.5 * spread;
  const double hi_fence = s.q3 + 1.5 * spread;
  s.lo_whisker = s.q1;
  s.hi_whisker = s.q3;
  bool found_lo = false;
  for (double v : values) {
    if (v < lo_fence || v > hi_fence) {
      s.outliers.push_back(v);
      continue;
    }
    if (!found_lo) {
      s.lo_whisker = v;
      found_lo = true;
    }
    s.hi_whisker = v;
  }
  return s;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

double wilcoxon_p_lower(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("wilcoxon: length mismatch");
  if (a.size() < 10) throw std::invalid_argument("wilcoxon: need at least 10 pairs");
  std::vector<double> diffs;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0) diffs.push_back(d);
  }
  const int n = static_cast<int>(diffs.size());
  if (n == 0) return 1.0;

  // Rank |d| ascending with average ranks for ties.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int x, int y) {
    return std::abs(diffs[x]) < std::abs(diffs[y]);
  });
  std::vector<double> rank(n);
  bool any_tie = false;
  std::vector<int> tie_sizes;
  for (int i = 0; i < n;) {
    int j = i;
    while (j < n && std::abs(diffs[order[j]]) == std::abs(diffs[order[i]])) ++j;
    const double avg = (i + j + 1) / 2.0;  // ranks are 1-based
    for (int k = i; k < j; ++k) rank[order[k]] = avg;
    if (j - i > 1) any_tie = true;
    tie_sizes.push_back(j - i);
    i = j;
  }
  double w_plus = 0;
  for (int i = 0; i < n; ++i) {
    if (diffs[i] > 0) w_plus += rank[i];
  }

  if (n < 25 && !any_tie) {
    // Exact tail: count subsets of ranks {1..n} with sum <= w_plus.
    const int max_sum = n * (n + 1) / 2;
    std::vector<double> dp(max_sum + 1, 0.0);
    dp[0] = 1.0;
    for (int r = 1; r <= n; ++r) {
      for (int s = max_sum; s >= r; --s) dp[s] += dp[s - r];
    }
    double tail = 0;
    const int w = static_cast<int>(w_plus);  // integer when there are no ties
    for (int s = 0; s <= w && s <= max_sum; ++s) tail += dp[s];
    return tail / std::pow(2.0, n);
  }
  const double mu = n * (n + 1) / 4.0;
  double tie_term = 0;
  for (int t : tie_sizes) tie_term += static_cast<double>(t) * t * t - t;
  const double var = n * (n + 1) * (2.0 * n + 1) / 24.0 - tie_term / 48.0;
  if (!(var > 0)) return 1.0;
  const double z = (w_plus + 0.5 - mu) / std::sqrt(var);
  return normal_cdf(z);
}

bool signif_lower(const std::vector<double>& a, const std::vector<double>& b, double alpha) {
  return wilcoxon_p_lower(a, b) < alpha;
}

Predictor make_truth_predictor() {
  Predictor p;
  p.name = "truth";
  p.predict = [](const Sample& sample, Kpi kpi) {
    std::vector<std::optional<double>> out;
    for (const auto& k : sample.kpis) out.push_back(kpi_value(k, kpi));
    return out;
  };
  return p;
}

Predictor make_simavg_predictor(const GeneratorSpec& spec, int runs) {
  if (runs < 1) throw std::invalid_argument("simavg predictor: runs must be >= 1");
  Predictor p;
  p.name = "simavg-" + std::to_string(runs);
  p.predict = [spec, runs](const Sample& sample, Kpi kpi) {
    SimConfig cfg = spec.sim;
    cfg.wireless = spec.family != TopoFamily::kNsfnet;
    if (cfg.wireless && cfg.interference_radius_m <= 0)
      cfg.interference_radius_m = max_link_distance(spec.radio);
    cfg.seed = stable_hash64(sample.seed, "simavg");
    const auto kpis = simulate_avg(sample.scenario.graph, sample.scenario.paths,
                                   sample.scenario.traffic, cfg, runs);
    std::vector<std::optional<double>> out;
    for (const auto& k : kpis) out.push_back(kpi_value(k, kpi));
    return out;
  };
  return p;
}

Predictor make_ensemble_predictor(const Ensemble& ensemble) {
  Predictor p;
  p.name = variant_name(ensemble.model.variant);
  p.predict = [ensemble](const Sample& sample, Kpi kpi) {
    if (kpi != ensemble.kpi)
      throw std::invalid_argument("ensemble predictor: trained for " + kpi_name(ensemble.kpi));
    const auto pred = predict_ensemble(ensemble, sample.scenario);
    std::vector<std::optional<double>> out;
    for (double v : pred) out.push_back(v);
    return out;
  };
  return p;
}

namespace {

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return std::sqrt(acc / (v.size() - 1));
}

}  // namespace

MetricReport compare(const Dataset& test, const std::vector<Predictor>& predictors,
                     const std::vector<Kpi>& kpis, double alpha, const std::string& group) {
  MetricReport report;
  const std::string group_label = group.empty() ? test.meta.family : group;

  for (Kpi kpi : kpis) {
    // Pooled ground truth over (scenario, path).
    std::vector<std::optional<double>> truth;
    for (const auto& s : test.samples) {
      for (const auto& k : s.kpis) truth.push_back(kpi_value(k, kpi));
    }
    std::vector<double> truth_defined;
    for (const auto& t : truth) {
      if (t) truth_defined.push_back(*t);
    }
    if (truth_defined.size() < 4) {
      report.warnings.push_back(kpi_name(kpi) + ": fewer than 4 defined ground-truth values");
      continue;
    }
    const double spread = iqr(truth_defined);
    if (!(spread > 0)) {
      report.warnings.push_back(kpi_name(kpi) + ": degenerate ground-truth spread, skipped");
      continue;
    }

    struct Evaluated {
      std::string name;
      std::vector<std::optional<double>> pred;  // aligned with truth
    };
    std::vector<Evaluated> evaluated;
    for (const auto& predictor : predictors) {
      Evaluated ev;
      ev.name = predictor.name;
      bool ok = true;
      for (const auto& s : test.samples) {
        try {
          const auto pred = predictor.predict(s, kpi);
          if (pred.size() != s.kpis.size())
            throw std::invalid_argument("prediction width mismatch");
          ev.pred.insert(ev.pred.end(), pred.begin(), pred.end());
        } catch (const std::exception& e) {
          report.warnings.push_back(predictor.name + " on " + kpi_name(kpi) +
                                    ": skipped (" + e.what() + ")");
          ok = false;
          break;
        }
      }
      if (ok) evaluated.push_back(std::move(ev));
    }

    std::vector<std::vector<double>> abs_errors(evaluated.size());
    for (size_t m = 0; m < evaluated.size(); ++m) {
      ReportRow row;
      row.method = evaluated[m].name;
      row.kpi = kpi_name(kpi);
      row.group = group_label;
      std::vector<double> errs;
      for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] && evaluated[m].pred[i]) errs.push_back(std::abs(*truth[i] - *evaluated[m].pred[i]));
      }
      if (errs.empty()) {
        report.warnings.push_back(row.method + " on " + row.kpi + ": no defined pairs");
        continue;
      }
      double mean = 0;
      for (double e : errs) mean += e;
      mean /= errs.size();
      row.mae_mean = mean;
      row.mae_sd = sample_sd(errs, mean);
      row.nmae_mean = mean / spread;
      row.nmae_sd = row.mae_sd / spread;
      row.n = static_cast<int64_t>(errs.size());
      abs_errors[m] = std::move(errs);
      report.rows.push_back(std::move(row));
    }

    // Pairwise significance on jointly defined pairs.
    for (size_t ma = 0; ma < evaluated.size(); ++ma) {
      for (size_t mb = 0; mb < evaluated.size(); ++mb) {
        if (ma == mb) continue;
        std::vector<double> ea, eb;
        for (size_t i = 0; i < truth.size(); ++i) {
          if (truth[i] && evaluated[ma].pred[i] && evaluated[mb].pred[i]) {
            ea.push_back(std::abs(*truth[i] - *evaluated[ma].pred[i]));
            eb.push_back(std::abs(*truth[i] - *evaluated[mb].pred[i]));
          }
        }
        if (ea.size() < 10) continue;
        if (signif_lower(ea, eb, alpha)) {
          for (auto& row : report.rows) {
            if (row.kpi == kpi_name(kpi) && row.method == evaluated[ma].name) {
              row.significant_vs.push_back(evaluated[mb].name);
            }
          }
        }
      }
    }
  }
  return report;
}

namespace {

std::string csv_num(double v) {
  char buf[64];
  snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string report_to_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "method,kpi,group,nmae_mean,nmae_sd,mae_mean,mae_sd,n,significant_vs\n";
  for (const auto& row : report.rows) {
    os << row.method << ',' << row.kpi << ',' << row.group << ',' << csv_num(row.nmae_mean)
       << ',' << csv_num(row.nmae_sd) << ',' << csv_num(row.mae_mean) << ','
       << csv_num(row.mae_sd) << ',' << row.n << ',';
    for (size_t i = 0; i < row.significant_vs.size(); ++i) {
      if (i) os << ';';
      os << row.significant_vs[i];
    }
    os << '\n';
  }
  return os.str();
}

std::string box_stats_csv(const Dataset& test, const std::vector<Predictor>& predictors,
                          const std::vector<Kpi>& kpis) {
  std::ostringstream os;
  os << "method,kpi,lo_whisker,q1,median,q3,hi_whisker,outliers\n";
  for (Kpi kpi : kpis) {
    std::vector<std::optional<double>> truth;
    for (const auto& s : test.samples) {
      for (const auto& k : s.kpis) truth.push_back(kpi_value(k, kpi));
    }
    for (const auto& predictor : predictors) {
      std::vector<double> errs;
      bool ok = true;
      size_t off = 0;
      for (const auto& s : test.samples) {
        try {
          const auto pred = predictor.predict(s, kpi);
          for (size_t p = 0; p < pred.size(); ++p) {
            if (truth[off + p] && pred[p]) errs.push_back(std::abs(*truth[off + p] - *pred[p]));
          }
        } catch (const std::exception&) {
          ok = false;
          break;
        }
        off += s.kpis.size();
      }
      if (!ok || errs.empty()) continue;
      const BoxStats s = box_stats(errs);
      os << predictor.name << ',' << kpi_name(kpi) << ',' << csv_num(s.lo_whisker) << ','
         << csv_num(s.q1) << ',' << csv_num(s.median) << ',' << csv_num(s.q3) << ','
         << csv_num(s.hi_whisker) << ',';
      for (size_t i = 0; i < s.outliers.size(); ++i) {
        if (i) os << ';';
        os << csv_num(s.outliers[i]);
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace ndt
