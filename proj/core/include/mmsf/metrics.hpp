#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmsf/objectives.hpp"
#include "mmsf/param_store.hpp"

namespace mmsf::metrics {

using objectives::SurvivalLabel;

// Fraction of exact matches between integer predictions and labels.
double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Thresholds scores at 0 (logits) before comparing.
double accuracy_from_logits(const std::vector<double>& logits,
                            const std::vector<int>& labels);

// Mann-Whitney AUC: P(score_pos > score_neg) + 1/2 P(tie). Errors when a
// class is absent.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

// Harrell concordance over permissible pairs (t_i < t_j, event_i = 1):
// concordant when r_i > r_j, tied risks count 1/2. Errors when no pair is
// permissible.
double c_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels);

// Product-limit estimator with a Greenwood 95% band. Step function: the grid
// holds t = 0 plus every distinct event time.
struct KmCurve {
  std::vector<double> time;
  std::vector<double> surv;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<int> at_risk;  // count at risk just before each grid time
};

KmCurve km_estimate(const std::vector<SurvivalLabel>& labels);

struct LogRankResult {
  double chi_square = 0.0;
  double p_value = 1.0;
};

// Two-group log-rank test, 1 df. Requires both groups non-empty and at least
// one event overall.
LogRankResult log_rank(const std::vector<SurvivalLabel>& group_a,
                       const std::vector<SurvivalLabel>& group_b);

// Median split: risks strictly above the median go high (1), rest low (0).
std::vector<int> stratify_by_risk(const std::vector<double>& risks);

// Survival function of chi-square with 1 df, via erfc.
double chi2_sf_1df(double x);

struct ParamCount {
  size_t scalars = 0;
  size_t bytes = 0;
  double megabytes() const { return double(bytes) / (1024.0 * 1024.0); }
};

template <class T>
ParamCount param_count(const num::ParameterStore<T>& store) {
  ParamCount pc;
  pc.scalars = store.scalar_count();
  pc.bytes = store.byte_size();
  return pc;
}

}  // namespace mmsf::metrics
