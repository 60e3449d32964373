#include "mmsf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsf/errors.hpp"

namespace mmsf::metrics {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw DataError("accuracy: empty input or length mismatch");
  size_t hits = 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (predictions[i] == labels[i]) ++hits;
  return double(hits) / double(labels.size());
}

double accuracy_from_logits(const std::vector<double>& logits,
                            const std::vector<int>& labels) {
  std::vector<int> preds(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) preds[i] = logits[i] > 0.0 ? 1 : 0;
  return accuracy(preds, labels);
}

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw DataError("auc_roc: empty input or length mismatch");
  size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw DataError("auc_roc: both classes must be present");

  // Sort by score; count pos-neg wins and ties via group scanning.
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  double wins2 = 0;  // 2*wins + ties, exact in integers
  size_t neg_below = 0;
  for (size_t p = 0; p < order.size();) {
    size_t q = p;
    size_t pos_here = 0, neg_here = 0;
    while (q < order.size() && scores[order[q]] == scores[order[p]]) {
      (labels[order[q]] ? pos_here : neg_here)++;
      ++q;
    }
    wins2 += 2.0 * double(pos_here) * double(neg_below) + double(pos_here) * double(neg_here);
    neg_below += neg_here;
    p = q;
  }
  return wins2 / (2.0 * double(n_pos) * double(n_neg));
}

double c_index(const std::vector<double>& risks, const std::vector<SurvivalLabel>& labels) {
  if (risks.size() != labels.size() || risks.empty())
    throw DataError("c_index: empty input or length mismatch");
  double concordant = 0.0;
  size_t permissible = 0;
  const size_t n = risks.size();
  for (size_t i = 0; i < n; ++i) {
    if (!labels[i].event) continue;
    for (size_t j = 0; j < n; ++j) {
      if (labels[i].time >= labels[j].time) continue;  // need t_i < t_j
      ++permissible;
      if (risks[i] > risks[j])
        concordant += 1.0;
      else if (risks[i] == risks[j])
        concordant += 0.5;
    }
  }
  if (permissible == 0) throw DataError("c_index: no permissible pairs");
  return concordant / double(permissible);
}

KmCurve km_estimate(const std::vector<SurvivalLabel>& labels) {
  if (labels.empty()) throw DataError("km_estimate: empty cohort");
  std::vector<size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return labels[a].time < labels[b].time; });

  KmCurve km;
  km.time.push_back(0.0);
  km.surv.push_back(1.0);
  km.lower.push_back(1.0);
  km.upper.push_back(1.0);
  km.at_risk.push_back(int(labels.size()));

  double s = 1.0;
  double green = 0.0;  // sum d / (n (n - d))
  size_t at_risk = labels.size();
  const double z95 = 1.959963984540054;
  for (size_t p = 0; p < order.size();) {
    size_t q = p;
    size_t deaths = 0, drops = 0;
    double t = labels[order[p]].time;
    while (q < order.size() && labels[order[q]].time == t) {
      deaths += size_t(labels[order[q]].event);
      ++drops;
      ++q;
    }
    if (deaths > 0) {
      double nn = double(at_risk), dd = double(deaths);
      s *= (1.0 - dd / nn);
      if (at_risk > deaths)
        green += dd / (nn * (nn - dd));
      else
        green = std::numeric_limits<double>::infinity();
      double lo, hi;
      if (s <= 0.0) {
        lo = hi = 0.0;
      } else {
        double se = s * std::sqrt(green);
        lo = std::max(0.0, s - z95 * se);
        hi = std::min(1.0, s + z95 * se);
      }
      km.time.push_back(t);
      km.surv.push_back(s);
      km.lower.push_back(lo);
      km.upper.push_back(hi);
      km.at_risk.push_back(int(at_risk));
    }
    at_risk -= drops;
    p = q;
  }
  return km;
}

double chi2_sf_1df(double x) {
  if (x <= 0.0) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

LogRankResult log_rank(const std::vector<SurvivalLabel>& group_a,
                       const std::vector<SurvivalLabel>& group_b) {
  if (group_a.empty() || group_b.empty())
    throw DataError("log_rank: both groups must be non-empty");
  struct Obs {
    double time;
    int event;
    int group;
  };
  std::vector<Obs> all;
  for (const auto& l : group_a) all.push_back({l.time, l.event, 0});
  for (const auto& l : group_b) all.push_back({l.time, l.event, 1});
  size_t n_events = 0;
  for (const auto& o : all) n_events += size_t(o.event);
  if (n_events == 0) throw DataError("log_rank: no events in either group");

  std::sort(all.begin(), all.end(), [](const Obs& a, const Obs& b) { return a.time < b.time; });
  double obs_a = 0.0, exp_a = 0.0, var = 0.0;
  size_t at_a = group_a.size(), at_b = group_b.size();
  for (size_t p = 0; p < all.size();) {
    size_t q = p;
    size_t d_a = 0, d_b = 0, c_a = 0, c_b = 0;
    double t = all[p].time;
    while (q < all.size() && all[q].time == t) {
      if (all[q].group == 0) {
        d_a += size_t(all[q].event);
        ++c_a;
      } else {
        d_b += size_t(all[q].event);
        ++c_b;
      }
      ++q;
    }
    double na = double(at_a), nb = double(at_b), nt = na + nb;
    double dt = double(d_a + d_b);
    if (dt > 0.0 && nt > 0.0) {
      obs_a += double(d_a);
      exp_a += dt * na / nt;
      if (nt > 1.0) var += dt * (na / nt) * (nb / nt) * (nt - dt) / (nt - 1.0);
    }
    at_a -= c_a;
    at_b -= c_b;
    p = q;
  }
  LogRankResult res;
  if (var <= 0.0) {
    res.chi_square = 0.0;
    res.p_value = 1.0;
    return res;
  }
  double diff = obs_a - exp_a;
  res.chi_square = diff * diff / var;
  res.p_value = chi2_sf_1df(res.chi_square);
  return res;
}

std::vector<int> stratify_by_risk(const std::vector<double>& risks) {
  if (risks.size() < 2) throw DataError("stratify_by_risk: need >= 2 risks");
  std::vector<double> sorted = risks;
  std::sort(sorted.begin(), sorted.end());
  size_t n = sorted.size();
  double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  std::vector<int> group(risks.size());
  for (size_t i = 0; i < risks.size(); ++i) group[i] = risks[i] > median ? 1 : 0;
  return group;
}

}  // namespace mmsf::metrics
