#include "mmsf/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmsf/errors.hpp"

namespace mmsf::objectives {

Task parse_task(const std::string& token) {
  if (token == "classification") return Task::Classification;
  if (token == "survival") return Task::Survival;
  throw ConfigError("unknown task '" + token + "' (expected classification|survival)");
}

std::string to_string(Task t) {
  return t == Task::Classification ? "classification" : "survival";
}

void LossConfig::validate() const {
  if (lambda_reg < 0 || l2_initial < 0 || l2_max < 0 || recon_weight < 0)
    throw ConfigError("loss weights must be >= 0");
  if (l2_max < l2_initial) throw ConfigError("l2_max must be >= l2_initial");
}

double l2_at(const LossConfig& cfg, int epoch, int total_epochs) {
  if (total_epochs <= 1) return cfg.l2_max;
  double f = double(std::clamp(epoch, 0, total_epochs - 1)) / double(total_epochs - 1);
  return cfg.l2_initial + (cfg.l2_max - cfg.l2_initial) * f;
}

namespace {
inline double logaddexp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double mx = std::max(a, b);
  return mx + std::log1p(std::exp(std::min(a, b) - mx));
}
}  // namespace

CoxResult cox_value_and_grad(const std::vector<double>& risks,
                             const std::vector<SurvivalLabel>& labels, double lambda_reg) {
  const size_t n = risks.size();
  if (n == 0 || labels.size() != n)
    throw DataError("cox: empty cohort or risk/label length mismatch");

  CoxResult out;
  out.grad.assign(n, 0.0);

  // Regularizer on the unshifted risk vector.
  double norm = 0.0;
  for (double r : risks) norm += r * r;
  norm = std::sqrt(norm);
  out.value = lambda_reg * norm;
  if (norm > 0.0)
    for (size_t i = 0; i < n; ++i) out.grad[i] = lambda_reg * risks[i] / norm;

  size_t n_events = 0;
  for (const auto& l : labels) {
    if (l.event != 0 && l.event != 1) throw DataError("cox: event indicator must be 0/1");
    if (l.time < 0) throw DataError("cox: negative survival time");
    n_events += size_t(l.event);
  }
  if (n_events == 0) {
    out.no_events = true;
    return out;
  }

  // Shift-invariant partial term; shift risks for numerical range.
  double shift = *std::max_element(risks.begin(), risks.end());
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (labels[a].time != labels[b].time) return labels[a].time > labels[b].time;
    return a < b;
  });

  // Descending pass: suffix log-sum-exp over {t_j >= t}; ties join the set
  // before any of their events are scored (Breslow).
  std::vector<double> lse_at(n, 0.0);  // per-event LSE of its risk set
  double lse = -std::numeric_limits<double>::infinity();
  double partial = 0.0;
  for (size_t p = 0; p < n;) {
    size_t q = p;
    while (q < n && labels[order[q]].time == labels[order[p]].time) ++q;
    for (size_t k = p; k < q; ++k) lse = logaddexp(lse, risks[order[k]] - shift);
    for (size_t k = p; k < q; ++k) {
      size_t i = order[k];
      if (labels[i].event) {
        lse_at[i] = lse;
        partial += (risks[i] - shift) - lse;
      }
    }
    p = q;
  }
  out.value += -partial / double(n);

  // Ascending pass: gradient term for k sums e^{r_k - LSE_i} over events
  // with t_i <= t_k, accumulated in log space.
  double logw = -std::numeric_limits<double>::infinity();
  for (size_t p = n; p > 0;) {
    size_t q = p;  // group (q-1 ... p-1) shares a time; walk groups ascending
    while (p > 0 && labels[order[p - 1]].time == labels[order[q - 1]].time) --p;
    for (size_t k = p; k < q; ++k) {
      size_t i = order[k];
      if (labels[i].event) logw = logaddexp(logw, -lse_at[i]);
    }
    for (size_t k = p; k < q; ++k) {
      size_t i = order[k];
      double expsum =
          logw == -std::numeric_limits<double>::infinity()
              ? 0.0
              : std::exp(risks[i] - shift + logw);
      out.grad[i] += -(double(labels[i].event) - expsum) / double(n);
    }
  }
  return out;
}

double cox_partial(const std::vector<double>& risks,
                   const std::vector<SurvivalLabel>& labels) {
  CoxResult with = cox_value_and_grad(risks, labels, 0.0);
  return with.value;
}

}  // namespace mmsf::objectives
