#include "mmsf/mil.hpp"

#include <chrono>
#include <cmath>

#include "mmsf/rng.hpp"

namespace mmsf::mil {

namespace {

using Clock = std::chrono::steady_clock;

template <class T>
MambaBlockVars<T> random_block(ad::Tape<T>& t, int d, const SsmBlockConfig& cfg, Rng& rng) {
  int di = d * cfg.expand, ds = cfg.state_dim;
  auto xavier = [&](int r, int c) {
    double lim = std::sqrt(6.0 / double(r + c));
    return t.leaf(num::random_uniform<T>(r, c, T(-lim), T(lim), rng));
  };
  MambaBlockVars<T> w;
  w.ln_gamma = t.leaf(num::Mat<T>::full(1, d, T(1)));
  w.ln_beta = t.leaf(num::Mat<T>::zeros(1, d));
  w.w_in = xavier(d, 3 * di + 2 * ds);
  w.b_in = t.leaf(num::Mat<T>::zeros(1, 3 * di + 2 * ds));
  w.conv_k = xavier(cfg.conv_width, di);
  w.conv_b = t.leaf(num::Mat<T>::zeros(1, di));
  {
    num::Mat<T> alog(di, ds);
    for (int c = 0; c < di; ++c)
      for (int s = 0; s < ds; ++s) alog(c, s) = T(std::log(double(s + 1)));
    w.a_log = t.leaf(std::move(alog));
  }
  {
    num::Mat<T> dtb(1, di);
    for (int c = 0; c < di; ++c)
      dtb(0, c) = T(std::log(std::expm1(0.01)));
    w.dt_bias = t.leaf(std::move(dtb));
  }
  w.d_skip = t.leaf(num::Mat<T>::full(1, di, T(1)));
  w.w_out = xavier(di, d);
  w.b_out = t.leaf(num::Mat<T>::zeros(1, d));
  return w;
}

}  // namespace

ProbeReport probe_complexity(const std::vector<int>& sizes, int width,
                             const SsmBlockConfig& cfg, uint64_t seed, int repeats) {
  if (sizes.size() < 3) throw ConfigError("probe_complexity: need >= 3 sizes");
  for (int n : sizes)
    if (n < 1024) throw ConfigError("probe_complexity: sizes must be >= 1024");
  cfg.validate();

  std::vector<int> ns = sizes;
  std::sort(ns.begin(), ns.end());

  ProbeReport rep;
  for (int n : ns) {
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, repeats); ++r) {
      Rng rng(seed + uint64_t(r));
      ad::Tape<float> tape;
      MilVars<float> vars;
      for (int b = 0; b < cfg.depth; ++b) vars.blocks.push_back(random_block(tape, width, cfg, rng));
      {
        double lim = std::sqrt(6.0 / double(width + 2));
        vars.inst_w = tape.leaf(num::random_uniform<float>(width, 2, float(-lim), float(lim), rng));
        vars.inst_b = tape.leaf(num::Mat<float>::zeros(1, 2));
      }
      ad::Var input = tape.leaf(num::random_normal<float>(n, width, 1.0f, rng));
      auto t0 = Clock::now();
      auto out = mil_encode(tape, input, cfg, vars);
      auto t1 = Clock::now();
      (void)out;
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    rep.points.push_back({n, best});
  }
  for (size_t i = 1; i < rep.points.size(); ++i)
    rep.doubling_ratios.push_back(rep.points[i].seconds / rep.points[i - 1].seconds);

  // Least-squares slope of log t against log n.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double m = double(rep.points.size());
  for (const auto& p : rep.points) {
    double x = std::log(double(p.n)), y = std::log(p.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  rep.fitted_exponent = (m * sxy - sx * sy) / (m * sxx - sx * sx);
  return rep;
}

}  // namespace mmsf::mil
