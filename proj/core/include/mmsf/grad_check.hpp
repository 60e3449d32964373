#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "mmsf/rng.hpp"
#include "mmsf/tape.hpp"

namespace mmsf::ad {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t coords_checked = 0;
  bool analytic_finite = true;
  bool pass(double rel_tol) const { return analytic_finite && max_rel_err < rel_tol; }
};

// Certifies analytic gradients against central finite differences. The
// function under test builds a 1x1 scalar from leaf vars created for each
// input matrix; this harness owns the tapes. h = 1e-5 by default (64-bit).
//
// Relative error per coordinate uses a unit floor in the denominator, i.e.
// |a - fd| / max(|a|, |fd|, 1), so dead coordinates compare by absolute error.
// If max_coords is smaller than the total coordinate count, a deterministic
// random subset is checked.
template <class T>
GradCheckReport grad_check(
    const std::function<Var(Tape<T>&, const std::vector<Var>&)>& fn,
    const std::vector<num::Mat<T>>& inputs, T h = T(1e-5),
    size_t max_coords = std::numeric_limits<size_t>::max(), uint64_t seed = 17) {
  GradCheckReport rep;

  auto eval = [&](const std::vector<num::Mat<T>>& pts) -> T {
    Tape<T> tape;
    std::vector<Var> vars;
    vars.reserve(pts.size());
    for (const auto& m : pts) vars.push_back(tape.leaf(m));
    Var out = fn(tape, vars);
    return tape.val(out)(0, 0);
  };

  // Analytic pass.
  std::vector<num::Mat<T>> grads;
  {
    Tape<T> tape;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.leaf(m));
    Var out = fn(tape, vars);
    tape.backward(out);
    for (Var v : vars) {
      grads.push_back(tape.grad(v));
      if (!grads.back().all_finite()) rep.analytic_finite = false;
    }
  }
  if (!rep.analytic_finite) {
    rep.max_rel_err = std::numeric_limits<double>::infinity();
    return rep;
  }

  size_t total = 0;
  for (const auto& m : inputs) total += m.size();

  // Pick coordinates (all, or a seeded subset).
  std::vector<std::pair<size_t, size_t>> coords;  // (input idx, flat idx)
  if (total <= max_coords) {
    for (size_t ii = 0; ii < inputs.size(); ++ii)
      for (size_t k = 0; k < inputs[ii].size(); ++k) coords.emplace_back(ii, k);
  } else {
    Rng rng(seed);
    for (size_t n = 0; n < max_coords; ++n) {
      size_t flat = size_t(rng.below(total));
      for (size_t ii = 0; ii < inputs.size(); ++ii) {
        if (flat < inputs[ii].size()) {
          coords.emplace_back(ii, flat);
          break;
        }
        flat -= inputs[ii].size();
      }
    }
  }

  std::vector<num::Mat<T>> pts = inputs;
  for (auto [ii, k] : coords) {
    T orig = pts[ii].data[k];
    pts[ii].data[k] = orig + h;
    T fp = eval(pts);
    pts[ii].data[k] = orig - h;
    T fm = eval(pts);
    pts[ii].data[k] = orig;
    double fd = (double(fp) - double(fm)) / (2.0 * double(h));
    double an = double(grads[ii].data[k]);
    double denom = std::max({std::fabs(an), std::fabs(fd), 1.0});
    double err = std::fabs(an - fd) / denom;
    if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
    rep.max_rel_err = std::max(rep.max_rel_err, err);
    ++rep.coords_checked;
  }
  return rep;
}

}  // namespace mmsf::ad
