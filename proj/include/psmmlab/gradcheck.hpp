#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "psmmlab/parameters.hpp"

namespace psmmlab {

struct GradcheckOptions {
  std::size_t samples = 100;  // random scalar parameters to probe
  double step = 1e-5;         // central-difference step
  // When the one-sided slopes disagree the step straddles a ReLU or max-pool
  // switch; the step shrinks tenfold, down to min_step, until they agree.
  double min_step = 1e-8;
  // Relative error is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
  // gradients that are zero up to rounding from dividing by ~0.
  double scale_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradcheckProbe {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0, numeric = 0.0, rel_error = 0.0;
  double step = 0.0;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::vector<GradcheckProbe> probes;
  const GradcheckProbe& worst() const {
    return *std::max_element(probes.begin(), probes.end(),
                             [](const auto& a, const auto& b) { return a.rel_error < b.rel_error; });
  }
};

// `loss_fn(with_backward)` evaluates the scalar loss on the current parameter
// values; with_backward=true must also accumulate parameter gradients. It must
// be a pure function of the parameters (no running-statistic updates).
inline GradcheckResult finite_difference_check(ParameterSet& params, const std::function<double(bool)>& loss_fn,
                                               const GradcheckOptions& opt = {}) {
  params.zero_grad();
  const double base = loss_fn(true);

  std::vector<std::pair<std::size_t, std::size_t>> candidates;
  for (std::size_t p = 0; p < params.size(); ++p)
    if (params.at(p).trainable)
      for (std::size_t i = 0; i < params.at(p).value.size(); ++i) candidates.emplace_back(p, i);
  std::mt19937_64 rng(opt.seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(candidates.size(), opt.samples));

  GradcheckResult res;
  for (auto [p, i] : candidates) {
    Parameter& par = params.at(p);
    const double analytic = par.value.grad()[i];
    const double orig = par.value[i];
    double h = opt.step, numeric = 0.0;
    while (true) {
      par.value[i] = orig + h;
      const double up = loss_fn(false);
      par.value[i] = orig - h;
      const double down = loss_fn(false);
      par.value[i] = orig;
      numeric = (up - down) / (2.0 * h);
      const double fwd = (up - base) / h, bwd = (base - down) / h;
      const bool kink = std::abs(fwd - bwd) > std::max(1e-2 * std::max(std::abs(fwd), std::abs(bwd)), 1e-6);
      if (!kink || h / 10.0 < opt.min_step) break;
      h /= 10.0;
    }
    const double scale = std::max({std::abs(analytic), std::abs(numeric), opt.scale_floor});
    GradcheckProbe probe{par.name, i, analytic, numeric, std::abs(analytic - numeric) / scale, h};
    res.max_rel_error = std::max(res.max_rel_error, probe.rel_error);
    res.probes.push_back(std::move(probe));
  }
  return res;
}

}  // namespace psmmlab
