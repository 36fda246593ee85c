#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "reclab/events.hpp"
#include "reclab/synth.hpp"

namespace fixtures {

inline reclab::PreferenceEvent ev(reclab::Tick t, const char* actor, const char* target,
                                  reclab::EventKind kind) {
  return {t, reclab::UserId::parse(actor), reclab::UserId::parse(target), kind};
}

inline reclab::UserId uid(const char* s) { return reclab::UserId::parse(s); }

/// Relative error of two gradient values with an absolute floor for tiny values.
inline double rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

inline reclab::WorldParams small_world(std::uint64_t seed, std::uint32_t n = 40) {
  reclab::WorldParams p;
  p.seed = seed;
  p.n_x = n;
  p.n_y = n;
  return p;
}

}  // namespace fixtures

#include <functional>
#include <random>

#include "reclab/nn/layers.hpp"

namespace fixtures {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the already-accumulated .grad of `params` against central differences of
/// `loss` at `n` random trainable coordinates. Large steps can straddle a ReLU or max-pool
/// kink and small steps drown in roundoff, so each coordinate keeps its best agreement
/// over three step sizes.
inline GradCheckResult check_param_grads(const std::vector<reclab::nn::Param<double>*>& params,
                                         const std::function<double()>& loss, std::size_t n,
                                         std::uint64_t seed) {
  std::vector<std::pair<reclab::nn::Param<double>*, Eigen::Index>> coords;
  for (auto* p : params)
    if (p->trainable)
      for (Eigen::Index i = 0; i < p->value.size(); ++i) coords.emplace_back(p, i);
  std::mt19937_64 rng(seed);
  std::shuffle(coords.begin(), coords.end(), rng);
  if (coords.size() > n) coords.resize(n);
  GradCheckResult r;
  for (auto& [p, i] : coords) {
    double& w = p->value.data()[i];
    const double saved = w;
    double best = 1e300;
    for (double h : {1e-4, 1e-5, 1e-6}) {
      w = saved + h;
      const double up = loss();
      w = saved - h;
      const double down = loss();
      w = saved;
      best = std::min(best, rel_error(p->grad.data()[i], (up - down) / (2 * h)));
    }
    r.max_rel_error = std::max(r.max_rel_error, best);
    ++r.coordinates;
  }
  return r;
}

}  // namespace fixtures
