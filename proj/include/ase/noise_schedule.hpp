#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ase/common.hpp"

namespace ase {

enum class SigmaKind { kPosterior, kBeta };

// Forward-process tables for discrete t in {1..T}. All entries are computed
// and stored at 64-bit precision; index 0 of each table corresponds to t = 1.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;        // beta_t
  std::vector<double> alpha;       // 1 - beta_t
  std::vector<double> alpha_bar;   // prod_{s<=t} alpha_s
  std::vector<double> beta_tilde;  // posterior variance, beta_tilde_1 = 0
  std::vector<double> sigma;       // sampler noise scale
  SigmaKind sigma_kind = SigmaKind::kPosterior;

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
  // alpha_bar with the boundary convention alpha_bar_0 = 1.
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
  double beta_tilde_at(int t) const { return beta_tilde[t - 1]; }
  double sigma_at(int t) const { return sigma[t - 1]; }

  // Linear interpolation of the beta table at a real-valued step index,
  // clamped to [1, T]; bridges the discrete table to the SDE solver.
  double beta_interp(double t_real) const {
    if (t_real <= 1.0) return beta.front();
    if (t_real >= static_cast<double>(T)) return beta.back();
    int lo = static_cast<int>(std::floor(t_real));
    double w = t_real - lo;
    return beta[lo - 1] * (1.0 - w) + beta[lo] * w;
  }
};

// Constructor parameters of a schedule; kept alongside checkpoints so the
// tables can be rebuilt exactly at 64-bit precision on load.
struct NoiseSpec {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  SigmaKind sigma = SigmaKind::kPosterior;
};

inline NoiseSchedule linear_beta_schedule(int T, double beta_start,
                                          double beta_end,
                                          SigmaKind sigma_kind =
                                              SigmaKind::kPosterior) {
  if (T < 1) throw ConfigError("noise schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError(
        "noise schedule: betas must satisfy 0 < beta_start <= beta_end < 1");

  NoiseSchedule ns;
  ns.T = T;
  ns.sigma_kind = sigma_kind;
  ns.beta.resize(T);
  ns.alpha.resize(T);
  ns.alpha_bar.resize(T);
  ns.beta_tilde.resize(T);
  ns.sigma.resize(T);

  for (int i = 0; i < T; ++i) {
    ns.beta[i] = T == 1 ? beta_start
                        : beta_start + (beta_end - beta_start) *
                                           static_cast<double>(i) /
                                           static_cast<double>(T - 1);
    ns.alpha[i] = 1.0 - ns.beta[i];
  }
  double prod = 1.0;
  for (int i = 0; i < T; ++i) {
    double prev_bar = prod;  // alpha_bar_{t-1}, with alpha_bar_0 = 1
    prod *= ns.alpha[i];
    ns.alpha_bar[i] = prod;
    ns.beta_tilde[i] = (1.0 - prev_bar) / (1.0 - prod) * ns.beta[i];
    ns.sigma[i] = sigma_kind == SigmaKind::kPosterior
                      ? std::sqrt(ns.beta_tilde[i])
                      : std::sqrt(ns.beta[i]);
  }
  return ns;
}

inline NoiseSchedule build_schedule(const NoiseSpec& spec) {
  return linear_beta_schedule(spec.T, spec.beta_start, spec.beta_end,
                              spec.sigma);
}

}  // namespace ase
