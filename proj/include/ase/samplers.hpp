#pragma once

#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/diffusion.hpp"
#include "ase/exit_schedule.hpp"
#include "ase/noise_schedule.hpp"
#include "ase/rng.hpp"

namespace ase {

enum class SamplerKind { kDdpm, kDdim, kEm, kLangevin };
enum class StepGrid { kUniform, kQuadratic };

inline std::string sampler_kind_name(SamplerKind k) {
  switch (k) {
    case SamplerKind::kDdpm: return "ddpm";
    case SamplerKind::kDdim: return "ddim";
    case SamplerKind::kEm: return "em";
    case SamplerKind::kLangevin: return "langevin";
  }
  return "?";
}

struct SamplerConfig {
  SamplerKind kind = SamplerKind::kDdpm;
  int n_steps = 1000;
  double eta = 0.0;          // ddim stochasticity
  StepGrid grid = StepGrid::kUniform;
  double langevin_step = 0.01;
  int langevin_iters = 100;
  int langevin_t = 1;        // diffusion level refined by the langevin chain
  std::uint64_t seed = 0;
  int batch = 1;

  void validate() const {
    if (n_steps < 1) throw ConfigError("sampler: n_steps must be >= 1");
    if (eta < 0.0 || eta > 1.0)
      throw ConfigError("sampler: eta outside [0, 1]");
    if (langevin_step <= 0.0)
      throw ConfigError("sampler: langevin_step must be positive");
    if (batch < 1) throw ConfigError("sampler: batch must be >= 1");
  }
};

// Ancestral reverse step; sigma_1 is forced to zero so the final step is
// deterministic.
inline Mat ddpm_step(const Mat& x_t, int t, const Mat& eps_hat,
                     const NoiseSchedule& ns, const Mat& z) {
  double sig = t == 1 ? 0.0 : ns.sigma_at(t);
  return mu_theta_batch(x_t, eps_hat, t, ns) + sig * z;
}

// Non-Markovian reverse jump from t to t_next < t. eta = 0 gives the
// deterministic first-order exponential-integrator step.
inline Mat ddim_step(const Mat& x_t, int t, int t_next, const Mat& eps_hat,
                     const NoiseSchedule& ns, double eta, const Mat& z,
                     int* clamp_count = nullptr) {
  if (t_next >= t || t_next < 0)
    throw std::invalid_argument("ddim_step: need 0 <= t_next < t");
  check_step(t, ns);
  double ab = ns.alpha_bar_at(t);
  double abn = ns.alpha_bar_at(t_next);
  Mat x0_hat = (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
  double sigma = eta * std::sqrt((1.0 - abn) / (1.0 - ab)) *
                 std::sqrt(1.0 - ab / abn);
  double rem = 1.0 - abn - sigma * sigma;
  if (rem < 0.0) {
    rem = 0.0;
    if (clamp_count) ++*clamp_count;
  }
  return std::sqrt(abn) * x0_hat + std::sqrt(rem) * eps_hat + sigma * z;
}

// Euler-Maruyama step of the reverse SDE at real-valued step index t_real,
// with beta interpolated from the discrete table.
inline Mat em_step(const Mat& x, double t_real, const Mat& score,
                   const NoiseSchedule& ns, double dt, const Mat& z) {
  if (dt <= 0.0) throw std::invalid_argument("em_step: dt must be positive");
  double b = ns.beta_interp(t_real);
  return x + (0.5 * b * x + b * score) * dt + std::sqrt(b * dt) * z;
}

// Unadjusted Langevin update targeting the density whose score is given.
inline Mat langevin_step(const Mat& x, const Mat& score, double beta_step,
                         const Mat& z) {
  if (beta_step <= 0.0)
    throw std::invalid_argument("langevin_step: beta_step must be positive");
  return x + beta_step * score + std::sqrt(2.0 * beta_step) * z;
}

// Solver-step to diffusion-step mapping: strictly increasing knots
// tau_0 = 0 < ... < tau_n = T. The quadratic grid concentrates steps near
// the data end.
inline std::vector<int> build_tau_grid(int T, int n_steps, StepGrid grid) {
  if (n_steps < 1 || n_steps > T)
    throw ConfigError("tau grid: need 1 <= n_steps <= T");
  std::vector<int> taus(n_steps + 1);
  taus[0] = 0;
  for (int i = 1; i <= n_steps; ++i) {
    double f = static_cast<double>(i) / n_steps;
    double v = grid == StepGrid::kUniform ? T * f : T * f * f;
    taus[i] = std::max(taus[i - 1] + 1, static_cast<int>(std::llround(v)));
  }
  taus[n_steps] = T;
  for (int i = n_steps - 1; i >= 1; --i)
    taus[i] = std::min(taus[i], taus[i + 1] - 1);
  return taus;
}

struct RunStats {
  double total_time_s = 0.0;
  std::int64_t total_flops = 0;  // per-sample forward cost summed over steps
  std::vector<double> step_time_s;
  std::vector<std::int64_t> step_flops;
  int ddim_clamps = 0;
};

struct SampleResult {
  Mat samples;
  RunStats stats;
};

// Anything that can estimate the injected noise for a batch at step t with
// a given retained-block count.
template <class M>
concept EpsModel = requires(const M& m, const Mat& x, int t, int blocks) {
  { m.estimate(x, t, blocks) } -> std::convertible_to<Mat>;
  { m.flops(t, blocks) } -> std::convertible_to<std::int64_t>;
  { m.block_limit() } -> std::convertible_to<int>;
  { m.dim() } -> std::convertible_to<int>;
};

// Analytic optimal regressor for Gaussian data; ground truth for sampler
// and metric tests.
struct GaussianOracleModel {
  Vec data_mean;
  double data_std = 1.0;
  const NoiseSchedule* ns = nullptr;

  Mat estimate(const Mat& x, int t, int /*blocks*/) const {
    double ab = ns->alpha_bar_at(t);
    double denom = ab * data_std * data_std + (1.0 - ab);
    return (std::sqrt(1.0 - ab) / denom) *
           (x.rowwise() - std::sqrt(ab) * data_mean.transpose());
  }
  std::int64_t flops(int, int) const { return 0; }
  int block_limit() const { return std::numeric_limits<int>::max(); }
  int dim() const { return static_cast<int>(data_mean.size()); }
};

namespace detail {

class ChainNoise {
 public:
  ChainNoise(std::uint64_t seed, int batch, int dim) : dim_(dim) {
    rngs_.reserve(batch);
    for (int i = 0; i < batch; ++i)
      rngs_.emplace_back(derive_seed(seed, kStreamChain, i));
  }
  // Each chain draws from its own derived stream, so batch composition and
  // order never change a chain's trajectory.
  Mat draw() {
    Mat z(static_cast<Eigen::Index>(rngs_.size()), dim_);
    for (std::size_t i = 0; i < rngs_.size(); ++i)
      for (int j = 0; j < dim_; ++j) z(i, j) = rngs_[i].normal();
    return z;
  }

 private:
  std::vector<Rng> rngs_;
  int dim_;
};

}  // namespace detail

// Runs the configured solver, resolving the retained-block count per step
// through the exit schedule (full depth when absent). Wall time is measured
// around the noise-estimation call only.
template <EpsModel M>
SampleResult sample_loop(const M& model, const ExitSchedule* sched,
                         const SamplerConfig& cfg, const NoiseSchedule& ns) {
  cfg.validate();
  if (sched && sched->max_blocks() > model.block_limit())
    throw ConfigError("sample_loop: schedule exceeds the model's depth");
  if (cfg.kind == SamplerKind::kDdpm && cfg.n_steps != ns.T)
    throw ConfigError("sample_loop: ddpm requires n_steps == T");

  const int d = model.dim();
  detail::ChainNoise noise(cfg.seed, cfg.batch, d);
  Mat x = noise.draw();  // x_T ~ N(0, I)
  SampleResult result;
  auto blocks_at = [&](int t) {
    return sched ? lookup_blocks(*sched, t, ns.T) : model.block_limit();
  };
  auto timed_estimate = [&](int t, int blocks) {
    auto t0 = std::chrono::steady_clock::now();
    Mat eps = model.estimate(x, t, blocks);
    auto t1 = std::chrono::steady_clock::now();
    double secs = std::chrono::duration<double>(t1 - t0).count();
    std::int64_t fl = model.flops(t, blocks);
    result.stats.step_time_s.push_back(secs);
    result.stats.step_flops.push_back(fl);
    result.stats.total_time_s += secs;
    result.stats.total_flops += fl;
    return eps;
  };

  switch (cfg.kind) {
    case SamplerKind::kDdpm: {
      for (int t = ns.T; t >= 1; --t) {
        Mat eps = timed_estimate(t, blocks_at(t));
        x = ddpm_step(x, t, eps, ns, noise.draw());
      }
      break;
    }
    case SamplerKind::kDdim: {
      std::vector<int> taus = build_tau_grid(ns.T, cfg.n_steps, cfg.grid);
      for (int i = static_cast<int>(taus.size()) - 1; i >= 1; --i) {
        int t = taus[i];
        Mat eps = timed_estimate(t, blocks_at(t));
        x = ddim_step(x, t, taus[i - 1], eps, ns, cfg.eta, noise.draw(),
                      &result.stats.ddim_clamps);
      }
      break;
    }
    case SamplerKind::kEm: {
      double dt = static_cast<double>(ns.T) / cfg.n_steps;
      for (int i = cfg.n_steps; i >= 1; --i) {
        double t_real = i * dt;
        int t_net = std::min(
            ns.T, std::max(1, static_cast<int>(std::llround(t_real))));
        Mat eps = timed_estimate(t_net, blocks_at(t_net));
        Mat score = -eps / std::sqrt(1.0 - ns.alpha_bar_at(t_net));
        x = em_step(x, t_real, score, ns, dt, noise.draw());
      }
      break;
    }
    case SamplerKind::kLangevin: {
      int t = cfg.langevin_t;
      check_step(t, ns);
      int blocks = blocks_at(t);
      double om = 1.0 - ns.alpha_bar_at(t);
      for (int i = 0; i < cfg.langevin_iters; ++i) {
        Mat eps = timed_estimate(t, blocks);
        Mat score = -eps / std::sqrt(om);
        x = langevin_step(x, score, cfg.langevin_step, noise.draw());
      }
      break;
    }
  }
  result.samples = std::move(x);
  return result;
}

}  // namespace ase
