#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/dataset.hpp"
#include "ase/diffusion.hpp"
#include "ase/exit_schedule.hpp"
#include "ase/network.hpp"
#include "ase/noise_schedule.hpp"
#include "ase/optimizer.hpp"
#include "ase/rng.hpp"

namespace ase {

struct TrainConfig {
  int iterations = 1000;
  int batch_size = 64;
  double lr = 2e-5;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool cosine_lr = false;

  double ema_rate = 0.999;
  int cycle_c = 0;  // boost-phase length in iterations; 0 disables the boost
  double lambda_boost = 2.0;
  double noise_region_start = 0.5;  // u* boundary of the boosted region

  double vlb_weight = 0.0;  // hybrid-loss coefficient (needs learned variance)

  int t_min = 1;
  int t_max = 0;  // 0 means T

  bool use_plateau = false;  // end the boost on plateau instead of at cycle_c
  int plateau_window = 5;
  double plateau_rel_tol = 1e-3;
  int eval_every = 200;
  int eval_batch = 256;

  int log_every = 100;
};

struct TrainLogRow {
  std::int64_t step = 0;
  double loss = 0.0;
  bool lambda_boosted = false;
};
using LogSink = std::function<void(const TrainLogRow&)>;

struct TrainState {
  std::int64_t step = 0;
  double ema_rate = 0.999;
  int cycle_c = 0;
  double lambda_boost = 2.0;
  double noise_region_start = 0.5;
  bool use_plateau = false;
  bool plateau_fired = false;
};

// The boost phase runs for the first cycle_c iterations, or, in plateau
// mode, until the validation loss plateaus.
inline bool boost_active(const TrainState& state) {
  if (state.use_plateau) return !state.plateau_fired;
  return state.cycle_c > 0 && state.step < state.cycle_c;
}

// Boost-phase weight: lambda_boost on the noise region u > u* while the
// phase is active, 1 otherwise; after the phase ends, 1 everywhere.
inline double lambda_schedule(int t, int T, const TrainState& state) {
  if (!boost_active(state)) return 1.0;
  double u = static_cast<double>(t) / static_cast<double>(T);
  return u > state.noise_region_start ? state.lambda_boost : 1.0;
}

// Elementwise theta_T <- alpha * theta_T + (1 - alpha) * theta_S.
inline void ema_update(ParamSet& teacher, const ParamSet& student,
                       double alpha) {
  if (teacher.tensors.size() != student.tensors.size())
    throw std::invalid_argument("ema_update: parameter shape mismatch");
  for (std::size_t i = 0; i < teacher.tensors.size(); ++i)
    teacher.tensors[i] =
        alpha * teacher.tensors[i] + (1.0 - alpha) * student.tensors[i];
}

// True when the best window-smoothed loss has stopped improving (by more
// than rel_tol, relatively) over the last `window` evaluations.
inline bool plateau_check(std::span<const double> history, int window = 5,
                          double rel_tol = 1e-3) {
  int n = static_cast<int>(history.size());
  if (n < 2)
    throw std::invalid_argument("plateau_check: need >= 2 evaluations");
  if (n < window + 1) return false;
  std::vector<double> smoothed(n);
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - window + 1);
    double acc = 0.0;
    for (int j = lo; j <= i; ++j) acc += history[j];
    smoothed[i] = acc / (i - lo + 1);
  }
  double best_prior = smoothed[0];
  for (int i = 1; i < n - window; ++i)
    best_prior = std::min(best_prior, smoothed[i]);
  double best_recent = smoothed[n - window];
  for (int i = n - window + 1; i < n; ++i)
    best_recent = std::min(best_recent, smoothed[i]);
  return best_recent >= best_prior - rel_tol * std::abs(best_prior);
}

namespace detail {

// One optimization step over a batch whose rows may exit at different
// depths: rows are grouped by retained-block count and each group runs a
// single batched forward/backward. Returns the batch loss.
inline double train_step(ScoreNetwork& net, AdamW& opt,
                         const ExitSchedule* sched, const Mat& x0,
                         const std::vector<int>& t, const Mat& eps,
                         const std::vector<double>& row_weight,
                         double vlb_weight, const NoiseSchedule& ns,
                         double lr_scale) {
  const int batch = static_cast<int>(x0.rows());
  std::map<int, std::vector<int>> groups;
  for (int i = 0; i < batch; ++i) {
    int s = sched ? lookup_blocks(*sched, t[i], ns.T) : net.block_limit();
    groups[s].push_back(i);
  }

  ParamSet total = ParamSet::zeros_like(net.params());
  double loss = 0.0;
  const bool lv = net.config().learned_variance && vlb_weight > 0.0;
  for (auto& [blocks, rows] : groups) {
    const int g = static_cast<int>(rows.size());
    Mat x0g(g, x0.cols()), epsg(g, x0.cols());
    std::vector<int> tg(g);
    for (int r = 0; r < g; ++r) {
      x0g.row(r) = x0.row(rows[r]);
      epsg.row(r) = eps.row(rows[r]);
      tg[r] = t[rows[r]];
    }
    Mat xtg = perturb_batch(x0g, tg, epsg, ns);

    ScoreNetwork::Workspace ws;
    NetOutput out = net.forward(xtg, tg, blocks, &ws);
    Mat d_eps(g, x0.cols());
    Mat d_v;
    if (lv) d_v = Mat::Zero(g, x0.cols());
    for (int r = 0; r < g; ++r) {
      double w = row_weight[rows[r]] / batch;
      Mat diff = out.eps.row(r) - epsg.row(r);
      loss += w * diff.squaredNorm();
      d_eps.row(r) = 2.0 * w * diff;
      if (lv && tg[r] >= 2) {
        Vec dke, dkv;
        Vec x0v = x0g.row(r).transpose(), xtv = xtg.row(r).transpose();
        Vec ehat = out.eps.row(r).transpose(), vv = out.v.row(r).transpose();
        loss += w * vlb_weight * kl_vlb_term(x0v, xtv, tg[r], ehat, vv, ns);
        kl_vlb_grad(x0v, xtv, tg[r], ehat, vv, ns, dke, dkv);
        d_eps.row(r) += w * vlb_weight * dke.transpose();
        d_v.row(r) = w * vlb_weight * dkv.transpose();
      }
    }
    total.add_scaled(net.backward(ws, d_eps, d_v), 1.0);
  }
  opt.step(net.params(), total, lr_scale);
  return loss;
}

inline double eval_loss(const ScoreNetwork& net, const ExitSchedule* sched,
                        const Mat& x0, const std::vector<int>& t,
                        const Mat& eps, const NoiseSchedule& ns) {
  Mat xt = perturb_batch(x0, t, eps, ns);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    int blocks =
        sched ? lookup_blocks(*sched, t[i], ns.T) : net.block_limit();
    std::vector<int> ti = {t[i]};
    Mat e = net.forward(xt.row(i), ti, blocks).eps;
    loss += (e.row(0) - eps.row(i)).squaredNorm();
  }
  return loss / static_cast<double>(x0.rows());
}

}  // namespace detail

// From-scratch training of the full network with lambda = 1; stands in for
// a published pretrained checkpoint at toy scale.
inline ScoreNetwork pretrain(const NetworkConfig& net_cfg,
                             const Dataset& dataset, const NoiseSchedule& ns,
                             const TrainConfig& cfg, std::uint64_t seed,
                             const LogSink& sink = nullptr) {
  if (cfg.iterations < 0) throw ConfigError("pretrain: iterations >= 0");
  ScoreNetwork net(net_cfg, seed);
  net.set_time_base(ns.T);
  if (cfg.iterations == 0) return net;

  AdamW opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.adam_beta1;
  opt.beta2 = cfg.adam_beta2;
  opt.eps = cfg.adam_eps;
  opt.weight_decay = cfg.weight_decay;
  Rng batch_rng(derive_seed(seed, kStreamBatch));
  Rng noise_rng(derive_seed(seed, kStreamNoise));
  Rng time_rng(derive_seed(seed, kStreamTime));
  const int t_hi = cfg.t_max > 0 ? cfg.t_max : ns.T;
  if (cfg.t_min < 1 || t_hi > ns.T || cfg.t_min > t_hi)
    throw ConfigError("pretrain: invalid t range");

  std::vector<double> ones(cfg.batch_size, 1.0);
  for (int step = 0; step < cfg.iterations; ++step) {
    Mat x0 = dataset.sample(cfg.batch_size, batch_rng);
    Mat eps(cfg.batch_size, x0.cols());
    noise_rng.fill_normal(eps);
    std::vector<int> t(cfg.batch_size);
    for (int& ti : t)
      ti = cfg.t_min +
           static_cast<int>(time_rng.uniform_index(t_hi - cfg.t_min + 1));
    double lr_scale =
        cfg.cosine_lr
            ? 0.5 * (1.0 + std::cos(M_PI * step / cfg.iterations))
            : 1.0;
    double loss = detail::train_step(net, opt, nullptr, x0, t, eps, ones,
                                     cfg.vlb_weight, ns, lr_scale);
    if (!std::isfinite(loss))
      throw TrainingError("pretrain diverged at step " +
                          std::to_string(step) + " (loss not finite)");
    if (sink && (step % cfg.log_every == 0 || step == cfg.iterations - 1))
      sink({step, loss, false});
  }
  return net;
}

// Early-exit fine-tuning: every example runs the student at the depth the
// schedule assigns to its timestep, the loss is reweighted by the boost
// schedule, and a slow EMA teacher tracks the student. Returns the teacher.
inline ScoreNetwork finetune_ase(const ScoreNetwork& pretrained,
                                 const ExitSchedule* sched,
                                 const Dataset& dataset,
                                 const NoiseSchedule& ns,
                                 const TrainConfig& cfg, std::uint64_t seed,
                                 const LogSink& sink = nullptr) {
  if (cfg.iterations < 0) throw ConfigError("finetune: iterations >= 0");
  if (cfg.ema_rate < 0.0 || cfg.ema_rate > 1.0)
    throw ConfigError("finetune: ema_rate outside [0, 1]");
  if (sched) sched->validate(ArchShape::of(pretrained.config()));

  ScoreNetwork student = pretrained;
  student.set_time_base(ns.T);
  ParamSet teacher = student.params();
  if (cfg.iterations == 0) return student;

  AdamW opt;
  opt.lr = cfg.lr;
  opt.beta1 = cfg.adam_beta1;
  opt.beta2 = cfg.adam_beta2;
  opt.eps = cfg.adam_eps;
  opt.weight_decay = cfg.weight_decay;
  Rng batch_rng(derive_seed(seed, kStreamBatch));
  Rng noise_rng(derive_seed(seed, kStreamNoise));
  Rng time_rng(derive_seed(seed, kStreamTime));
  const int t_hi = cfg.t_max > 0 ? cfg.t_max : ns.T;
  if (cfg.t_min < 1 || t_hi > ns.T || cfg.t_min > t_hi)
    throw ConfigError("finetune: invalid t range");

  TrainState state;
  state.ema_rate = cfg.ema_rate;
  state.cycle_c = cfg.cycle_c;
  state.lambda_boost = cfg.lambda_boost;
  state.noise_region_start = cfg.noise_region_start;
  state.use_plateau = cfg.use_plateau;

  // Held-out evaluation data for the optional plateau trigger.
  Mat eval_x0, eval_eps;
  std::vector<int> eval_t;
  std::vector<double> eval_history;
  if (cfg.use_plateau) {
    Rng eval_rng(derive_seed(seed, kStreamData));
    eval_x0 = dataset.sample(cfg.eval_batch, eval_rng);
    eval_eps = Mat(cfg.eval_batch, eval_x0.cols());
    eval_rng.fill_normal(eval_eps);
    eval_t.resize(cfg.eval_batch);
    for (int& ti : eval_t)
      ti = 1 + static_cast<int>(eval_rng.uniform_index(ns.T));
  }

  std::vector<double> weights(cfg.batch_size);
  for (int step = 0; step < cfg.iterations; ++step) {
    state.step = step;
    if (cfg.use_plateau && !state.plateau_fired && step > 0 &&
        step % cfg.eval_every == 0) {
      eval_history.push_back(
          detail::eval_loss(student, sched, eval_x0, eval_t, eval_eps, ns));
      if (eval_history.size() >= 2 &&
          plateau_check(eval_history, cfg.plateau_window,
                        cfg.plateau_rel_tol))
        state.plateau_fired = true;
    }

    Mat x0 = dataset.sample(cfg.batch_size, batch_rng);
    Mat eps(cfg.batch_size, x0.cols());
    noise_rng.fill_normal(eps);
    std::vector<int> t(cfg.batch_size);
    for (int i = 0; i < cfg.batch_size; ++i) {
      t[i] = cfg.t_min +
             static_cast<int>(time_rng.uniform_index(t_hi - cfg.t_min + 1));
      weights[i] = lambda_schedule(t[i], ns.T, state);
    }
    double lr_scale =
        cfg.cosine_lr
            ? 0.5 * (1.0 + std::cos(M_PI * step / cfg.iterations))
            : 1.0;
    double loss = detail::train_step(student, opt, sched, x0, t, eps,
                                     weights, cfg.vlb_weight, ns, lr_scale);
    if (!std::isfinite(loss))
      throw TrainingError("finetune diverged at step " +
                          std::to_string(step) + " (loss not finite)");
    ema_update(teacher, student.params(), cfg.ema_rate);
    if (sink && (step % cfg.log_every == 0 || step == cfg.iterations - 1))
      sink({step, loss, boost_active(state)});
  }

  student.params() = teacher;
  return student;
}

}  // namespace ase
