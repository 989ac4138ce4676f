#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "ase/common.hpp"
#include "ase/noise_schedule.hpp"

namespace ase {

inline void check_step(int t, const NoiseSchedule& ns) {
  if (t < 1 || t > ns.T)
    throw std::invalid_argument("step t out of range [1, T]");
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. The caller supplies eps; the
// operation itself is deterministic.
inline Vec perturb(const Vec& x0, int t, const Vec& eps,
                   const NoiseSchedule& ns) {
  check_step(t, ns);
  if (eps.size() != x0.size())
    throw std::invalid_argument("perturb: eps shape mismatch");
  double ab = ns.alpha_bar_at(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

inline Mat perturb_batch(const Mat& x0, std::span<const int> t, const Mat& eps,
                         const NoiseSchedule& ns) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols() ||
      std::ssize(t) != x0.rows())
    throw std::invalid_argument("perturb: batch shape mismatch");
  Mat out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    check_step(t[i], ns);
    double ab = ns.alpha_bar_at(t[i]);
    out.row(i) = std::sqrt(ab) * x0.row(i) + std::sqrt(1.0 - ab) * eps.row(i);
  }
  return out;
}

// Score parameterization: s = -eps / sqrt(1 - abar_t).
inline Vec eps_to_score(const Vec& eps, int t, const NoiseSchedule& ns) {
  check_step(t, ns);
  double om = 1.0 - ns.alpha_bar_at(t);
  if (om <= 0.0)
    throw std::invalid_argument("eps_to_score: alpha_bar must be < 1");
  return -eps / std::sqrt(om);
}

inline Vec score_to_eps(const Vec& score, int t, const NoiseSchedule& ns) {
  check_step(t, ns);
  double om = 1.0 - ns.alpha_bar_at(t);
  if (om <= 0.0)
    throw std::invalid_argument("score_to_eps: alpha_bar must be < 1");
  return -score * std::sqrt(om);
}

// Posterior q(x_{t-1} | x_t, x0) = N(mu_tilde, beta_tilde I). The noise
// eps_t is recovered by inverting the perturbation.
struct Posterior {
  Vec mu_tilde;
  double beta_tilde;
};

inline Posterior posterior_q(const Vec& x_t, const Vec& x0, int t,
                             const NoiseSchedule& ns) {
  check_step(t, ns);
  if (x_t.size() != x0.size())
    throw std::invalid_argument("posterior_q: shape mismatch");
  double ab = ns.alpha_bar_at(t);
  Vec eps = (x_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
  Vec mu = (x_t - ns.beta_at(t) / std::sqrt(1.0 - ab) * eps) /
           std::sqrt(ns.alpha_at(t));
  return {mu, ns.beta_tilde_at(t)};
}

// Model posterior mean mu_theta(x_t, t) given a noise estimate.
inline Vec mu_theta(const Vec& x_t, const Vec& eps_hat, int t,
                    const NoiseSchedule& ns) {
  check_step(t, ns);
  double ab = ns.alpha_bar_at(t);
  return (x_t - ns.beta_at(t) / std::sqrt(1.0 - ab) * eps_hat) /
         std::sqrt(ns.alpha_at(t));
}

inline Mat mu_theta_batch(const Mat& x_t, const Mat& eps_hat, int t,
                          const NoiseSchedule& ns) {
  check_step(t, ns);
  double ab = ns.alpha_bar_at(t);
  return (x_t - ns.beta_at(t) / std::sqrt(1.0 - ab) * eps_hat) /
         std::sqrt(ns.alpha_at(t));
}

// Optimal noise regressor for N(data_mean, data_std^2 I) data; analytic
// ground truth used to exercise samplers and training without a network.
inline Vec gaussian_oracle_eps(const Vec& x_t, int t, const Vec& data_mean,
                               double data_std, const NoiseSchedule& ns) {
  check_step(t, ns);
  double ab = ns.alpha_bar_at(t);
  double denom = ab * data_std * data_std + (1.0 - ab);
  return std::sqrt(1.0 - ab) * (x_t - std::sqrt(ab) * data_mean) / denom;
}

// Loss weighting and hybrid-loss configuration. lambda_fn maps the
// continuous time u = t/T in (0, 1] to a positive weight.
struct LossConfig {
  std::function<double(double)> lambda_fn = [](double) { return 1.0; };
  double vlb_weight = 0.0;
  bool learned_variance = false;

  double lambda_at(int t, int T) const {
    double w = lambda_fn(static_cast<double>(t) / static_cast<double>(T));
    if (!(w > 0.0)) throw ConfigError("lambda(t) must be positive");
    return w;
  }
};

struct LossBatch {
  Mat x0;              // B x d
  std::vector<int> t;  // B
  Mat eps;             // B x d
};

// Mean over the batch of lambda(t) * |eps - eps_hat|^2 where the predictor
// sees the perturbed x_t.
template <class Predictor>  // Mat(const Mat& x_t, std::span<const int> t)
double loss_simple(const LossBatch& batch, Predictor&& eps_hat_fn,
                   const NoiseSchedule& ns, const LossConfig& cfg) {
  Mat x_t = perturb_batch(batch.x0, batch.t, batch.eps, ns);
  Mat eps_hat = eps_hat_fn(x_t, std::span<const int>(batch.t));
  if (eps_hat.rows() != batch.eps.rows() ||
      eps_hat.cols() != batch.eps.cols())
    throw std::invalid_argument("loss_simple: predictor output shape");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x_t.rows(); ++i) {
    double w = cfg.lambda_at(batch.t[i], ns.T);
    acc += w * (batch.eps.row(i) - eps_hat.row(i)).squaredNorm();
  }
  return acc / static_cast<double>(x_t.rows());
}

// Variational term of the hybrid loss: KL between the forward posterior and
// the model transition with interpolated log-variance
// Sigma_theta = exp(v log beta_t + (1 - v) log beta_tilde_t), v in [0, 1]
// componentwise. Only defined for t >= 2; the t = 1 term is folded into the
// simple loss.
inline double kl_vlb_term(const Vec& x0, const Vec& x_t, int t,
                          const Vec& eps_hat, const Vec& v,
                          const NoiseSchedule& ns) {
  if (t < 2) throw std::invalid_argument("kl_vlb_term requires t >= 2");
  check_step(t, ns);
  Posterior q = posterior_q(x_t, x0, t, ns);
  Vec mu_p = mu_theta(x_t, eps_hat, t, ns);
  double log_b = std::log(ns.beta_at(t));
  double log_bt = std::log(ns.beta_tilde_at(t));
  double var_q = q.beta_tilde;
  double kl = 0.0;
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    if (v[i] < 0.0 || v[i] > 1.0)
      throw std::invalid_argument("kl_vlb_term: v must lie in [0, 1]");
    double log_var_p = v[i] * log_b + (1.0 - v[i]) * log_bt;
    double var_p = std::exp(log_var_p);
    double dmu = q.mu_tilde[i] - mu_p[i];
    kl += 0.5 * (log_var_p - std::log(var_q) +
                 (var_q + dmu * dmu) / var_p - 1.0);
  }
  return kl;
}

// Gradient of kl_vlb_term with respect to (eps_hat, v); used by training.
inline void kl_vlb_grad(const Vec& x0, const Vec& x_t, int t,
                        const Vec& eps_hat, const Vec& v,
                        const NoiseSchedule& ns, Vec& d_eps, Vec& d_v) {
  Posterior q = posterior_q(x_t, x0, t, ns);
  Vec mu_p = mu_theta(x_t, eps_hat, t, ns);
  double log_b = std::log(ns.beta_at(t));
  double log_bt = std::log(ns.beta_tilde_at(t));
  double var_q = q.beta_tilde;
  double ab = ns.alpha_bar_at(t);
  // d mu_p / d eps_hat is a constant scalar.
  double dmu_deps =
      -ns.beta_at(t) / (std::sqrt(1.0 - ab) * std::sqrt(ns.alpha_at(t)));
  d_eps.resize(x0.size());
  d_v.resize(x0.size());
  for (Eigen::Index i = 0; i < x0.size(); ++i) {
    double log_var_p = v[i] * log_b + (1.0 - v[i]) * log_bt;
    double var_p = std::exp(log_var_p);
    double dmu = q.mu_tilde[i] - mu_p[i];
    double dkl_dmup = -dmu / var_p;
    d_eps[i] = dkl_dmup * dmu_deps;
    // d kl / d log_var_p, then chain to v.
    double dkl_dlogvar = 0.5 * (1.0 - (var_q + dmu * dmu) / var_p);
    d_v[i] = dkl_dlogvar * (log_b - log_bt);
  }
}

}  // namespace ase
