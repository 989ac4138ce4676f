#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/rng.hpp"
#include "ase/samplers.hpp"

namespace ase {

namespace detail {

// Exact squared 2-Wasserstein distance between two 1-D empirical
// distributions: integral of the squared quantile-function gap, which
// reduces to the sorted-match formula for equal sample counts.
inline double wasserstein2_sq_1d(std::vector<double> a,
                                 std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      acc += (a[i] - b[i]) * (a[i] - b[i]);
    return acc / static_cast<double>(n);
  }
  double acc = 0.0, q = 0.0;
  std::size_t ia = 0, ib = 0;
  while (ia < n && ib < m) {
    double qa = static_cast<double>(ia + 1) / n;
    double qb = static_cast<double>(ib + 1) / m;
    double q_next = std::min(qa, qb);
    double diff = a[ia] - b[ib];
    acc += (q_next - q) * diff * diff;
    q = q_next;
    if (qa <= qb) ++ia;
    if (qb <= qa) ++ib;
  }
  return acc;
}

}  // namespace detail

// Sliced 2-Wasserstein distance: root mean of squared 1-D distances over
// seeded random unit projection directions.
inline double sliced_wasserstein(const Mat& a, const Mat& b, int n_proj = 256,
                                 std::uint64_t seed = 0) {
  if (a.rows() == 0 || b.rows() == 0)
    throw std::invalid_argument("sliced_wasserstein: empty sample set");
  if (a.cols() != b.cols())
    throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
  if (n_proj < 1)
    throw std::invalid_argument("sliced_wasserstein: n_proj must be >= 1");
  const int d = static_cast<int>(a.cols());
  Rng rng(derive_seed(seed, kStreamProjection));
  double acc = 0.0;
  std::vector<double> pa(a.rows()), pb(b.rows());
  for (int p = 0; p < n_proj; ++p) {
    Vec dir(d);
    double norm = 0.0;
    do {
      for (int j = 0; j < d; ++j) dir[j] = rng.normal();
      norm = dir.norm();
    } while (norm == 0.0);
    dir /= norm;
    for (Eigen::Index i = 0; i < a.rows(); ++i) pa[i] = a.row(i).dot(dir);
    for (Eigen::Index i = 0; i < b.rows(); ++i) pb[i] = b.row(i).dot(dir);
    acc += detail::wasserstein2_sq_1d(pa, pb);
  }
  return std::sqrt(acc / n_proj);
}

struct FrechetResult {
  double value = 0.0;
  bool ridged = false;  // covariance regularized before the square root
};

// Frechet distance between the Gaussians N(mu1, S1) and N(mu2, S2):
// |mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the cross term
// computed through the symmetric form (S1^{1/2} S2 S1^{1/2})^{1/2}.
inline FrechetResult frechet_from_moments(const Vec& mu1, const Mat& s1,
                                          const Vec& mu2, const Mat& s2) {
  FrechetResult result;
  Mat a = s1, b = s2;
  constexpr double kRidge = 1e-8;
  auto min_eig = [](const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(m);
    return es.eigenvalues().minCoeff();
  };
  if (min_eig(a) < kRidge || min_eig(b) < kRidge) {
    a += kRidge * Mat::Identity(a.rows(), a.cols());
    b += kRidge * Mat::Identity(b.rows(), b.cols());
    result.ridged = true;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es_a(a);
  Mat sqrt_a = es_a.operatorSqrt();
  Mat inner = sqrt_a * b * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es_inner(inner);
  double tr_cross = 0.0;
  for (Eigen::Index i = 0; i < inner.rows(); ++i)
    tr_cross += std::sqrt(std::max(0.0, es_inner.eigenvalues()[i]));
  result.value =
      (mu1 - mu2).squaredNorm() + a.trace() + b.trace() - 2.0 * tr_cross;
  return result;
}

inline void fit_gaussian(const Mat& x, Vec& mu, Mat& cov) {
  mu = x.colwise().mean().transpose();
  Mat centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered /
        static_cast<double>(x.rows() - 1);
}

// Moment-matched Frechet distance between two sample sets.
inline FrechetResult gaussian_frechet(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("gaussian_frechet: dimension mismatch");
  if (a.rows() <= a.cols() || b.rows() <= b.cols())
    throw std::invalid_argument(
        "gaussian_frechet: need more samples than dimensions");
  Vec mu1, mu2;
  Mat s1, s2;
  fit_gaussian(a, mu1, s1);
  fit_gaussian(b, mu2, s2);
  return frechet_from_moments(mu1, s1, mu2, s2);
}

struct MetricSpec {
  int n_proj = 256;
  int sample_size = 8192;
};

struct MetricsReport {
  std::string label;
  double sliced_wasserstein = 0.0;
  double gaussian_frechet = 0.0;
  bool frechet_ridged = false;
  RunStats runstats;
  double predicted_accel = 0.0;
  double flop_accel = 0.0;
  double measured_accel = 0.0;  // wall-clock, lives with the timing fields
  std::uint64_t seed = 0;
  std::string config_digest;
};

}  // namespace ase
