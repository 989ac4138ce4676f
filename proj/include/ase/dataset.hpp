#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/rng.hpp"

namespace ase {

enum class DatasetKind { kGaussian, kGmmRing, kCheckerboard, kTinyBlobs };

inline std::string dataset_kind_name(DatasetKind k) {
  switch (k) {
    case DatasetKind::kGaussian: return "gaussian";
    case DatasetKind::kGmmRing: return "gmm_ring";
    case DatasetKind::kCheckerboard: return "checkerboard";
    case DatasetKind::kTinyBlobs: return "tiny_blobs";
  }
  return "?";
}

// Toy data distributions with seeded sampling. Mixture components carry
// explicit positive weights that sum to one.
class Dataset {
 public:
  static Dataset gaussian(Vec mean, double std_dev) {
    Dataset d;
    d.kind_ = DatasetKind::kGaussian;
    d.dim_ = static_cast<int>(mean.size());
    d.means_.push_back(std::move(mean));
    d.stds_.push_back(std_dev);
    d.weights_ = {1.0};
    d.check();
    return d;
  }

  // `modes` Gaussians of width mode_std spaced evenly on a circle.
  static Dataset gmm_ring(int modes, double radius, double mode_std) {
    if (modes < 1) throw ConfigError("gmm_ring: modes must be >= 1");
    Dataset d;
    d.kind_ = DatasetKind::kGmmRing;
    d.dim_ = 2;
    for (int k = 0; k < modes; ++k) {
      double a = 2.0 * M_PI * k / modes;
      Vec m(2);
      m << radius * std::cos(a), radius * std::sin(a);
      d.means_.push_back(m);
      d.stds_.push_back(mode_std);
      d.weights_.push_back(1.0 / modes);
    }
    d.check();
    return d;
  }

  // Uniform over the black squares of a 4x4 board covering [-2, 2]^2.
  static Dataset checkerboard() {
    Dataset d;
    d.kind_ = DatasetKind::kCheckerboard;
    d.dim_ = 2;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        if ((i + j) % 2 == 0) {
          Vec m(2);
          m << -2.0 + i + 0.5, -2.0 + j + 0.5;  // square centers
          d.means_.push_back(m);
          d.stds_.push_back(0.5);  // half side length
          d.weights_.push_back(1.0 / 8.0);
        }
    d.check();
    return d;
  }

  static Dataset tiny_blobs(std::vector<Vec> means, double blob_std) {
    if (means.empty()) throw ConfigError("tiny_blobs: need >= 1 blob");
    Dataset d;
    d.kind_ = DatasetKind::kTinyBlobs;
    d.dim_ = static_cast<int>(means[0].size());
    for (const Vec& m : means) {
      if (m.size() != d.dim_)
        throw ConfigError("tiny_blobs: inconsistent blob dimensions");
      d.means_.push_back(m);
      d.stds_.push_back(blob_std);
      d.weights_.push_back(1.0 / means.size());
    }
    d.check();
    return d;
  }

  DatasetKind kind() const { return kind_; }
  int dim() const { return dim_; }
  const std::vector<double>& weights() const { return weights_; }

  Mat sample(int n, Rng& rng) const {
    Mat out(n, dim_);
    for (int i = 0; i < n; ++i) {
      std::size_t c = pick_component(rng);
      if (kind_ == DatasetKind::kCheckerboard) {
        for (int j = 0; j < dim_; ++j)
          out(i, j) = means_[c][j] + stds_[c] * (2.0 * rng.uniform() - 1.0);
      } else {
        for (int j = 0; j < dim_; ++j)
          out(i, j) = means_[c][j] + stds_[c] * rng.normal();
      }
    }
    return out;
  }

 private:
  void check() const {
    double sum = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    for (double w : weights_)
      if (!(w > 0.0)) throw ConfigError("dataset: weights must be positive");
    if (std::abs(sum - 1.0) > 1e-12)
      throw ConfigError("dataset: weights must sum to 1");
  }

  std::size_t pick_component(Rng& rng) const {
    if (weights_.size() == 1) return 0;
    double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      acc += weights_[i];
      if (u < acc) return i;
    }
    return weights_.size() - 1;
  }

  DatasetKind kind_ = DatasetKind::kGaussian;
  int dim_ = 1;
  std::vector<Vec> means_;
  std::vector<double> stds_;
  std::vector<double> weights_;
};

}  // namespace ase
