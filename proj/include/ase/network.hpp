#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ase/common.hpp"
#include "ase/rng.hpp"

namespace ase {

enum class Topology { kStack, kUSkip };

inline std::string topology_name(Topology t) {
  return t == Topology::kStack ? "stack" : "u_skip";
}

struct NetworkConfig {
  Topology topology = Topology::kStack;
  int n_blocks = 8;    // stack depth
  int n_encoder = 0;   // u_skip encoder depth (mirrored by the decoder)
  int n_decoder = 0;
  int width = 64;
  int in_dim = 2;
  int time_embed_dim = 16;
  bool learned_variance = false;

  int block_limit() const {
    return topology == Topology::kStack ? n_blocks : n_decoder;
  }
  int out_dim() const { return learned_variance ? 2 * in_dim : in_dim; }

  void validate() const {
    if (width < 1 || in_dim < 1 || time_embed_dim < 2 ||
        time_embed_dim % 2 != 0)
      throw ConfigError("network: width/in_dim >= 1, time_embed_dim even >= 2");
    if (topology == Topology::kStack) {
      if (n_blocks < 1) throw ConfigError("network: n_blocks must be >= 1");
    } else {
      if (n_encoder < 1 || n_decoder < 1)
        throw ConfigError("network: u_skip depths must be >= 1");
      if (n_encoder != n_decoder)
        throw ConfigError("network: u_skip requires n_encoder == n_decoder");
    }
  }
};

// Named parameter collection. Weights are (out x in); biases are rows (1 x n)
// so every tensor is a Mat and collection-wide updates stay uniform.
struct ParamSet {
  std::vector<Mat> tensors;

  static ParamSet zeros_like(const ParamSet& other) {
    ParamSet p;
    p.tensors.reserve(other.tensors.size());
    for (const Mat& m : other.tensors)
      p.tensors.emplace_back(Mat::Zero(m.rows(), m.cols()));
    return p;
  }

  void add_scaled(const ParamSet& g, double a) {
    for (std::size_t i = 0; i < tensors.size(); ++i)
      tensors[i] += a * g.tensors[i];
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const Mat& m : tensors) n += m.size();
    return n;
  }

  double max_abs_diff(const ParamSet& other) const {
    double d = 0.0;
    for (std::size_t i = 0; i < tensors.size(); ++i)
      d = std::max(d, (tensors[i] - other.tensors[i]).cwiseAbs().maxCoeff());
    return d;
  }
};

inline double silu(double a) { return a / (1.0 + std::exp(-a)); }
inline double silu_grad(double a) {
  double s = 1.0 / (1.0 + std::exp(-a));
  return s * (1.0 + a * (1.0 - s));
}

struct NetOutput {
  Mat eps;  // B x in_dim
  Mat v;    // B x in_dim when learned_variance, else empty
};

// Sinusoidal features of u = t/T at geometrically spaced frequencies.
inline Mat time_embedding(std::span<const int> t, int T, int embed_dim) {
  constexpr double kFreqMin = 1.0;
  constexpr double kFreqMax = 1000.0;
  int half = embed_dim / 2;
  Mat out(std::ssize(t), embed_dim);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double u = static_cast<double>(t[i]) / static_cast<double>(T);
    for (int k = 0; k < half; ++k) {
      double w = half == 1 ? kFreqMin
                           : kFreqMin * std::pow(kFreqMax / kFreqMin,
                                                 static_cast<double>(k) /
                                                     (half - 1));
      out(i, k) = std::sin(w * u);
      out(i, half + k) = std::cos(w * u);
    }
  }
  return out;
}

// Residual feedforward score network with a time-conditioning shift per
// block. Two topologies: a plain stack, and an encoder/mid/decoder stack
// with symmetric skip connections merged through a per-decoder linear map.
//
// Early exit: the stack runs blocks 1..S and then the head, dropping the
// tail; u_skip always runs encoder and mid in full, runs decoder blocks
// 1..S in full, and reduces decoder blocks S+1..n_decoder to their merge
// linear map alone.
class ScoreNetwork {
 public:
  struct FfnCache {
    Mat normed, act_in, act_out;
    Vec inv_std;
  };
  struct Workspace {
    Mat x, temb;
    int blocks = 0;
    std::vector<FfnCache> trunk;  // stack blocks, or u_skip encoder blocks
    FfnCache mid;                 // u_skip only
    std::vector<FfnCache> dec;    // u_skip: the S fully-run decoder blocks
    std::vector<Mat> merge_in;    // u_skip: concat inputs, one per decoder
    Mat h_final;
    Mat v_sig;
  };

  ScoreNetwork() = default;
  ScoreNetwork(const NetworkConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    build_layout();
    init_params(seed);
  }

  const NetworkConfig& config() const { return config_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  std::int64_t parameter_count() const { return params_.count(); }
  int block_limit() const { return config_.block_limit(); }
  int dim() const { return config_.in_dim; }

  NetOutput forward(const Mat& x, std::span<const int> t, int blocks,
                    Workspace* ws = nullptr) const {
    if (x.cols() != config_.in_dim || std::ssize(t) != x.rows())
      throw std::invalid_argument("forward: input shape mismatch");
    if (blocks < 1 || blocks > block_limit())
      throw std::invalid_argument("forward: retained blocks out of range");
    Mat temb = time_embedding(t, time_base_, config_.time_embed_dim);
    if (ws) {
      ws->x = x;
      ws->temb = temb;
      ws->blocks = blocks;
      ws->trunk.clear();
      ws->dec.clear();
      ws->merge_in.clear();
    }

    Mat h = (x * params_.tensors[0].transpose()).rowwise() +
            params_.tensors[1].row(0);

    if (config_.topology == Topology::kStack) {
      for (int l = 0; l < blocks; ++l)
        h = ffn_forward(block_base(l), h, temb,
                        ws ? &ws->trunk.emplace_back() : nullptr);
    } else {
      std::vector<Mat> skips(config_.n_encoder);
      for (int i = 0; i < config_.n_encoder; ++i) {
        h = ffn_forward(enc_base(i), h, temb,
                        ws ? &ws->trunk.emplace_back() : nullptr);
        skips[i] = h;
      }
      h = ffn_forward(mid_base(), h, temb, ws ? &ws->mid : nullptr);
      for (int j = 0; j < config_.n_decoder; ++j) {
        Mat cat(h.rows(), 2 * config_.width);
        cat << h, skips[config_.n_encoder - 1 - j];
        const Mat& mw = params_.tensors[dec_base(j)];
        const Mat& mb = params_.tensors[dec_base(j) + 1];
        Mat m = (cat * mw.transpose()).rowwise() + mb.row(0);
        if (ws) ws->merge_in.push_back(std::move(cat));
        if (j < blocks) {
          h = ffn_forward(dec_base(j) + 2, m, temb,
                          ws ? &ws->dec.emplace_back() : nullptr);
        } else {
          h = std::move(m);
        }
      }
    }

    Mat out = (h * params_.tensors[head_w_].transpose()).rowwise() +
              params_.tensors[head_w_ + 1].row(0);
    if (ws) ws->h_final = h;

    NetOutput result;
    result.eps = out.leftCols(config_.in_dim);
    if (config_.learned_variance) {
      Mat v_raw = out.rightCols(config_.in_dim);
      result.v = v_raw.unaryExpr(
          [](double a) { return 1.0 / (1.0 + std::exp(-a)); });
      if (ws) ws->v_sig = result.v;
    }
    return result;
  }

  // Reverse pass from output cotangents. Returns gradients in the parameter
  // layout; tensors of blocks never executed stay exactly zero.
  ParamSet backward(const Workspace& ws, const Mat& g_eps,
                    const Mat& g_v = Mat()) const {
    ParamSet grads = ParamSet::zeros_like(params_);
    Mat g_out(g_eps.rows(), config_.out_dim());
    g_out.leftCols(config_.in_dim) = g_eps;
    if (config_.learned_variance) {
      if (g_v.size() == 0) {
        g_out.rightCols(config_.in_dim).setZero();
      } else {
        // chain through the sigmoid that bounds v to (0, 1)
        g_out.rightCols(config_.in_dim) =
            g_v.cwiseProduct(ws.v_sig.cwiseProduct(
                Mat::Ones(ws.v_sig.rows(), ws.v_sig.cols()) - ws.v_sig));
      }
    }

    grads.tensors[head_w_] = g_out.transpose() * ws.h_final;
    grads.tensors[head_w_ + 1] = g_out.colwise().sum();
    Mat g_h = g_out * params_.tensors[head_w_];

    if (config_.topology == Topology::kStack) {
      for (int l = ws.blocks - 1; l >= 0; --l)
        g_h = ffn_backward(block_base(l), ws.trunk[l], ws.temb, g_h, grads);
    } else {
      std::vector<Mat> g_skip(config_.n_encoder);
      for (int j = config_.n_decoder - 1; j >= 0; --j) {
        Mat g_m = j < ws.blocks ? ffn_backward(dec_base(j) + 2, ws.dec[j],
                                               ws.temb, g_h, grads)
                                : std::move(g_h);
        grads.tensors[dec_base(j)] = g_m.transpose() * ws.merge_in[j];
        grads.tensors[dec_base(j) + 1] = g_m.colwise().sum();
        Mat g_cat = g_m * params_.tensors[dec_base(j)];
        g_h = g_cat.leftCols(config_.width);
        int enc_idx = config_.n_encoder - 1 - j;
        if (g_skip[enc_idx].size() == 0)
          g_skip[enc_idx] = g_cat.rightCols(config_.width);
        else
          g_skip[enc_idx] += g_cat.rightCols(config_.width);
      }
      g_h = ffn_backward(mid_base(), ws.mid, ws.temb, g_h, grads);
      for (int i = config_.n_encoder - 1; i >= 0; --i) {
        if (g_skip[i].size() != 0) g_h += g_skip[i];
        g_h = ffn_backward(enc_base(i), ws.trunk[i], ws.temb, g_h, grads);
      }
    }

    grads.tensors[0] = g_h.transpose() * ws.x;
    grads.tensors[1] = g_h.colwise().sum();
    return grads;
  }

  // Noise estimate for the samplers; single t shared by the whole batch.
  Mat estimate(const Mat& x, int t, int blocks) const {
    std::vector<int> ts(x.rows(), t);
    return forward(x, ts, blocks).eps;
  }

  // Multiply-accumulate count of one forward pass for a single sample.
  std::int64_t flop_count(int blocks) const {
    if (blocks < 1 || blocks > block_limit())
      throw std::invalid_argument("flop_count: retained blocks out of range");
    std::int64_t w = config_.width;
    std::int64_t block = 2 * w * w + w * config_.time_embed_dim;
    std::int64_t io = w * config_.in_dim + w * config_.out_dim();
    if (config_.topology == Topology::kStack)
      return io + static_cast<std::int64_t>(blocks) * block;
    std::int64_t merge = 2 * w * w;
    return io + (config_.n_encoder + 1) * block +
           config_.n_decoder * merge +
           static_cast<std::int64_t>(blocks) * block;
  }
  std::int64_t flops(int /*t*/, int blocks) const { return flop_count(blocks); }

  Topology topology() const { return config_.topology; }

  // Diffusion step count the time embedding normalizes against.
  void set_time_base(int T) { time_base_ = T; }
  int time_base() const { return time_base_; }

 private:
  static constexpr double kLnEps = 1e-6;

  void build_layout() {
    auto push = [&](const std::string& name, int rows, int cols) {
      names_.push_back(name);
      params_.tensors.emplace_back(Mat::Zero(rows, cols));
    };
    int w = config_.width, e = config_.time_embed_dim;
    push("embed.w", w, config_.in_dim);
    push("embed.b", 1, w);
    auto push_block = [&](const std::string& p) {
      push(p + ".w1", w, w);
      push(p + ".b1", 1, w);
      push(p + ".time", w, e);
      push(p + ".w2", w, w);
      push(p + ".b2", 1, w);
    };
    if (config_.topology == Topology::kStack) {
      for (int l = 0; l < config_.n_blocks; ++l)
        push_block("block" + std::to_string(l + 1));
    } else {
      for (int i = 0; i < config_.n_encoder; ++i)
        push_block("enc" + std::to_string(i + 1));
      push_block("mid");
      for (int j = 0; j < config_.n_decoder; ++j) {
        std::string p = "dec" + std::to_string(j + 1);
        push(p + ".merge.w", w, 2 * w);
        push(p + ".merge.b", 1, w);
        push_block(p);
      }
    }
    head_w_ = static_cast<int>(params_.tensors.size());
    push("head.w", config_.out_dim(), w);
    push("head.b", 1, config_.out_dim());
  }

  void init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, kStreamInit));
    for (std::size_t i = 0; i < params_.tensors.size(); ++i) {
      Mat& m = params_.tensors[i];
      bool is_bias = m.rows() == 1;
      bool is_head = static_cast<int>(i) >= head_w_;
      if (is_bias || is_head) continue;  // zeros
      double bound = std::sqrt(3.0 / static_cast<double>(m.cols()));
      rng.fill_uniform(m, -bound, bound);
    }
  }

  int block_base(int l) const { return 2 + l * 5; }
  int enc_base(int i) const { return 2 + i * 5; }
  int mid_base() const { return 2 + config_.n_encoder * 5; }
  int dec_base(int j) const {
    return 2 + (config_.n_encoder + 1) * 5 + j * 7;
  }

  Mat ffn_forward(int base, const Mat& h_in, const Mat& temb,
                  FfnCache* cache) const {
    const Mat& w1 = params_.tensors[base];
    const Mat& b1 = params_.tensors[base + 1];
    const Mat& tw = params_.tensors[base + 2];
    const Mat& w2 = params_.tensors[base + 3];
    const Mat& b2 = params_.tensors[base + 4];

    Mat normed(h_in.rows(), h_in.cols());
    Vec inv_std(h_in.rows());
    for (Eigen::Index r = 0; r < h_in.rows(); ++r) {
      double mean = h_in.row(r).mean();
      double var = (h_in.row(r).array() - mean).square().mean();
      double is = 1.0 / std::sqrt(var + kLnEps);
      normed.row(r) = (h_in.row(r).array() - mean) * is;
      inv_std[r] = is;
    }
    Mat act_in = ((normed * w1.transpose()).rowwise() + b1.row(0)) +
                 temb * tw.transpose();
    Mat act_out = act_in.unaryExpr([](double a) { return silu(a); });
    Mat out = h_in + ((act_out * w2.transpose()).rowwise() + b2.row(0));
    if (cache) {
      cache->normed = std::move(normed);
      cache->act_in = std::move(act_in);
      cache->act_out = std::move(act_out);
      cache->inv_std = std::move(inv_std);
    }
    return out;
  }

  Mat ffn_backward(int base, const FfnCache& c, const Mat& temb,
                   const Mat& g_out, ParamSet& grads) const {
    const Mat& w1 = params_.tensors[base];
    const Mat& w2 = params_.tensors[base + 3];

    grads.tensors[base + 3] += g_out.transpose() * c.act_out;
    grads.tensors[base + 4] += g_out.colwise().sum();
    Mat g_act = (g_out * w2).cwiseProduct(
        c.act_in.unaryExpr([](double a) { return silu_grad(a); }));
    grads.tensors[base] += g_act.transpose() * c.normed;
    grads.tensors[base + 1] += g_act.colwise().sum();
    grads.tensors[base + 2] += g_act.transpose() * temb;
    Mat g_n = g_act * w1;

    // layer-norm backward: dx = inv_std * (g - mean(g) - y * mean(g .* y))
    Mat g_in = g_out;  // residual path
    for (Eigen::Index r = 0; r < g_n.rows(); ++r) {
      double mg = g_n.row(r).mean();
      double mgy = g_n.row(r).cwiseProduct(c.normed.row(r)).mean();
      g_in.row(r) +=
          c.inv_std[r] *
          (g_n.row(r).array() - mg - c.normed.row(r).array() * mgy).matrix();
    }
    return g_in;
  }

  NetworkConfig config_;
  ParamSet params_;
  std::vector<std::string> names_;
  int head_w_ = 0;
  int time_base_ = 1000;
};

// Gradients of an arbitrary differentiable loss of the network outputs.
// The loss functor returns its value and the cotangents of (eps, v).
struct LossGrad {
  double value = 0.0;
  Mat d_eps;
  Mat d_v;
};

template <class LossFn>
ParamSet param_gradients(const ScoreNetwork& net, const Mat& x,
                         std::span<const int> t, int blocks, LossFn&& loss,
                         double* value_out = nullptr) {
  ScoreNetwork::Workspace ws;
  NetOutput out = net.forward(x, t, blocks, &ws);
  LossGrad lg = loss(out);
  if (value_out) *value_out = lg.value;
  return net.backward(ws, lg.d_eps, lg.d_v);
}

}  // namespace ase
