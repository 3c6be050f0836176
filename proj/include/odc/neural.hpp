#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "odc/param_space.hpp"
#include "odc/rng.hpp"

namespace odc {

// Dense feed-forward net: tanh on hidden layers, identity on the output
// layer. Batches are row-major (one sample per row).
struct DenseNet {
  std::vector<Mat> W;  // W[l] has shape (out_l, in_l)
  std::vector<Vec> b;

  int input_size() const { return static_cast<int>(W.front().cols()); }
  int output_size() const { return static_cast<int>(W.back().rows()); }
  int n_layers() const { return static_cast<int>(W.size()); }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < W.size(); ++l) n += static_cast<std::size_t>(W[l].size() + b[l].size());
    return n;
  }

  static DenseNet xavier(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw std::invalid_argument("DenseNet: need at least input and output sizes");
    DenseNet net;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      int in = sizes[l], out = sizes[l + 1];
      double limit = std::sqrt(6.0 / (in + out));
      Mat w(out, in);
      for (int i = 0; i < out; ++i)
        for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-limit, limit);
      net.W.push_back(std::move(w));
      net.b.push_back(Vec::Zero(out));
    }
    return net;
  }

  static DenseNet zeros(const std::vector<int>& sizes) {
    DenseNet net;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      net.W.push_back(Mat::Zero(sizes[l + 1], sizes[l]));
      net.b.push_back(Vec::Zero(sizes[l + 1]));
    }
    return net;
  }
};

// Cached activations of a batched forward pass; acts[0] is the input batch,
// acts[l+1] the post-activation output of layer l.
struct NetCache {
  std::vector<Mat> acts;
};

struct NetGrads {
  std::vector<Mat> dW;
  std::vector<Vec> db;

  static NetGrads zeros_like(const DenseNet& net) {
    NetGrads g;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
      g.dW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
      g.db.push_back(Vec::Zero(net.b[l].size()));
    }
    return g;
  }

  void setZero() {
    for (auto& m : dW) m.setZero();
    for (auto& v : db) v.setZero();
  }
};

inline Mat forward_batch(const DenseNet& net, const Mat& X, NetCache* cache = nullptr) {
  if (X.cols() != net.input_size())
    throw std::invalid_argument("DenseNet forward: input width mismatch");
  if (cache) {
    cache->acts.clear();
    cache->acts.push_back(X);
  }
  Mat a = X;
  for (int l = 0; l < net.n_layers(); ++l) {
    Mat z = a * net.W[l].transpose();
    z.rowwise() += net.b[l].transpose();
    a = (l + 1 < net.n_layers()) ? z.array().tanh().matrix() : z;
    if (cache) cache->acts.push_back(a);
  }
  return a;
}

inline Vec forward(const DenseNet& net, const Vec& x) {
  return forward_batch(net, x.transpose()).row(0);
}

// Reverse-mode pass. Accumulates parameter gradients into `grads` and
// returns the gradient w.r.t. the input batch.
inline Mat backward_batch(const DenseNet& net, const NetCache& cache, const Mat& dY, NetGrads& grads) {
  if (cache.acts.size() != static_cast<std::size_t>(net.n_layers()) + 1)
    throw std::invalid_argument("DenseNet backward: cache does not match net");
  Mat delta = dY;
  for (int l = net.n_layers() - 1; l >= 0; --l) {
    const Mat& a_out = cache.acts[static_cast<std::size_t>(l) + 1];
    if (l + 1 < net.n_layers())
      delta = (delta.array() * (1.0 - a_out.array().square())).matrix();
    grads.dW[l].noalias() += delta.transpose() * cache.acts[l];
    grads.db[l] += delta.colwise().sum().transpose();
    delta = delta * net.W[l];
  }
  return delta;  // gradient w.r.t. the input batch
}

// Single-sample convenience wrapper: exact gradients of the forward map.
inline NetGrads backward(const DenseNet& net, const Vec& x, const Vec& upstream, Vec* input_grad = nullptr) {
  NetCache cache;
  forward_batch(net, x.transpose(), &cache);
  NetGrads grads = NetGrads::zeros_like(net);
  Mat dx = backward_batch(net, cache, upstream.transpose(), grads);
  if (input_grad) *input_grad = dx.row(0);
  return grads;
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-tensor bias-corrected Adam update; `t` is the 1-based step counter.
template <class Tensor>
void adam_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, long t, const AdamConfig& cfg) {
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  v = (cfg.beta2 * v.array() + (1.0 - cfg.beta2) * g.array().square()).matrix();
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  p.array() -= cfg.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg.eps);
}

// Adam state for one DenseNet; accumulator shapes mirror the parameters.
struct AdamState {
  std::vector<Mat> mW, vW;
  std::vector<Vec> mb, vb;
  long t = 0;
  AdamConfig cfg;

  static AdamState zeros_like(const DenseNet& net, const AdamConfig& cfg = {}) {
    AdamState s;
    s.cfg = cfg;
    for (std::size_t l = 0; l < net.W.size(); ++l) {
      s.mW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
      s.vW.push_back(Mat::Zero(net.W[l].rows(), net.W[l].cols()));
      s.mb.push_back(Vec::Zero(net.b[l].size()));
      s.vb.push_back(Vec::Zero(net.b[l].size()));
    }
    return s;
  }
};

// One optimizer step over every parameter of `net`. The step counter lives
// in the state; callers advance it exactly once per batch.
inline void adam_step(DenseNet& net, const NetGrads& grads, AdamState& state) {
  ++state.t;
  for (int l = 0; l < net.n_layers(); ++l) {
    adam_update(net.W[l], grads.dW[l], state.mW[l], state.vW[l], state.t, state.cfg);
    adam_update(net.b[l], grads.db[l], state.mb[l], state.vb[l], state.t, state.cfg);
  }
}

}  // namespace odc
