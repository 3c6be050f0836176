#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "odc/neural.hpp"
#include "odc/param_space.hpp"
#include "odc/rng.hpp"
#include "odc/spline.hpp"

namespace odc {

struct FlowConfig {
  int n_layers = 6;
  int bins = 8;
  double tail = 3.0;
  double min_bin = 1e-3;
  double min_deriv = 1e-3;
  std::vector<int> hidden = {64, 64};

  SplineDecodeConfig spline_config() const { return {bins, tail, min_bin, min_deriv}; }
  int params_per_dim() const { return 3 * bins + 1; }
};

// One coupling layer: the identity half (plus context) conditions the
// splines applied to the transformed half.
struct CouplingLayer {
  std::vector<int> transformed;
  std::vector<int> identity;
  DenseNet conditioner;
};

inline double gaussian_log_pdf_std(const Vec& z) {
  constexpr double log_2pi = 1.8378770664093454835606594728112;
  return -0.5 * z.squaredNorm() - 0.5 * log_2pi * static_cast<double>(z.size());
}

// Conditional normalizing flow of rational-quadratic-spline type over the
// predicted dims of a ParamSpace. Layers alternate complementary halves,
// rotating which dims are transformed. A trained flow is immutable; log_prob
// and sample are pure given an rng.
struct ConditionalFlow {
  ParamSpace space;
  int ndim = 0;
  int ctx_dim = 0;
  FlowConfig cfg;
  std::vector<CouplingLayer> layers;

  ConditionalFlow() = default;

  // Conditioners start with a zeroed output layer, so the flow is the
  // identity transform at initialization.
  ConditionalFlow(ParamSpace sp, int context_dim, FlowConfig c, Rng& rng)
      : space(std::move(sp)), ctx_dim(context_dim), cfg(std::move(c)) {
    ndim = space.n_predicted();
    if (ndim < 2) throw std::invalid_argument("ConditionalFlow: need at least 2 predicted dims");
    if (ctx_dim < 1) throw std::invalid_argument("ConditionalFlow: context dim must be >= 1");
    const int half = ndim / 2;
    for (int l = 0; l < cfg.n_layers; ++l) {
      CouplingLayer layer;
      const int rot = l / 2;
      std::vector<bool> in_base(ndim, false);
      for (int j = 0; j < half; ++j) in_base[(rot + j) % ndim] = true;
      const bool use_base = (l % 2 == 0);
      for (int i = 0; i < ndim; ++i) {
        if (in_base[i] == use_base)
          layer.transformed.push_back(i);
        else
          layer.identity.push_back(i);
      }
      std::vector<int> sizes;
      sizes.push_back(static_cast<int>(layer.identity.size()) + ctx_dim);
      for (int hdim : cfg.hidden) sizes.push_back(hdim);
      sizes.push_back(static_cast<int>(layer.transformed.size()) * cfg.params_per_dim());
      layer.conditioner = DenseNet::xavier(sizes, rng);
      layer.conditioner.W.back().setZero();
      layer.conditioner.b.back().setZero();
      layers.push_back(std::move(layer));
    }
  }

  std::size_t n_params() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.conditioner.n_params();
    return n;
  }

  // ---- single-point paths -------------------------------------------------

  // Model-coordinate log density (no box-standardization constant).
  double log_prob_model(const Vec& u, const Vec& ctx) const {
    check_inputs(u, ctx);
    Vec v = u;
    double logdet = 0.0;
    const auto scfg = cfg.spline_config();
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      const CouplingLayer& layer = layers[l];
      Vec raw = forward(layer.conditioner, cond_input(layer, v, ctx));
      for (std::size_t j = 0; j < layer.transformed.size(); ++j) {
        RqSpline sp = decode_spline_params(raw.segment(static_cast<Eigen::Index>(j) * cfg.params_per_dim(),
                                                       cfg.params_per_dim()), scfg);
        SplineResult r = spline_inverse(sp, v[layer.transformed[j]]);
        v[layer.transformed[j]] = r.value;
        logdet += r.logdet;
      }
    }
    return gaussian_log_pdf_std(v) + logdet;
  }

  // Physical-coordinate log density over the predicted dims.
  double log_prob(const Vec& theta, const Vec& ctx) const {
    return log_prob_model(to_model(space, theta), ctx) + space.log_jacobian_to_model();
  }

  // Push one base draw through the forward layers (model coordinates).
  Vec forward_model(const Vec& z, const Vec& ctx, double* logdet = nullptr) const {
    check_inputs(z, ctx);
    Vec v = z;
    double ld = 0.0;
    const auto scfg = cfg.spline_config();
    for (const CouplingLayer& layer : layers) {
      Vec raw = forward(layer.conditioner, cond_input(layer, v, ctx));
      for (std::size_t j = 0; j < layer.transformed.size(); ++j) {
        RqSpline sp = decode_spline_params(raw.segment(static_cast<Eigen::Index>(j) * cfg.params_per_dim(),
                                                       cfg.params_per_dim()), scfg);
        SplineResult r = spline_forward(sp, v[layer.transformed[j]]);
        v[layer.transformed[j]] = r.value;
        ld += r.logdet;
      }
    }
    if (logdet) *logdet = ld;
    return v;
  }

  Vec sample_one_model(const Vec& ctx, Rng& rng) const {
    Vec z(ndim);
    for (int i = 0; i < ndim; ++i) z[i] = rng.normal();
    return forward_model(z, ctx);
  }

  // Posterior samples in physical units; deterministic per rng stream.
  std::vector<Vec> sample(const Vec& ctx, std::size_t n, Rng& rng) const {
    if (n < 1) throw std::invalid_argument("ConditionalFlow::sample: n must be >= 1");
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(from_model(space, sample_one_model(ctx, rng)));
    return out;
  }

  // ---- batched inverse path (training and bulk evaluation) ----------------

  struct LayerCache {
    NetCache net;
    Mat raw;
    std::vector<RqSpline> splines;        // n * transformed.size()
    std::vector<SplineDecodeCache> dec;
    std::vector<detail::BinEval> bins;
  };

  struct BatchCache {
    std::vector<LayerCache> layer;  // indexed by layer
    Mat z;                          // base-space points after full inverse
  };

  // Row-wise model-space log densities for a batch; optionally fills the
  // cache needed by the gradient pass.
  Vec log_prob_model_batch(const Mat& U, const Mat& C, BatchCache* cache = nullptr) const {
    if (U.rows() != C.rows()) throw std::invalid_argument("flow batch: row count mismatch");
    if (U.cols() != ndim || C.cols() != ctx_dim) throw std::invalid_argument("flow batch: width mismatch");
    const Eigen::Index n = U.rows();
    const auto scfg = cfg.spline_config();
    const int per = cfg.params_per_dim();
    if (cache) cache->layer.resize(layers.size());

    Mat V = U;
    Vec logdet = Vec::Zero(n);
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      const CouplingLayer& layer = layers[l];
      const std::size_t nt = layer.transformed.size();
      Mat X(n, static_cast<Eigen::Index>(layer.identity.size()) + ctx_dim);
      for (std::size_t j = 0; j < layer.identity.size(); ++j)
        X.col(static_cast<Eigen::Index>(j)) = V.col(layer.identity[j]);
      X.rightCols(ctx_dim) = C;

      LayerCache* lc = cache ? &cache->layer[l] : nullptr;
      Mat raw = forward_batch(layer.conditioner, X, lc ? &lc->net : nullptr);
      if (lc) {
        lc->splines.resize(static_cast<std::size_t>(n) * nt);
        lc->dec.resize(static_cast<std::size_t>(n) * nt);
        lc->bins.resize(static_cast<std::size_t>(n) * nt);
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < nt; ++j) {
          Vec raw_ij = raw.row(i).segment(static_cast<Eigen::Index>(j) * per, per);
          std::size_t cidx = static_cast<std::size_t>(i) * nt + j;
          RqSpline sp = decode_spline_params(raw_ij, scfg, lc ? &lc->dec[cidx] : nullptr);
          SplineResult r = spline_inverse(sp, V(i, layer.transformed[j]), lc ? &lc->bins[cidx] : nullptr);
          V(i, layer.transformed[j]) = r.value;
          logdet[i] += r.logdet;
          if (lc) lc->splines[cidx] = std::move(sp);
        }
      }
      if (lc) lc->raw = std::move(raw);
    }
    constexpr double log_2pi = 1.8378770664093454835606594728112;
    Vec lp = (-0.5 * V.rowwise().squaredNorm().array() - 0.5 * log_2pi * ndim + logdet.array()).matrix();
    if (cache) cache->z = std::move(V);
    return lp;
  }

  void check_inputs(const Vec& u, const Vec& ctx) const {
    if (u.size() != ndim) throw std::invalid_argument("flow: point has wrong dimension");
    if (ctx.size() != ctx_dim) throw std::invalid_argument("flow: context has wrong dimension");
    if (!u.allFinite() || !ctx.allFinite()) throw std::invalid_argument("flow: non-finite input");
  }

  static Vec cond_input(const CouplingLayer& layer, const Vec& v, const Vec& ctx) {
    Vec x(static_cast<Eigen::Index>(layer.identity.size()) + ctx.size());
    for (std::size_t j = 0; j < layer.identity.size(); ++j)
      x[static_cast<Eigen::Index>(j)] = v[layer.identity[j]];
    x.tail(ctx.size()) = ctx;
    return x;
  }
};

// Gradients for every conditioner parameter of a flow.
struct FlowGrads {
  std::vector<NetGrads> per_layer;

  static FlowGrads zeros_like(const ConditionalFlow& flow) {
    FlowGrads g;
    for (const auto& l : flow.layers) g.per_layer.push_back(NetGrads::zeros_like(l.conditioner));
    return g;
  }

  void setZero() {
    for (auto& g : per_layer) g.setZero();
  }
};

// Mean negative log density (model coordinates) over a batch, with exact
// reverse-mode gradients accumulated into `grads`.
inline double flow_nll_grad(const ConditionalFlow& flow, const Mat& U, const Mat& C, FlowGrads& grads) {
  const Eigen::Index n = U.rows();
  ConditionalFlow::BatchCache cache;
  Vec lp = flow.log_prob_model_batch(U, C, &cache);
  const double loss = -lp.mean();

  const int per = flow.cfg.params_per_dim();
  const auto scfg = flow.cfg.spline_config();
  const double inv_n = 1.0 / static_cast<double>(n);

  // d(loss)/dz = z / n
  Mat dV = cache.z * inv_n;
  Vec draw_tmp(per);
  SplineGrads sg = SplineGrads::zeros(flow.cfg.bins);

  for (std::size_t l = 0; l < flow.layers.size(); ++l) {
    const CouplingLayer& layer = flow.layers[l];
    ConditionalFlow::LayerCache& lc = cache.layer[l];
    const std::size_t nt = layer.transformed.size();
    Mat dRaw = Mat::Zero(n, static_cast<Eigen::Index>(nt) * per);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < nt; ++j) {
        std::size_t cidx = static_cast<std::size_t>(i) * nt + j;
        sg.dxs.setZero();
        sg.dys.setZero();
        sg.dd.setZero();
        double gx = dV(i, layer.transformed[j]);
        // each logdet term enters the loss as -logdet/n
        double dy = spline_inverse_backward(lc.splines[cidx], lc.bins[cidx], gx, -inv_n, sg);
        draw_tmp.setZero();
        decode_spline_backward(scfg, lc.dec[cidx], sg, draw_tmp);
        dRaw.row(i).segment(static_cast<Eigen::Index>(j) * per, per) = draw_tmp.transpose();
        dV(i, layer.transformed[j]) = dy;
      }
    }
    Mat dX = backward_batch(layer.conditioner, lc.net, dRaw, grads.per_layer[l]);
    for (std::size_t j = 0; j < layer.identity.size(); ++j)
      dV.col(layer.identity[j]) += dX.col(static_cast<Eigen::Index>(j));
  }
  return loss;
}

}  // namespace odc
