#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "odc/param_space.hpp"

namespace odc {

// Monotone rational-quadratic spline on [-B, B], identity outside. Knots
// strictly increase and span the interval in both coordinates; derivatives
// are strictly positive, with implied unit slope at the two boundary knots
// matching the linear tails.
struct RqSpline {
  Vec xs;   // K+1 knot x positions
  Vec ys;   // K+1 knot y positions
  Vec d;    // K+1 knot derivatives, > 0
  double tail = 3.0;

  int n_bins() const { return static_cast<int>(xs.size()) - 1; }

  static RqSpline identity(int bins, double tail) {
    RqSpline s;
    s.tail = tail;
    s.xs = Vec::LinSpaced(bins + 1, -tail, tail);
    s.ys = s.xs;
    s.d = Vec::Ones(bins + 1);
    return s;
  }

  bool valid() const {
    if (xs.size() < 2 || xs.size() != ys.size() || xs.size() != d.size()) return false;
    for (int i = 0; i + 1 < xs.size(); ++i)
      if (!(xs[i] < xs[i + 1]) || !(ys[i] < ys[i + 1])) return false;
    for (int i = 0; i < d.size(); ++i)
      if (!(d[i] > 0.0) || !std::isfinite(d[i])) return false;
    return std::abs(xs[0] + tail) < 1e-9 && std::abs(xs[xs.size() - 1] - tail) < 1e-9 &&
           std::abs(ys[0] + tail) < 1e-9 && std::abs(ys[ys.size() - 1] - tail) < 1e-9;
  }
};

namespace detail {

// Quantities shared by the rational-quadratic bin formulas and their
// derivatives; everything is evaluated at one point inside one bin.
struct BinEval {
  int k = 0;          // bin index
  bool in_range = false;
  double xi = 0, w = 0, h = 0, s = 0, d0 = 0, d1 = 0;
  double A = 0, D = 0, G = 0;
  double sprime = 1;  // dy/dx at the point
};

inline void fill_bin_terms(BinEval& e) {
  const double xi = e.xi, s = e.s, d0 = e.d0, d1 = e.d1;
  const double omx = 1.0 - xi;
  const double E = d0 + d1 - 2.0 * s;
  e.A = s * xi * xi + d0 * xi * omx;
  e.D = s + E * xi * omx;
  e.G = d1 * xi * xi + 2.0 * s * xi * omx + d0 * omx * omx;
  e.sprime = s * s * e.G / (e.D * e.D);
}

inline int find_bin(const Vec& knots, double v) {
  // largest k with knots[k] <= v, clamped to a valid bin
  int lo = 0, hi = static_cast<int>(knots.size()) - 2;
  while (lo < hi) {
    int mid = (lo + hi + 1) / 2;
    if (knots[mid] <= v)
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

}  // namespace detail

struct SplineResult {
  double value = 0;
  double logdet = 0;
};

// y = s(x), logdet = log s'(x); identity with zero logdet outside [-B, B].
inline SplineResult spline_forward(const RqSpline& sp, double x, detail::BinEval* cache = nullptr) {
  if (x <= -sp.tail || x >= sp.tail) {
    if (cache) *cache = detail::BinEval{};
    return {x, 0.0};
  }
  detail::BinEval e;
  e.in_range = true;
  e.k = detail::find_bin(sp.xs, x);
  e.w = sp.xs[e.k + 1] - sp.xs[e.k];
  e.h = sp.ys[e.k + 1] - sp.ys[e.k];
  e.s = e.h / e.w;
  e.d0 = sp.d[e.k];
  e.d1 = sp.d[e.k + 1];
  e.xi = std::clamp((x - sp.xs[e.k]) / e.w, 0.0, 1.0);
  detail::fill_bin_terms(e);
  double y = sp.ys[e.k] + e.h * e.A / e.D;
  if (cache) *cache = e;
  return {y, std::log(e.sprime)};
}

// Closed-form inverse via the quadratic root of the bin; logdet is the
// inverse-direction value -log s'(x).
inline SplineResult spline_inverse(const RqSpline& sp, double y, detail::BinEval* cache = nullptr) {
  if (y <= -sp.tail || y >= sp.tail) {
    if (cache) *cache = detail::BinEval{};
    return {y, 0.0};
  }
  detail::BinEval e;
  e.in_range = true;
  e.k = detail::find_bin(sp.ys, y);
  e.w = sp.xs[e.k + 1] - sp.xs[e.k];
  e.h = sp.ys[e.k + 1] - sp.ys[e.k];
  e.s = e.h / e.w;
  e.d0 = sp.d[e.k];
  e.d1 = sp.d[e.k + 1];
  const double r = y - sp.ys[e.k];
  const double E = e.d0 + e.d1 - 2.0 * e.s;
  const double a = e.h * (e.s - e.d0) + r * E;
  const double b = e.h * e.d0 - r * E;
  const double c = -e.s * r;
  const double disc = std::max(b * b - 4.0 * a * c, 0.0);
  e.xi = std::clamp(2.0 * c / (-b - std::sqrt(disc)), 0.0, 1.0);
  detail::fill_bin_terms(e);
  double x = sp.xs[e.k] + e.xi * e.w;
  if (cache) *cache = e;
  return {x, -std::log(e.sprime)};
}

// Gradients w.r.t. the knot arrays, same shapes as the spline fields.
struct SplineGrads {
  Vec dxs, dys, dd;

  static SplineGrads zeros(int bins) {
    SplineGrads g;
    g.dxs = Vec::Zero(bins + 1);
    g.dys = Vec::Zero(bins + 1);
    g.dd = Vec::Zero(bins + 1);
    return g;
  }
};

// Reverse-mode step through the inverse transform y -> (x, logdet). Takes
// the cache of spline_inverse, upstream gradients w.r.t. x and logdet, adds
// knot gradients into `g`, and returns the gradient w.r.t. y.
//
// Within the bin, with xi the relative position and s = h/w, the forward
// map and its log-derivative L = log s'(x) have closed-form partials; the
// inverse partials follow from implicit differentiation of s(x; knots) = y.
inline double spline_inverse_backward(const RqSpline& sp, const detail::BinEval& e,
                                      double gx, double gld, SplineGrads& g) {
  if (!e.in_range) return gx;  // identity tail

  const double xi = e.xi, omx = 1.0 - e.xi;
  const double w = e.w, h = e.h, s = e.s, d0 = e.d0, d1 = e.d1;
  const double A = e.A, D = e.D, G = e.G;
  const double E = d0 + d1 - 2.0 * s;
  const double D2 = D * D;
  const double xiomx = xi * omx;
  const double Q = A / D;

  // partials of y at fixed x, treating (xi, s) as intermediates
  const double Py_xi = h * s * G / D2;
  const double Py_s = h * (xi * xi * D - A * (1.0 - 2.0 * xiomx)) / D2;
  const double Py_d0 = h * xiomx * (D - A) / D2;
  const double Py_d1 = -h * A * xiomx / D2;

  // partials of L = log s'(x) = 2 log s + log G - 2 log D
  const double Gp = 2.0 * (d1 * xi + s * (1.0 - 2.0 * xi) - d0 * omx);
  const double Dp = E * (1.0 - 2.0 * xi);
  const double PL_xi = Gp / G - 2.0 * Dp / D;
  const double PL_s = 2.0 / s + 2.0 * xiomx / G - 2.0 * (1.0 - 2.0 * xiomx) / D;
  const double PL_d0 = omx * omx / G - 2.0 * xiomx / D;
  const double PL_d1 = xi * xi / G - 2.0 * xiomx / D;

  // totals w.r.t. the bin knots (y and L as functions of x and the knots)
  const double Yxk = Py_xi * (xi - 1.0) / w + Py_s * s / w;
  const double Yxk1 = -Py_xi * xi / w - Py_s * s / w;
  const double Yyk = 1.0 - Q - Py_s / w;
  const double Yyk1 = Q + Py_s / w;

  const double Lx = PL_xi / w;
  const double Lxk = PL_xi * (xi - 1.0) / w + PL_s * s / w;
  const double Lxk1 = -PL_xi * xi / w - PL_s * s / w;
  const double Lyk = -PL_s / w;
  const double Lyk1 = PL_s / w;

  // implicit function theorem: x(y), logdet = -L(x(y); knots)
  const double q = (gx - gld * Lx) / e.sprime;
  // dy contribution: dx/dy = 1/s', dld/dy = -Lx/s'
  const double dy = q;
  // knot contributions: dx/dphi = -Y_phi/s', dld/dphi = -(L_phi - Lx*Y_phi/s')
  g.dxs[e.k] += -q * Yxk - gld * Lxk;
  g.dxs[e.k + 1] += -q * Yxk1 - gld * Lxk1;
  g.dys[e.k] += -q * Yyk - gld * Lyk;
  g.dys[e.k + 1] += -q * Yyk1 - gld * Lyk1;
  g.dd[e.k] += -q * Py_d0 - gld * PL_d0;
  g.dd[e.k + 1] += -q * Py_d1 - gld * PL_d1;
  return dy;
}

struct SplineDecodeConfig {
  int bins = 8;
  double tail = 3.0;
  double min_bin = 1e-3;    // floor on normalized bin width/height
  double min_deriv = 1e-3;  // floor on knot derivatives
};

namespace detail {

inline double softplus(double z) {
  if (z > 20.0) return z;
  if (z < -20.0) return std::exp(z);
  return std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0) {
    double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(z);
  return e / (1.0 + e);
}

// shift so that softplus(0 + shift) + min_deriv == 1
inline double deriv_shift(double min_deriv) {
  return std::log(std::expm1(1.0 - min_deriv));
}

}  // namespace detail

// Softmax probabilities and sigmoid factors kept for the backward pass.
struct SplineDecodeCache {
  Vec pw, ph;    // softmax outputs for widths and heights (K)
  Vec dsig;      // sigmoid(raw_d + shift) per derivative (K+1)
};

// Raw conditioner output (3K+1 values) -> valid spline. Zero input decodes
// to the identity spline.
inline RqSpline decode_spline_params(const Eigen::Ref<const Vec>& raw, const SplineDecodeConfig& cfg,
                                     SplineDecodeCache* cache = nullptr) {
  const int K = cfg.bins;
  if (raw.size() != 3 * K + 1)
    throw std::invalid_argument("decode_spline_params: raw length must be 3K+1");

  auto softmax = [](const Eigen::Ref<const Vec>& z) {
    Vec p = (z.array() - z.maxCoeff()).exp();
    p /= p.sum();
    return p;
  };

  Vec pw = softmax(raw.head(K));
  Vec ph = softmax(raw.segment(K, K));
  const double scale = 1.0 - cfg.min_bin * K;

  RqSpline sp;
  sp.tail = cfg.tail;
  sp.xs = Vec(K + 1);
  sp.ys = Vec(K + 1);
  sp.d = Vec(K + 1);
  sp.xs[0] = -cfg.tail;
  sp.ys[0] = -cfg.tail;
  double cx = 0.0, cy = 0.0;
  for (int i = 0; i < K; ++i) {
    cx += cfg.min_bin + scale * pw[i];
    cy += cfg.min_bin + scale * ph[i];
    sp.xs[i + 1] = -cfg.tail + 2.0 * cfg.tail * cx;
    sp.ys[i + 1] = -cfg.tail + 2.0 * cfg.tail * cy;
  }
  sp.xs[K] = cfg.tail;  // cumulative sum is exactly 1 analytically
  sp.ys[K] = cfg.tail;

  const double shift = detail::deriv_shift(cfg.min_deriv);
  Vec dsig(K + 1);
  for (int i = 0; i <= K; ++i) {
    double z = raw[2 * K + i] + shift;
    sp.d[i] = cfg.min_deriv + detail::softplus(z);
    dsig[i] = detail::sigmoid(z);
  }
  if (cache) {
    cache->pw = std::move(pw);
    cache->ph = std::move(ph);
    cache->dsig = std::move(dsig);
  }
  return sp;
}

// Chain knot gradients back to the raw conditioner output.
inline void decode_spline_backward(const SplineDecodeConfig& cfg, const SplineDecodeCache& cache,
                                   const SplineGrads& g, Eigen::Ref<Vec> draw) {
  const int K = cfg.bins;
  const double scale = 1.0 - cfg.min_bin * K;

  auto chain_half = [&](const Vec& p, const Vec& dknots, Eigen::Ref<Vec> out) {
    // knots[j] = -tail + 2*tail*cum_j, cum_j = sum_{i<j} (min_bin + scale*p_i);
    // the last knot is pinned, so j runs over 1..K-1.
    Vec dp = Vec::Zero(K);
    double suffix = 0.0;
    for (int i = K - 1; i >= 0; --i) {
      if (i + 1 <= K - 1) suffix += 2.0 * cfg.tail * dknots[i + 1];
      dp[i] = scale * suffix;
    }
    double dot = p.dot(dp);
    for (int i = 0; i < K; ++i) out[i] += p[i] * (dp[i] - dot);
  };

  chain_half(cache.pw, g.dxs, draw.head(K));
  chain_half(cache.ph, g.dys, draw.segment(K, K));
  for (int i = 0; i <= K; ++i) draw[2 * K + i] += g.dd[i] * cache.dsig[i];
}

}  // namespace odc
