#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "odc/flow.hpp"
#include "odc/simulator.hpp"

namespace odc {

// Flow posterior pinned to one observation; models the generic density
// concept (log_pdf + sample) used across eval, domain and mixture.
struct PosteriorDensity {
  const ConditionalFlow* flow = nullptr;
  Vec ctx;

  double log_pdf(const Vec& theta) const { return flow->log_prob(theta, ctx); }
  std::vector<Vec> sample(std::size_t n, Rng& rng) const { return flow->sample(ctx, n, rng); }
};

// Highest-density region at credibility gamma, estimated from samples of
// the distribution itself (Hyndman's construction).
struct HdrEstimate {
  double gamma = 0.0;
  double log_threshold = 0.0;
  std::vector<double> sample_log_pdfs;  // sorted ascending

  bool contains(double log_pdf) const { return log_pdf >= log_threshold; }
};

template <class Density>
HdrEstimate hdr_threshold(const Density& density, double gamma, std::size_t n, Rng& rng) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("hdr_threshold: gamma must be in (0,1)");
  if (n < 100) throw std::invalid_argument("hdr_threshold: need n >= 100");
  const auto samples = density.sample(n, rng);
  HdrEstimate est;
  est.gamma = gamma;
  est.sample_log_pdfs.reserve(n);
  for (const Vec& s : samples) est.sample_log_pdfs.push_back(density.log_pdf(s));
  std::sort(est.sample_log_pdfs.begin(), est.sample_log_pdfs.end());
  std::size_t m = static_cast<std::size_t>((1.0 - gamma) * static_cast<double>(n));
  m = std::min(m, n - 1);
  est.log_threshold = est.sample_log_pdfs[m];
  return est;
}

namespace detail {
// Ties count as <=; the tolerance absorbs the floating-point noise of the
// physical/model round trip, and a continuous density puts no mass there.
inline bool le_with_ties(double lp, double lp_star) {
  return lp <= lp_star + 1e-9 * (1.0 + std::abs(lp_star));
}
}  // namespace detail

// Fraction of n posterior samples whose density does not exceed the ground
// truth's density (ties count as <=).
template <class Posterior>
double pi_statistic(const Posterior& posterior, const Vec& theta_star, const Vec& ctx,
                    std::size_t n, Rng& rng) {
  if (n < 100) throw std::invalid_argument("pi_statistic: need n >= 100");
  const double lp_star = posterior.log_prob(theta_star, ctx);
  const auto samples = posterior.sample(ctx, n, rng);
  std::size_t below = 0;
  for (const Vec& s : samples) below += detail::le_with_ties(posterior.log_prob(s, ctx), lp_star) ? 1 : 0;
  return static_cast<double>(below) / static_cast<double>(n);
}

// Batched overload for the flow posterior; one conditioner batch per call.
inline double pi_statistic(const ConditionalFlow& flow, const Vec& theta_star, const Vec& ctx,
                           std::size_t n, Rng& rng) {
  if (n < 100) throw std::invalid_argument("pi_statistic: need n >= 100");
  const double lp_star = flow.log_prob_model(to_model(flow.space, theta_star), ctx);
  Mat U(static_cast<Eigen::Index>(n), flow.ndim);
  for (std::size_t i = 0; i < n; ++i)
    U.row(static_cast<Eigen::Index>(i)) = flow.sample_one_model(ctx, rng).transpose();
  const Mat C = ctx.transpose().replicate(static_cast<Eigen::Index>(n), 1);
  const Vec lp = flow.log_prob_model_batch(U, C);
  std::size_t below = 0;
  for (Eigen::Index i = 0; i < lp.size(); ++i) below += detail::le_with_ties(lp[i], lp_star) ? 1 : 0;
  return static_cast<double>(below) / static_cast<double>(n);
}

struct CoverageCurve {
  std::vector<double> levels;
  std::vector<double> coverage;
  std::size_t n_pairs = 0;
};

// Expected coverage over (theta*, x) pairs: per pair the rank statistic
// 1 - pi decides membership of theta* in the gamma-HDR, so each pair costs
// one batch of posterior samples regardless of the level grid. Levels 0 and
// 1 are the empty and full region by convention. Uses substreams derived
// from `rng`, one per pair.
template <class Posterior>
CoverageCurve expected_coverage(const Posterior& posterior,
                                const std::vector<std::pair<Vec, Vec>>& pairs,
                                const std::vector<double>& levels, std::size_t n, Rng& rng) {
  if (pairs.size() < 100) throw std::invalid_argument("expected_coverage: need >= 100 pairs");
  std::vector<double> one_minus_pi;
  one_minus_pi.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    Rng pair_rng = rng.child(0xC0FFEE, i);
    one_minus_pi.push_back(1.0 - pi_statistic(posterior, pairs[i].first, pairs[i].second, n, pair_rng));
  }
  CoverageCurve curve;
  curve.levels = levels;
  curve.n_pairs = pairs.size();
  for (double gamma : levels) {
    double cov;
    if (gamma <= 0.0)
      cov = 0.0;
    else if (gamma >= 1.0)
      cov = 1.0;
    else {
      std::size_t inside = 0;
      for (double v : one_minus_pi) inside += (v <= gamma) ? 1 : 0;
      cov = static_cast<double>(inside) / static_cast<double>(pairs.size());
    }
    curve.coverage.push_back(cov);
  }
  return curve;
}

struct PpcResult {
  std::vector<Observation> resimulated;
  std::vector<double> distances;  // Euclidean, feature space

  double median_distance() const {
    std::vector<double> d = distances;
    std::sort(d.begin(), d.end());
    return d[d.size() / 2];
  }
};

// Posterior predictive check against one dataset record: weather drawn from
// the posterior, re-rendered with the record's frozen nuisance and noise.
template <class Posterior>
PpcResult ppc(const Posterior& posterior, const ParamSpace& space, const Record& record,
              std::size_t n, Rng& rng) {
  const int az = space.index_of("sun_azimuth_angle");
  const auto weathers = posterior.sample(record.obs, n, rng);
  PpcResult res;
  res.resimulated = resimulate(weathers, record.params[az], record.noise_seed);
  res.distances.reserve(n);
  for (const Observation& o : res.resimulated) res.distances.push_back((o - record.obs).norm());
  return res;
}

inline PpcResult ppc(const ConditionalFlow& flow, const Record& record, std::size_t n, Rng& rng) {
  return ppc(flow, flow.space, record, n, rng);
}

// Prior-predictive counterpart, for contrast against ppc().
inline PpcResult ppc_prior(const ParamSpace& space, const Record& record, std::size_t n, Rng& rng) {
  const int az = space.index_of("sun_azimuth_angle");
  std::vector<Vec> weathers;
  weathers.reserve(n);
  for (const Vec& full : sample_prior(space, n, rng)) weathers.push_back(space.weather_of(full));
  PpcResult res;
  res.resimulated = resimulate(weathers, record.params[az], record.noise_seed);
  res.distances.reserve(n);
  for (const Observation& o : res.resimulated) res.distances.push_back((o - record.obs).norm());
  return res;
}

struct Histogram1D {
  int dim = 0;
  Vec edges;  // resolution + 1
  Vec mass;   // resolution, sums to 1
};

struct PairGrid {
  int dim_i = 0, dim_j = 0;
  Vec edges_i, edges_j;
  Mat density;        // resolution x resolution, smoothed, mass/cell-area
  double levels[3];   // density iso-levels at 68.27 / 95.45 / 99.73 %
};

struct CornerData {
  std::vector<Histogram1D> marginals;
  std::vector<PairGrid> pair_grids;
  std::size_t n_samples = 0;
};

// Sample-based corner-plot data: 1-D marginal histograms plus pairwise 2-D
// grids smoothed with a fixed 3x3 box kernel; iso-levels are HDR thresholds
// on the smoothed cell densities.
template <class Density>
CornerData corner_data(const Density& density, int resolution, std::size_t n, Rng& rng) {
  if (resolution < 32) throw std::invalid_argument("corner_data: resolution must be >= 32");
  const auto samples = density.sample(n, rng);
  const int ndim = static_cast<int>(samples.front().size());
  CornerData out;
  out.n_samples = n;

  std::vector<double> lo(ndim), hi(ndim), width(ndim);
  for (int d = 0; d < ndim; ++d) {
    double mn = samples[0][d], mx = samples[0][d];
    for (const Vec& s : samples) {
      mn = std::min(mn, s[d]);
      mx = std::max(mx, s[d]);
    }
    double pad = 1e-9 * std::max(1.0, mx - mn);
    lo[d] = mn - pad;
    hi[d] = mx + pad;
    width[d] = (hi[d] - lo[d]) / resolution;
  }
  auto bin_of = [&](int d, double v) {
    int b = static_cast<int>((v - lo[d]) / width[d]);
    return std::clamp(b, 0, resolution - 1);
  };
  auto edges_of = [&](int d) {
    Vec e(resolution + 1);
    for (int k = 0; k <= resolution; ++k) e[k] = lo[d] + k * width[d];
    return e;
  };

  for (int d = 0; d < ndim; ++d) {
    Histogram1D h;
    h.dim = d;
    h.edges = edges_of(d);
    h.mass = Vec::Zero(resolution);
    for (const Vec& s : samples) h.mass[bin_of(d, s[d])] += 1.0;
    h.mass /= static_cast<double>(n);
    out.marginals.push_back(std::move(h));
  }

  for (int i = 0; i < ndim; ++i) {
    for (int j = i + 1; j < ndim; ++j) {
      Mat counts = Mat::Zero(resolution, resolution);
      for (const Vec& s : samples) counts(bin_of(i, s[i]), bin_of(j, s[j])) += 1.0;
      Mat mass = counts / static_cast<double>(n);
      // fixed 3x3 box smoothing, zero padding
      Mat smooth = Mat::Zero(resolution, resolution);
      for (int r = 0; r < resolution; ++r)
        for (int c = 0; c < resolution; ++c) {
          double acc = 0.0;
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              int rr = r + dr, cc = c + dc;
              if (rr >= 0 && rr < resolution && cc >= 0 && cc < resolution) acc += mass(rr, cc);
            }
          smooth(r, c) = acc / 9.0;
        }
      PairGrid grid;
      grid.dim_i = i;
      grid.dim_j = j;
      grid.edges_i = edges_of(i);
      grid.edges_j = edges_of(j);
      // HDR thresholds over cells: accumulate mass from the densest down
      std::vector<double> cells(smooth.data(), smooth.data() + smooth.size());
      std::sort(cells.begin(), cells.end(), std::greater<double>());
      const double gammas[3] = {0.6827, 0.9545, 0.9973};
      const double cell_area = width[i] * width[j];
      for (int g = 0; g < 3; ++g) {
        double cum = 0.0;
        double t = cells.back();
        for (double c : cells) {
          cum += c;
          if (cum >= gammas[g]) {
            t = c;
            break;
          }
        }
        grid.levels[g] = t / cell_area;
      }
      grid.density = smooth / cell_area;
      out.pair_grids.push_back(std::move(grid));
    }
  }
  return out;
}

}  // namespace odc
