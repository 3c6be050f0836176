#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "odc/param_space.hpp"
#include "odc/rng.hpp"

namespace odc {

// 8 dimensionless features, roughly within [-1.5, 1.5].
using Observation = Vec;

constexpr double kSimNoiseSigma = 0.02;
constexpr int kObsDim = 8;

namespace detail {

// Deterministic forward model mapping normalized weather plus the azimuth
// nuisance to the pre-noise feature vector. The map loses information on
// purpose: wind is invisible without rain, night erases the effect of
// clouds and fog on luminance, and glare depends on the unobserved azimuth.
inline Observation weather_features(double c, double f, double r, double s, double wind,
                                    double dep, double a) {
  Observation o(kObsDim);
  const double lum = std::max(0.0, 2.0 * s - 1.0) * (1.0 - 0.6 * c) * (1.0 - 0.5 * f);
  const double vis = (1.0 - f) * (1.0 - 0.3 * r);
  const double gray = c * (0.5 + 0.5 * f);
  const double wet = std::min(1.0, 0.7 * r + 0.3 * dep);
  const double streak = r * wind;
  o[0] = lum;
  o[1] = vis;
  o[2] = gray;
  o[3] = wet;
  o[4] = streak;
  o[5] = lum * (1.0 - gray) * std::abs(std::cos(2.0 * M_PI * a));
  o[6] = 0.5 * (vis + wet) * (1.0 - 0.2 * c);
  o[7] = std::tanh(lum + streak - gray);
  return o;
}

}  // namespace detail

// Pre-noise features for a weather vector in the order of the default
// space's predicted dims: cloudiness, fog density, precipitation, sun
// altitude, wind intensity, precipitation deposits. Defined for any finite
// input (normalized values simply leave [0, 1] outside the box).
inline Observation simulate_clean(const Vec& w, double azimuth) {
  if (w.size() != 6) throw std::invalid_argument("simulate: weather vector must have 6 dims");
  return detail::weather_features(w[0] / 100.0, w[1] / 100.0, w[2] / 100.0,
                                  (w[3] + 90.0) / 180.0, w[4] / 100.0, w[5] / 100.0,
                                  azimuth / 360.0);
}

inline Observation add_sim_noise(Observation o, Rng& rng) {
  for (int i = 0; i < kObsDim; ++i) o[i] += rng.normal(0.0, kSimNoiseSigma);
  return o;
}

// Stochastic observation of an in-box weather vector.
inline Observation simulate(const Vec& w, double azimuth, Rng& rng) {
  static const double lo[6] = {0, 0, 0, -90, 0, 0};
  static const double hi[6] = {100, 100, 100, 90, 100, 100};
  if (w.size() != 6) throw std::invalid_argument("simulate: weather vector must have 6 dims");
  for (int i = 0; i < 6; ++i)
    if (!(w[i] >= lo[i] && w[i] <= hi[i]))
      throw std::domain_error("simulate: weather parameter out of range");
  return add_sim_noise(simulate_clean(w, azimuth), rng);
}

struct Record {
  Vec params;       // full parameter vector (13 dims in the default space)
  Observation obs;  // 8 features
  int split = 0;    // 0 train, 1 val, 2 test
  std::uint64_t noise_seed = 0;
};

struct SplitFractions {
  double train = 10.0 / 13.0;
  double val = 2.0 / 13.0;
  double test = 1.0 / 13.0;
};

struct Dataset {
  ParamSpace space;
  std::vector<Record> records;
  std::uint64_t seed = 0;
  SplitFractions fractions;

  std::size_t count(int split) const {
    std::size_t k = 0;
    for (const auto& r : records) k += (r.split == split) ? 1 : 0;
    return k;
  }

  std::vector<const Record*> split_records(int split) const {
    std::vector<const Record*> out;
    for (const auto& r : records)
      if (r.split == split) out.push_back(&r);
    return out;
  }
};

// Each record gets its own derived seeds for parameters and noise, so the
// dataset is identical regardless of generation order.
inline Dataset generate_dataset(const ParamSpace& space, std::size_t n, std::uint64_t seed,
                                const SplitFractions& fractions = {}) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  const double fsum = fractions.train + fractions.val + fractions.test;
  if (std::abs(fsum - 1.0) > 1e-9)
    throw std::invalid_argument("generate_dataset: split fractions must sum to 1");
  const int az = space.index_of("sun_azimuth_angle");
  const std::size_t n_train = static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const std::size_t n_val = static_cast<std::size_t>(std::llround(fractions.val * static_cast<double>(n)));
  if (n_train + n_val > n) throw std::invalid_argument("generate_dataset: fractions overflow n");

  Dataset ds;
  ds.space = space;
  ds.seed = seed;
  ds.fractions = fractions;
  ds.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng param_rng(mix_seed(seed, i, 0));
    Record rec;
    rec.params = sample_prior(space, 1, param_rng)[0];
    rec.noise_seed = mix_seed(seed, i, 1);
    Rng noise_rng(rec.noise_seed);
    rec.obs = simulate(space.weather_of(rec.params), rec.params[az], noise_rng);
    rec.split = (i < n_train) ? 0 : (i < n_train + n_val) ? 1 : 2;
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

// Re-render observations for new weather vectors while freezing the
// nuisance azimuth and the noise realization of one original record; only
// the weather varies. Accepts out-of-box weather (posterior tails).
inline std::vector<Observation> resimulate(const std::vector<Vec>& weathers, double azimuth,
                                           std::uint64_t noise_seed) {
  std::vector<Observation> out;
  out.reserve(weathers.size());
  for (const Vec& w : weathers) {
    Rng noise_rng(noise_seed);
    out.push_back(add_sim_noise(simulate_clean(w, azimuth), noise_rng));
  }
  return out;
}

}  // namespace odc
