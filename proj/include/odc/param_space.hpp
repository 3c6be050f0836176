#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "odc/rng.hpp"

namespace odc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// One physical parameter: bounds in physical units, optionally pinned to a
// fixed value (in which case the prior is a point mass).
struct ParamDim {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  std::optional<double> fixed_value;

  ParamDim() = default;
  ParamDim(std::string n, double lo, double hi, std::optional<double> fixed = std::nullopt)
      : name(std::move(n)), lower(lo), upper(hi), fixed_value(fixed) {
    if (!(lower < upper) || !std::isfinite(lower) || !std::isfinite(upper))
      throw std::invalid_argument("ParamDim '" + name + "': bounds must be finite with lower < upper");
    if (fixed_value && (*fixed_value < lower || *fixed_value > upper))
      throw std::invalid_argument("ParamDim '" + name + "': fixed value outside bounds");
  }

  double range() const { return upper - lower; }
  double midpoint() const { return 0.5 * (lower + upper); }
};

// The box of physical parameters. A subset of dimensions is flagged as
// predicted; only those enter the flow. The rest (nuisance and pinned
// dimensions) are carried through data generation untouched.
struct ParamSpace {
  std::vector<ParamDim> dims;
  std::vector<bool> predicted;

  ParamSpace() = default;
  ParamSpace(std::vector<ParamDim> d, std::vector<bool> p)
      : dims(std::move(d)), predicted(std::move(p)) {
    if (dims.size() != predicted.size())
      throw std::invalid_argument("ParamSpace: predicted mask size mismatch");
    for (std::size_t i = 0; i < dims.size(); ++i)
      if (predicted[i] && dims[i].fixed_value)
        throw std::invalid_argument("ParamSpace: fixed dim '" + dims[i].name + "' cannot be predicted");
  }

  int n_dims() const { return static_cast<int>(dims.size()); }

  int n_predicted() const {
    int k = 0;
    for (bool p : predicted) k += p ? 1 : 0;
    return k;
  }

  std::vector<int> predicted_indices() const {
    std::vector<int> idx;
    for (int i = 0; i < n_dims(); ++i)
      if (predicted[i]) idx.push_back(i);
    return idx;
  }

  int index_of(const std::string& name) const {
    for (int i = 0; i < n_dims(); ++i)
      if (dims[i].name == name) return i;
    throw std::out_of_range("ParamSpace: no dim named '" + name + "'");
  }

  // Extract the predicted coordinates from a full parameter vector.
  Vec weather_of(const Vec& full) const {
    const auto idx = predicted_indices();
    Vec w(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) w[static_cast<Eigen::Index>(k)] = full[idx[k]];
    return w;
  }

  // log |det d(model)/d(physical)| over the predicted dims: each dim maps
  // [lower, upper] -> [-1, 1], contributing log(2 / range).
  double log_jacobian_to_model() const {
    double s = 0.0;
    for (int i : predicted_indices()) s += std::log(2.0 / dims[i].range());
    return s;
  }
};

// Full 13-parameter weather space of the reference domain. Six dims are
// predicted; sun azimuth is a free nuisance and six dims are pinned.
inline ParamSpace default_space() {
  std::vector<ParamDim> dims = {
      {"cloudiness", 0.0, 100.0},
      {"fog_density", 0.0, 100.0},
      {"precipitation", 0.0, 100.0},
      {"sun_azimuth_angle", 0.0, 360.0},
      {"sun_altitude_angle", -90.0, 90.0},
      {"wind_intensity", 0.0, 100.0},
      {"precipitation_deposits", 0.0, 100.0},
      {"fog_distance", 0.0, 1.0, 0.75},
      {"fog_falloff", 0.0, 1.0, 0.1},
      {"mie_scattering_scale", 0.0, 1.0, 0.03},
      {"rayleigh_scattering_scale", 0.0, 1.0, 0.033},
      {"scattering_intensity", 0.0, 2.0, 1.0},
      {"wetness", 0.0, 100.0, 0.0},
  };
  std::vector<bool> predicted = {true, true, true, false, true, true, true,
                                 false, false, false, false, false, false};
  return ParamSpace(std::move(dims), std::move(predicted));
}

// i.i.d. uniform draws over every non-fixed dim; fixed dims return their
// pinned value. Returns full parameter vectors (predicted + nuisance).
inline std::vector<Vec> sample_prior(const ParamSpace& space, std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_prior: n must be >= 1");
  std::vector<Vec> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec v(space.n_dims());
    for (int d = 0; d < space.n_dims(); ++d) {
      const ParamDim& dim = space.dims[d];
      v[d] = dim.fixed_value ? *dim.fixed_value : rng.uniform(dim.lower, dim.upper);
    }
    out.push_back(std::move(v));
  }
  return out;
}

// Affine map of each predicted dim from [lower, upper] onto [-1, 1].
inline Vec to_model(const ParamSpace& space, const Vec& weather) {
  const auto idx = space.predicted_indices();
  if (weather.size() != static_cast<Eigen::Index>(idx.size()))
    throw std::invalid_argument("to_model: weather vector has wrong size");
  Vec u(weather.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const ParamDim& dim = space.dims[idx[k]];
    u[static_cast<Eigen::Index>(k)] = 2.0 * (weather[static_cast<Eigen::Index>(k)] - dim.lower) / dim.range() - 1.0;
  }
  return u;
}

inline Vec from_model(const ParamSpace& space, const Vec& u) {
  const auto idx = space.predicted_indices();
  if (u.size() != static_cast<Eigen::Index>(idx.size()))
    throw std::invalid_argument("from_model: model vector has wrong size");
  Vec w(u.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const ParamDim& dim = space.dims[idx[k]];
    w[static_cast<Eigen::Index>(k)] = dim.lower + 0.5 * (u[static_cast<Eigen::Index>(k)] + 1.0) * dim.range();
  }
  return w;
}

}  // namespace odc
