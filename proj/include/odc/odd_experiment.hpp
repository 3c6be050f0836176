#pragma once

#include <string>
#include <vector>

#include "odc/domain.hpp"
#include "odc/simulator.hpp"

namespace odc {

// Axis-aligned parameter region: ranges from the base space with some dims
// narrowed. Source regions and the out-of-ODD region must be disjoint.
struct ParamRegion {
  std::string name;
  std::vector<std::pair<std::string, std::pair<double, double>>> overrides;
};

// Disjoint weather regions for the sweep experiment: three fog bands with
// moderate rain for the sources, heavy rain (any fog) for the out-of-ODD
// region.
inline std::vector<ParamRegion> default_sweep_regions() {
  return {
      {"source_1", {{"fog_density", {0.0, 30.0}}, {"precipitation", {0.0, 50.0}}}},
      {"source_2", {{"fog_density", {35.0, 65.0}}, {"precipitation", {0.0, 50.0}}}},
      {"source_3", {{"fog_density", {70.0, 100.0}}, {"precipitation", {0.0, 50.0}}}},
      {"out_of_odd", {{"precipitation", {60.0, 100.0}}}},
  };
}

inline ParamSpace restrict_space(const ParamSpace& base, const ParamRegion& region) {
  ParamSpace sp = base;
  for (const auto& [name, range] : region.overrides) {
    ParamDim& dim = sp.dims[static_cast<std::size_t>(sp.index_of(name))];
    dim.lower = range.first;
    dim.upper = range.second;
  }
  return sp;
}

// Equally weighted bag of observations whose weather is uniform on the
// region; the same derived-seed scheme as generate_dataset.
inline ObservationBag make_region_bag(const ParamSpace& base, const ParamRegion& region,
                                      std::size_t n, std::uint64_t seed) {
  const ParamSpace sp = restrict_space(base, region);
  const int az = sp.index_of("sun_azimuth_angle");
  ObservationBag bag;
  for (std::size_t i = 0; i < n; ++i) {
    Rng param_rng(mix_seed(seed, i, 0));
    Vec params = sample_prior(sp, 1, param_rng)[0];
    Rng noise_rng(mix_seed(seed, i, 1));
    bag.add(simulate(sp.weather_of(params), params[az], noise_rng));
  }
  return bag;
}

}  // namespace odc
