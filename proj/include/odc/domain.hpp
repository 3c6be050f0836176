#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "odc/flow.hpp"

namespace odc {

struct BagEntry {
  Vec obs;
  double weight = 1.0;
  std::optional<double> timestamp;
};

// Weighted multiset of observations; weights act as multiplicities or
// temporal-filter coefficients and are normalized at characterization time.
struct ObservationBag {
  std::vector<BagEntry> entries;

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("ObservationBag: needs at least one entry");
    for (const auto& e : entries)
      if (!(e.weight > 0.0)) throw std::invalid_argument("ObservationBag: weights must be positive");
  }

  void add(Vec obs, double weight = 1.0) { entries.push_back({std::move(obs), weight, std::nullopt}); }
};

// Mixture of per-observation posteriors: the absolute characterization of a
// domain. Immutable; pdf and sampler are pure given an rng.
struct DomainCharacterization {
  const ConditionalFlow* flow = nullptr;
  std::vector<Vec> contexts;
  Vec weights;      // normalized, sum to 1
  Vec log_weights;

  // log pdf via max-shifted log-sum-exp over the mixture components.
  double log_pdf(const Vec& theta) const {
    Vec terms(weights.size());
    for (Eigen::Index i = 0; i < weights.size(); ++i)
      terms[i] = log_weights[i] + flow->log_prob(theta, contexts[static_cast<std::size_t>(i)]);
    const double m = terms.maxCoeff();
    return m + std::log((terms.array() - m).exp().sum());
  }

  double pdf(const Vec& theta) const { return std::exp(log_pdf(theta)); }

  // Batched pdf evaluation: one conditioner batch per mixture component.
  Vec log_pdf_batch(const std::vector<Vec>& thetas) const {
    const Eigen::Index m = static_cast<Eigen::Index>(thetas.size());
    Mat U(m, flow->ndim);
    for (Eigen::Index i = 0; i < m; ++i)
      U.row(i) = to_model(flow->space, thetas[static_cast<std::size_t>(i)]).transpose();
    const double log_jac = flow->space.log_jacobian_to_model();
    Mat terms(m, weights.size());
    for (Eigen::Index c = 0; c < weights.size(); ++c) {
      Mat C = contexts[static_cast<std::size_t>(c)].transpose().replicate(m, 1);
      terms.col(c) = flow->log_prob_model_batch(U, C).array() + log_jac + log_weights[c];
    }
    Vec out(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const double mx = terms.row(i).maxCoeff();
      out[i] = mx + std::log((terms.row(i).array() - mx).exp().sum());
    }
    return out;
  }

  // Ancestral sampling: component by normalized weight, then the flow. For
  // a single-entry bag the component draw is skipped, so the stream matches
  // ConditionalFlow::sample for that context exactly.
  std::vector<Vec> sample(std::size_t n, Rng& rng, std::vector<std::size_t>* components = nullptr) const {
    if (n < 1) throw std::invalid_argument("DomainCharacterization::sample: n must be >= 1");
    std::vector<Vec> out;
    out.reserve(n);
    if (components) components->clear();
    if (contexts.size() == 1) {
      for (std::size_t i = 0; i < n; ++i) {
        out.push_back(from_model(flow->space, flow->sample_one_model(contexts[0], rng)));
        if (components) components->push_back(0);
      }
      return out;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t idx = contexts.size() - 1;
      for (Eigen::Index c = 0; c < weights.size(); ++c) {
        cum += weights[c];
        if (u < cum) {
          idx = static_cast<std::size_t>(c);
          break;
        }
      }
      out.push_back(from_model(flow->space, flow->sample_one_model(contexts[idx], rng)));
      if (components) components->push_back(idx);
    }
    return out;
  }
};

// Absolute characterization of the domain behind a bag of observations.
inline DomainCharacterization characterize(const ConditionalFlow& flow, const ObservationBag& bag) {
  bag.validate();
  DomainCharacterization ch;
  ch.flow = &flow;
  double total = 0.0;
  for (const auto& e : bag.entries) total += e.weight;
  ch.weights = Vec(static_cast<Eigen::Index>(bag.entries.size()));
  ch.log_weights = Vec(ch.weights.size());
  for (std::size_t i = 0; i < bag.entries.size(); ++i) {
    ch.contexts.push_back(bag.entries[i].obs);
    ch.weights[static_cast<Eigen::Index>(i)] = bag.entries[i].weight / total;
    ch.log_weights[static_cast<Eigen::Index>(i)] = std::log(bag.entries[i].weight / total);
  }
  return ch;
}

// Exponential-decay weights for linear temporal filtering; the newest
// timestamp gets weight 1, one half-life of age halves the weight.
inline Vec temporal_weights(const std::vector<double>& timestamps, double half_life) {
  if (half_life <= 0.0) throw std::invalid_argument("temporal_weights: half-life must be positive");
  if (timestamps.empty()) throw std::invalid_argument("temporal_weights: need at least one timestamp");
  double t_max = timestamps[0];
  for (double t : timestamps) t_max = std::max(t_max, t);
  Vec w(static_cast<Eigen::Index>(timestamps.size()));
  for (std::size_t i = 0; i < timestamps.size(); ++i)
    w[static_cast<Eigen::Index>(i)] = std::pow(0.5, (t_max - timestamps[i]) / half_life);
  return w;
}

}  // namespace odc
