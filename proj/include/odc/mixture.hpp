#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "odc/domain.hpp"

namespace odc {

namespace detail {

template <class Density>
Vec density_values(const Density& d, const std::vector<Vec>& points) {
  Vec out(static_cast<Eigen::Index>(points.size()));
  if constexpr (requires { d.log_pdf_batch(points); }) {
    Vec lp = d.log_pdf_batch(points);
    out = lp.array().exp();
  } else {
    for (std::size_t i = 0; i < points.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = std::exp(d.log_pdf(points[i]));
  }
  return out;
}

inline double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const std::size_t i = static_cast<std::size_t>(h);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (h - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

}  // namespace detail

// Monte Carlo mean squared gap between the target density and a lambda-mix
// of source densities, over points drawn from the target.
template <class TargetDensity, class SourceDensity>
double gap(const TargetDensity& target, const std::vector<SourceDensity>& sources, const Vec& lambda,
           const std::vector<Vec>& points) {
  if (lambda.size() != static_cast<Eigen::Index>(sources.size()))
    throw std::invalid_argument("gap: weight count must match source count");
  Vec t = detail::density_values(target, points);
  Vec mix = Vec::Zero(t.size());
  for (std::size_t k = 0; k < sources.size(); ++k)
    mix += lambda[static_cast<Eigen::Index>(k)] * detail::density_values(sources[k], points);
  return (t - mix).squaredNorm() / static_cast<double>(points.size());
}

struct MixtureFit {
  Vec weights;             // simplex weights, lambda_hat
  double delta = 0.0;      // mean squared gap at lambda_hat
  std::vector<Vec> points; // M evaluation points drawn from the target
  Mat pdfs;                // M x (S+1): column 0 target, then the sources
  bool ridge_used = false;
};

namespace detail {

// Exact simplex-constrained least squares by enumeration of support sets:
// for each nonempty support solve the equality-constrained KKT system and
// keep the feasible candidate with the smallest objective. S is small, so
// the enumeration is cheap and needs no iterative solver.
inline Vec solve_simplex_qp(const Mat& A, const Vec& b, bool& ridge_used) {
  const int S = static_cast<int>(b.size());
  Vec best = Vec::Zero(S);
  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<int> best_support;
  bool found = false;

  for (unsigned mask = 1; mask < (1u << S); ++mask) {
    std::vector<int> support;
    for (int k = 0; k < S; ++k)
      if (mask & (1u << k)) support.push_back(k);
    const int m = static_cast<int>(support.size());

    Mat K(m + 1, m + 1);
    Vec rhs(m + 1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < m; ++j) K(i, j) = 2.0 * A(support[i], support[j]);
      K(i, m) = 1.0;
      K(m, i) = 1.0;
      rhs[i] = 2.0 * b[support[i]];
    }
    K(m, m) = 0.0;
    rhs[m] = 1.0;

    Eigen::FullPivLU<Mat> lu(K);
    Vec sol;
    if (lu.isInvertible()) {
      sol = lu.solve(rhs);
    } else {
      Mat Kr = K;
      for (int i = 0; i < m; ++i) Kr(i, i) += 1e-10;  // ridge on a singular face
      Eigen::FullPivLU<Mat> lur(Kr);
      if (!lur.isInvertible()) continue;
      sol = lur.solve(rhs);
      ridge_used = true;
    }

    bool feasible = true;
    for (int i = 0; i < m; ++i)
      if (sol[i] < -1e-9) feasible = false;
    if (!feasible) continue;

    Vec lambda = Vec::Zero(S);
    double total = 0.0;
    for (int i = 0; i < m; ++i) {
      const double v = std::max(sol[i], 0.0);
      lambda[support[i]] = v;
      total += v;
    }
    if (!(total > 0.0)) continue;
    lambda /= total;

    const double obj = lambda.dot(A * lambda) - 2.0 * b.dot(lambda);
    const double tol = 1e-12 * std::max(1.0, std::abs(best_obj));
    const bool better = !found || obj < best_obj - tol;
    const bool tie_wins = found && std::abs(obj - best_obj) <= tol && support < best_support;
    if (better || tie_wins) {
      best = lambda;
      best_obj = std::min(obj, best_obj);
      best_support = support;
      found = true;
    }
  }
  if (!found) throw std::runtime_error("solve_simplex_qp: no feasible candidate");
  return best;
}

}  // namespace detail

// Fit simplex weights so the mixture of source densities matches the target
// density in the Monte Carlo least-squares sense. Densities are rescaled by
// their largest value before the solve; the argmin is scale-invariant and
// delta is reported in original units.
template <class TargetDensity, class SourceDensity>
MixtureFit fit_weights(const TargetDensity& target, const std::vector<SourceDensity>& sources,
                       std::size_t M, Rng& rng) {
  const std::size_t S = sources.size();
  if (S < 1) throw std::invalid_argument("fit_weights: need at least one source");
  if (M < S) throw std::invalid_argument("fit_weights: need M >= S points");

  MixtureFit fit;
  fit.points = target.sample(M, rng);
  fit.pdfs = Mat(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(S) + 1);
  fit.pdfs.col(0) = detail::density_values(target, fit.points);
  for (std::size_t k = 0; k < S; ++k)
    fit.pdfs.col(static_cast<Eigen::Index>(k) + 1) = detail::density_values(sources[k], fit.points);

  const double scale = std::max(fit.pdfs.maxCoeff(), 1e-300);
  const Mat P = fit.pdfs.rightCols(static_cast<Eigen::Index>(S)) / scale;
  const Vec t = fit.pdfs.col(0) / scale;
  const double inv_m = 1.0 / static_cast<double>(M);
  const Mat A = inv_m * P.transpose() * P;
  const Vec b = inv_m * P.transpose() * t;

  fit.weights = detail::solve_simplex_qp(A, b, fit.ridge_used);
  const Vec resid = fit.pdfs.col(0) - fit.pdfs.rightCols(static_cast<Eigen::Index>(S)) * fit.weights;
  fit.delta = resid.squaredNorm() * inv_m;
  return fit;
}

struct GapSummary {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  std::vector<double> deltas;
};

// Gap achievable by chance: delta at weights drawn uniformly on the simplex
// (flat Dirichlet). Given the same rng seed as fit_weights, the evaluation
// points coincide with the fit's.
template <class TargetDensity, class SourceDensity>
GapSummary baseline_gap(const TargetDensity& target, const std::vector<SourceDensity>& sources,
                        std::size_t M, std::size_t trials, Rng& rng) {
  if (trials < 30) throw std::invalid_argument("baseline_gap: need trials >= 30");
  const std::size_t S = sources.size();
  std::vector<Vec> points = target.sample(M, rng);
  Vec t = detail::density_values(target, points);
  Mat P(static_cast<Eigen::Index>(M), static_cast<Eigen::Index>(S));
  for (std::size_t k = 0; k < S; ++k) P.col(static_cast<Eigen::Index>(k)) = detail::density_values(sources[k], points);

  GapSummary summary;
  summary.deltas.reserve(trials);
  const double inv_m = 1.0 / static_cast<double>(M);
  for (std::size_t trial = 0; trial < trials; ++trial) {
    Vec lambda(static_cast<Eigen::Index>(S));
    for (std::size_t k = 0; k < S; ++k)
      lambda[static_cast<Eigen::Index>(k)] = -std::log(1.0 - rng.uniform());
    lambda /= lambda.sum();
    summary.deltas.push_back((t - P * lambda).squaredNorm() * inv_m);
  }
  summary.median = detail::quantile(summary.deltas, 0.5);
  summary.q1 = detail::quantile(summary.deltas, 0.25);
  summary.q3 = detail::quantile(summary.deltas, 0.75);
  return summary;
}

// Distribution of fitted deltas under re-drawn evaluation points; the 95th
// percentile of this distribution on an in-ODD target is the out-of-ODD
// decision threshold.
template <class TargetDensity, class SourceDensity>
std::vector<double> bootstrap_delta(const TargetDensity& target, const std::vector<SourceDensity>& sources,
                                    std::size_t M, std::size_t refits, Rng& rng) {
  std::vector<double> deltas;
  deltas.reserve(refits);
  for (std::size_t i = 0; i < refits; ++i) {
    Rng child = rng.child(0xB007, i);
    deltas.push_back(fit_weights(target, sources, M, child).delta);
  }
  return deltas;
}

struct SweepRow {
  double eta = 0.0;
  int rep = 0;
  double d_e = 0.0;             // ||lambda_hat - lambda||_2
  double delta = 0.0;
  double baseline_median = 0.0;
  bool out_of_odd = false;      // delta above the in-ODD bootstrap p95
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double odd_threshold = 0.0;
  std::vector<double> bootstrap_deltas;
  std::vector<Vec> fitted_weights;  // per row
};

// Noise-sweep experiment: the target bag mixes the in-ODD sources (weights
// lambda, scaled by 1-eta) with uniformly re-weighted out-of-ODD entries
// (scaled by eta); per (eta, rep) the mixture weights are re-fitted and the
// gap compared against the in-ODD bootstrap threshold.
inline SweepResult noise_sweep(const ConditionalFlow& flow, const std::vector<ObservationBag>& source_bags,
                               const Vec& lambda, const ObservationBag& out_bag,
                               const std::vector<double>& eta_grid, int reps, std::size_t M, Rng& rng,
                               std::size_t bootstrap_refits = 100, std::size_t baseline_trials = 200) {
  if (lambda.size() != static_cast<Eigen::Index>(source_bags.size()))
    throw std::invalid_argument("noise_sweep: lambda size must match source count");
  if (reps < 1) throw std::invalid_argument("noise_sweep: reps must be >= 1");
  for (double eta : eta_grid)
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("noise_sweep: eta must lie in [0,1]");

  std::vector<DomainCharacterization> sources;
  for (const auto& bag : source_bags) sources.push_back(characterize(flow, bag));

  auto build_target = [&](double eta, Rng& weight_rng) {
    ObservationBag bag;
    if (eta < 1.0) {
      for (std::size_t k = 0; k < source_bags.size(); ++k) {
        const double wk = (1.0 - eta) * lambda[static_cast<Eigen::Index>(k)] /
                          static_cast<double>(source_bags[k].entries.size());
        if (wk <= 0.0) continue;
        for (const auto& e : source_bags[k].entries) bag.add(e.obs, wk);
      }
    }
    if (eta > 0.0) {
      Vec u(static_cast<Eigen::Index>(out_bag.entries.size()));
      for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = weight_rng.uniform();
      u *= eta / u.sum();
      for (std::size_t i = 0; i < out_bag.entries.size(); ++i)
        if (u[static_cast<Eigen::Index>(i)] > 0.0) bag.add(out_bag.entries[i].obs, u[static_cast<Eigen::Index>(i)]);
    }
    return bag;
  };

  SweepResult result;

  // In-ODD reference: the eta = 0 target bag is deterministic.
  {
    Rng dummy(0);
    ObservationBag in_bag = build_target(0.0, dummy);
    DomainCharacterization in_ch = characterize(flow, in_bag);
    Rng boot_rng = rng.child(0xB00757);
    result.bootstrap_deltas = bootstrap_delta(in_ch, sources, M, bootstrap_refits, boot_rng);
    result.odd_threshold = detail::quantile(result.bootstrap_deltas, 0.95);
  }

  for (std::size_t ei = 0; ei < eta_grid.size(); ++ei) {
    for (int rep = 0; rep < reps; ++rep) {
      Rng weight_rng = rng.child(1000 + ei, static_cast<std::uint64_t>(rep));
      ObservationBag target_bag = build_target(eta_grid[ei], weight_rng);
      DomainCharacterization target = characterize(flow, target_bag);

      Rng fit_rng = rng.child(2000 + ei, static_cast<std::uint64_t>(rep));
      Rng base_rng = fit_rng;  // same stream: baseline shares the fit's points
      MixtureFit fit = fit_weights(target, sources, M, fit_rng);
      GapSummary base = baseline_gap(target, sources, M, baseline_trials, base_rng);

      SweepRow row;
      row.eta = eta_grid[ei];
      row.rep = rep;
      row.d_e = (fit.weights - lambda).norm();
      row.delta = fit.delta;
      row.baseline_median = base.median;
      row.out_of_odd = fit.delta > result.odd_threshold;
      result.rows.push_back(row);
      result.fitted_weights.push_back(fit.weights);
    }
  }
  return result;
}

}  // namespace odc
