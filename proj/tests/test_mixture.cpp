#include <catch2/catch_amalgamated.hpp>

#include "odc/mixture.hpp"
#include "odc/odd_experiment.hpp"
#include "test_util.hpp"

using namespace odc;

namespace {

// analytic 2-D isotropic Gaussian mixture; exact density and sampler
struct Gmm {
  std::vector<Vec> means;
  std::vector<double> sigmas;
  std::vector<double> comp_weights;

  double log_pdf(const Vec& x) const {
    double p = 0.0;
    for (std::size_t k = 0; k < means.size(); ++k) {
      const double s = sigmas[k];
      const double q = (x - means[k]).squaredNorm() / (2.0 * s * s);
      p += comp_weights[k] * std::exp(-q) / (2.0 * M_PI * s * s);
    }
    return std::log(p);
  }

  std::vector<Vec> sample(std::size_t n, Rng& rng) const {
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t k = means.size() - 1;
      for (std::size_t j = 0; j < means.size(); ++j) {
        cum += comp_weights[j];
        if (u < cum) {
          k = j;
          break;
        }
      }
      Vec v(2);
      v << means[k][0] + sigmas[k] * rng.normal(), means[k][1] + sigmas[k] * rng.normal();
      out.push_back(std::move(v));
    }
    return out;
  }
};

Gmm gmm(double mx, double my, double sigma) {
  Vec m(2);
  m << mx, my;
  return Gmm{{m}, {sigma}, {1.0}};
}

// exact convex blend of source densities
struct Blend {
  const std::vector<Gmm>* sources;
  Vec lambda;

  double log_pdf(const Vec& x) const {
    double p = 0.0;
    for (std::size_t k = 0; k < sources->size(); ++k)
      p += lambda[static_cast<Eigen::Index>(k)] * std::exp((*sources)[k].log_pdf(x));
    return std::log(p);
  }

  std::vector<Vec> sample(std::size_t n, Rng& rng) const {
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t k = sources->size() - 1;
      for (std::size_t j = 0; j < sources->size(); ++j) {
        cum += lambda[static_cast<Eigen::Index>(j)];
        if (u < cum) {
          k = j;
          break;
        }
      }
      out.push_back((*sources)[k].sample(1, rng)[0]);
    }
    return out;
  }
};

// grid search over the 3-simplex at a fixed step, on a fixed pdf matrix
Vec grid_search_lambda(const Mat& pdfs, double step) {
  const Vec t = pdfs.col(0);
  const Mat P = pdfs.rightCols(pdfs.cols() - 1);
  Vec best(3);
  double best_obj = std::numeric_limits<double>::infinity();
  const int steps = static_cast<int>(std::llround(1.0 / step));
  for (int i = 0; i <= steps; ++i)
    for (int j = 0; j + i <= steps; ++j) {
      Vec lam(3);
      lam << i * step, j * step, 1.0 - (i + j) * step;
      const double obj = (t - P * lam).squaredNorm();
      if (obj < best_obj) {
        best_obj = obj;
        best = lam;
      }
    }
  return best;
}

std::vector<Gmm> three_sources() {
  return {gmm(0.0, 0.0, 0.8), gmm(3.0, 1.0, 1.0), gmm(-1.0, 3.5, 1.2)};
}

}  // namespace

TEST_CASE("gap") {
  std::vector<Gmm> sources = three_sources();

  SECTION("target equal to a source has zero gap at the matching vertex") {
    Rng rng(1);
    const auto points = sources[0].sample(64, rng);
    Vec e1(3);
    e1 << 1.0, 0.0, 0.0;
    CHECK(gap(sources[0], sources, e1, points) == 0.0);
  }

  SECTION("gap is never negative") {
    Rng rng(2);
    Blend target{&sources, (Vec(3) << 0.1, 0.2, 0.7).finished()};
    for (int i = 0; i < 10; ++i) {
      Vec lam(3);
      lam << rng.uniform(), rng.uniform(), rng.uniform();
      lam /= lam.sum();
      const auto points = target.sample(32, rng);
      CHECK(gap(target, sources, lam, points) >= 0.0);
    }
  }

  SECTION("two-source toy matches direct arithmetic to 1e-12") {
    std::vector<Gmm> two = {gmm(0, 0, 1.0), gmm(2, 0, 1.0)};
    Blend target{&two, (Vec(2) << 0.4, 0.6).finished()};
    Rng rng(3);
    const auto points = target.sample(16, rng);
    Vec lam(2);
    lam << 0.25, 0.75;
    double direct = 0.0;
    for (const Vec& p : points) {
      const double diff = std::exp(target.log_pdf(p)) -
                          (lam[0] * std::exp(two[0].log_pdf(p)) + lam[1] * std::exp(two[1].log_pdf(p)));
      direct += diff * diff;
    }
    direct /= static_cast<double>(points.size());
    CHECK(gap(target, two, lam, points) == Catch::Approx(direct).epsilon(1e-12));
  }

  SECTION("weight count must match sources") {
    Rng rng(4);
    const auto points = sources[0].sample(16, rng);
    CHECK_THROWS_AS(gap(sources[0], sources, Vec::Ones(2), points), std::invalid_argument);
  }
}

TEST_CASE("fit_weights") {
  std::vector<Gmm> sources = three_sources();

  SECTION("target literally equal to source 2") {
    Rng rng(5);
    MixtureFit fit = fit_weights(sources[1], sources, 128, rng);
    Vec want(3);
    want << 0.0, 1.0, 0.0;
    CHECK((fit.weights - want).norm() <= 1e-6);
    CHECK(fit.delta >= 0.0);
    CHECK(std::abs(fit.weights.sum() - 1.0) <= 1e-9);
  }

  SECTION("closed-form recovery of (0.2, 0.3, 0.5) at M = 256") {
    Blend target{&sources, (Vec(3) << 0.2, 0.3, 0.5).finished()};
    Rng rng(6);
    MixtureFit fit = fit_weights(target, sources, 256, rng);
    CHECK((fit.weights - target.lambda).norm() <= 0.01);
  }

  SECTION("matches grid search within 0.02 per coordinate on random instances") {
    Rng rng(7);
    for (int inst = 0; inst < 15; ++inst) {
      std::vector<Gmm> src = {gmm(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.6, 1.5)),
                              gmm(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.6, 1.5)),
                              gmm(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.6, 1.5))};
      Gmm target = gmm(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.6, 1.5));
      Rng fit_rng = rng.child(static_cast<std::uint64_t>(inst));
      MixtureFit fit = fit_weights(target, src, 64, fit_rng);
      const Vec grid = grid_search_lambda(fit.pdfs, 0.01);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(fit.weights[k] - grid[k]) <= 0.02);
    }
  }

  SECTION("objective at the fit beats every vertex and the uniform weights") {
    Rng rng(8);
    Gmm target = gmm(0.5, 0.5, 1.0);
    Rng fit_rng = rng;
    MixtureFit fit = fit_weights(target, sources, 64, fit_rng);
    const Vec t = fit.pdfs.col(0);
    const Mat P = fit.pdfs.rightCols(3);
    const double at_fit = (t - P * fit.weights).squaredNorm();
    for (int k = 0; k < 3; ++k) {
      Vec vertex = Vec::Zero(3);
      vertex[k] = 1.0;
      CHECK(at_fit <= (t - P * vertex).squaredNorm() + 1e-12);
    }
    CHECK(at_fit <= (t - P * Vec::Constant(3, 1.0 / 3.0)).squaredNorm() + 1e-12);
  }

  SECTION("argmin is invariant to a common pdf rescaling, delta scales quadratically") {
    struct Scaled {
      const Gmm* base;
      double c;
      double log_pdf(const Vec& x) const { return base->log_pdf(x) + std::log(c); }
      std::vector<Vec> sample(std::size_t n, Rng& rng) const { return base->sample(n, rng); }
    };
    const double c = 7.5;
    Gmm target = gmm(1.0, -0.5, 1.0);
    std::vector<Scaled> scaled;
    for (const auto& s : sources) scaled.push_back(Scaled{&s, c});
    Scaled starget{&target, c};

    Rng r1(9), r2(9);
    MixtureFit plain = fit_weights(target, sources, 64, r1);
    MixtureFit scl = fit_weights(starget, scaled, 64, r2);
    CHECK((plain.weights - scl.weights).lpNorm<Eigen::Infinity>() <= 1e-6);
    CHECK(scl.delta == Catch::Approx(plain.delta * c * c).epsilon(1e-6));
  }

  SECTION("input validation") {
    Rng rng(10);
    std::vector<Gmm> none;
    CHECK_THROWS_AS(fit_weights(sources[0], none, 16, rng), std::invalid_argument);
    CHECK_THROWS_AS(fit_weights(sources[0], sources, 2, rng), std::invalid_argument);
  }
}

TEST_CASE("baseline gap") {
  std::vector<Gmm> sources = three_sources();

  SECTION("fit beats the chance baseline when the target is a source") {
    Rng r1(11), r2(11);
    MixtureFit fit = fit_weights(sources[0], sources, 64, r1);
    GapSummary base = baseline_gap(sources[0], sources, 64, 200, r2);
    CHECK(base.median > fit.delta);
  }

  SECTION("singleton simplex makes baseline equal the fit exactly") {
    std::vector<Gmm> one = {gmm(0, 0, 1.0)};
    Gmm target = gmm(0.5, 0.0, 1.2);
    Rng r1(12), r2(12);
    MixtureFit fit = fit_weights(target, one, 32, r1);
    GapSummary base = baseline_gap(target, one, 32, 50, r2);
    for (double d : base.deltas) CHECK(d == fit.delta);
  }

  SECTION("summary is stable across seeds within the quartile spread") {
    Gmm target = gmm(0.3, 0.8, 1.0);
    Rng r1(13), r2(14);
    GapSummary a = baseline_gap(target, sources, 64, 200, r1);
    GapSummary b = baseline_gap(target, sources, 64, 200, r2);
    const double spread = (a.q3 - a.q1) + (b.q3 - b.q1);
    CHECK(std::abs(a.median - b.median) <= spread);
  }

  SECTION("trials floor") {
    Rng rng(15);
    CHECK_THROWS_AS(baseline_gap(sources[0], sources, 16, 10, rng), std::invalid_argument);
  }
}

TEST_CASE("noise sweep smoke run") {
  // tiny flow + tiny bags: structural checks and determinism
  ParamSpace sp = default_space();
  Rng frng(16);
  FlowConfig fcfg;
  fcfg.n_layers = 2;
  fcfg.bins = 4;
  fcfg.hidden = {8};
  ConditionalFlow flow(sp, kObsDim, fcfg, frng);

  const auto regions = default_sweep_regions();
  std::vector<ObservationBag> src_bags;
  for (int k = 0; k < 3; ++k) src_bags.push_back(make_region_bag(sp, regions[k], 6, 100 + k));
  ObservationBag out_bag = make_region_bag(sp, regions[3], 10, 200);

  Vec lambda(3);
  lambda << 0.2, 0.3, 0.5;
  Rng r1(17), r2(17);
  SweepResult a = noise_sweep(flow, src_bags, lambda, out_bag, {0.0, 0.5, 1.0}, 2, 8, r1, 10, 30);
  SweepResult b = noise_sweep(flow, src_bags, lambda, out_bag, {0.0, 0.5, 1.0}, 2, 8, r2, 10, 30);

  REQUIRE(a.rows.size() == 6);
  CHECK(a.bootstrap_deltas.size() == 10);
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].eta == b.rows[i].eta);
    CHECK(a.rows[i].d_e == b.rows[i].d_e);
    CHECK(a.rows[i].delta == b.rows[i].delta);
    CHECK(a.rows[i].delta >= 0.0);
    CHECK(std::abs(a.fitted_weights[i].sum() - 1.0) <= 1e-9);
    CHECK(a.fitted_weights[i].minCoeff() >= 0.0);
  }
  CHECK_THROWS_AS(noise_sweep(flow, src_bags, lambda, out_bag, {1.5}, 2, 8, r1), std::invalid_argument);
  CHECK_THROWS_AS(noise_sweep(flow, src_bags, Vec::Ones(2), out_bag, {0.5}, 2, 8, r1), std::invalid_argument);
}
