#include <catch2/catch_amalgamated.hpp>

#include "odc/domain.hpp"
#include "test_util.hpp"

using namespace odc;

namespace {

ConditionalFlow make_flow(std::uint64_t seed, double amp, FlowConfig cfg, int ctx_dim, ParamSpace sp) {
  Rng rng(seed);
  ConditionalFlow flow(sp, ctx_dim, cfg, rng);
  for (auto& layer : flow.layers) {
    Mat& W = layer.conditioner.W.back();
    Vec& b = layer.conditioner.b.back();
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
      b[r] = rng.uniform(-amp, amp);
      for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = rng.uniform(-amp, amp);
    }
  }
  return flow;
}

FlowConfig small_cfg() {
  FlowConfig cfg;
  cfg.n_layers = 4;
  cfg.bins = 6;
  cfg.hidden = {16};
  return cfg;
}

ParamSpace space2d() { return ParamSpace({{"a", 0.0, 10.0}, {"b", -5.0, 5.0}}, {true, true}); }

Vec obs2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

}  // namespace

TEST_CASE("characterize basics") {
  ConditionalFlow flow = make_flow(1, 0.4, small_cfg(), 2, space2d());

  SECTION("single-element bag reduces to the posterior") {
    ObservationBag bag;
    bag.add(obs2(0.2, -0.3));
    DomainCharacterization ch = characterize(flow, bag);
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
      Vec theta(2);
      theta << rng.uniform(0, 10), rng.uniform(-5, 5);
      CHECK(ch.log_pdf(theta) == Catch::Approx(flow.log_prob(theta, bag.entries[0].obs)).margin(1e-12));
    }
  }

  SECTION("duplicated entries are idempotent") {
    ObservationBag one, two;
    one.add(obs2(0.5, 0.1));
    two.add(obs2(0.5, 0.1), 1.0);
    two.add(obs2(0.5, 0.1), 1.0);
    DomainCharacterization cha = characterize(flow, one);
    DomainCharacterization chb = characterize(flow, two);
    Vec theta(2);
    theta << 4.0, 1.0;
    CHECK(cha.log_pdf(theta) == Catch::Approx(chb.log_pdf(theta)).margin(1e-12));
  }

  SECTION("three-element bag matches direct summation to 1e-12") {
    ObservationBag bag;
    bag.add(obs2(0.1, 0.9), 2.0);
    bag.add(obs2(-0.4, 0.2), 5.0);
    bag.add(obs2(0.7, -0.6), 3.0);
    DomainCharacterization ch = characterize(flow, bag);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
      Vec theta(2);
      theta << rng.uniform(0, 10), rng.uniform(-5, 5);
      double direct = 0.0;
      for (const auto& e : bag.entries)
        direct += (e.weight / 10.0) * std::exp(flow.log_prob(theta, e.obs));
      CHECK(ch.pdf(theta) == Catch::Approx(direct).epsilon(1e-12));
    }
  }

  SECTION("batched pdf equals the scalar path") {
    ObservationBag bag;
    bag.add(obs2(0.1, 0.9), 1.0);
    bag.add(obs2(-0.4, 0.2), 2.0);
    DomainCharacterization ch = characterize(flow, bag);
    std::vector<Vec> thetas;
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      Vec t(2);
      t << rng.uniform(0, 10), rng.uniform(-5, 5);
      thetas.push_back(t);
    }
    Vec lp = ch.log_pdf_batch(thetas);
    for (std::size_t i = 0; i < thetas.size(); ++i)
      CHECK(lp[static_cast<Eigen::Index>(i)] == Catch::Approx(ch.log_pdf(thetas[i])).margin(1e-10));
  }

  SECTION("nonpositive weights are rejected") {
    ObservationBag bag;
    bag.add(obs2(0, 0), 0.0);
    CHECK_THROWS_AS(characterize(flow, bag), std::invalid_argument);
    ObservationBag empty;
    CHECK_THROWS_AS(characterize(flow, empty), std::invalid_argument);
  }
}

TEST_CASE("domain sampling") {
  ConditionalFlow flow = make_flow(5, 0.4, small_cfg(), 2, space2d());

  SECTION("single-entry bags sample exactly like the flow") {
    ObservationBag bag;
    bag.add(obs2(0.3, 0.3));
    DomainCharacterization ch = characterize(flow, bag);
    Rng a(6), b(6);
    auto sa = ch.sample(20, a);
    auto sb = flow.sample(bag.entries[0].obs, 20, b);
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i] == sb[i]);
  }

  SECTION("near-zero weights almost never select the second component") {
    ObservationBag bag;
    bag.add(obs2(0.0, 0.0), 1.0);
    bag.add(obs2(0.9, 0.9), 1e-7);
    DomainCharacterization ch = characterize(flow, bag);
    Rng rng(7);
    const std::size_t n = 10000;
    std::vector<std::size_t> comps;
    ch.sample(n, rng, &comps);
    std::size_t second = 0;
    for (std::size_t c : comps) second += (c == 1) ? 1 : 0;
    CHECK(second <= 2);
  }

  SECTION("empirical marginal matches the mixture pdf on a grid") {
    ObservationBag bag;
    bag.add(obs2(0.6, -0.5), 1.0);
    bag.add(obs2(-0.7, 0.8), 2.0);
    DomainCharacterization ch = characterize(flow, bag);

    // expected masses of the first physical coordinate by 2-D quadrature
    const int bins = 20;
    const double lo = 0.0, hi = 10.0;
    const double bw = (hi - lo) / bins;
    std::vector<double> expected(bins + 1, 0.0);
    const int qx = 12, qy = 900;
    const double y_lo = -25.0, y_hi = 25.0;  // flow support in physical units spans +-4.5 model units
    const double dy = (y_hi - y_lo) / qy;
    double inside = 0.0;
    for (int b = 0; b < bins; ++b) {
      double m = 0.0;
      for (int i = 0; i < qx; ++i) {
        const double x = lo + (b + (i + 0.5) / qx) * bw;
        for (int j = 0; j < qy; ++j) {
          Vec theta(2);
          theta << x, y_lo + (j + 0.5) * dy;
          m += ch.pdf(theta) * (bw / qx) * dy;
        }
      }
      expected[static_cast<std::size_t>(b)] = m;
      inside += m;
    }
    expected[bins] = std::max(0.0, 1.0 - inside);
    const double etotal = inside + expected[bins];
    for (auto& e : expected) e /= etotal;

    Rng rng(8);
    const int n = 100000;
    std::vector<double> counts(bins + 1, 0.0);
    for (const auto& s : ch.sample(n, rng)) {
      if (s[0] >= lo && s[0] < hi)
        counts[static_cast<std::size_t>((s[0] - lo) / bw)] += 1.0;
      else
        counts[bins] += 1.0;
    }
    CHECK(testutil::chi2_gof_p(counts, expected, n) > 0.01);
  }
}

TEST_CASE("mixture pdf is linear in the weights") {
  ConditionalFlow flow = make_flow(9, 0.4, small_cfg(), 2, space2d());
  ObservationBag bag1, bag2;
  bag1.add(obs2(0.2, 0.1), 3.0);
  bag1.add(obs2(-0.1, 0.4), 1.0);
  bag2.add(obs2(0.2, 0.1), 1.0);
  bag2.add(obs2(-0.1, 0.4), 2.0);

  const double alpha = 0.35;
  ObservationBag blend;
  blend.add(obs2(0.2, 0.1), alpha * 3.0 / 4.0 + (1 - alpha) * 1.0 / 3.0);
  blend.add(obs2(-0.1, 0.4), alpha * 1.0 / 4.0 + (1 - alpha) * 2.0 / 3.0);

  DomainCharacterization c1 = characterize(flow, bag1);
  DomainCharacterization c2 = characterize(flow, bag2);
  DomainCharacterization cb = characterize(flow, blend);

  Rng rng(10);
  for (int i = 0; i < 30; ++i) {
    Vec theta(2);
    theta << rng.uniform(0, 10), rng.uniform(-5, 5);
    const double want = alpha * c1.pdf(theta) + (1 - alpha) * c2.pdf(theta);
    CHECK(cb.pdf(theta) == Catch::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("temporal weights") {
  SECTION("equal timestamps give equal weights") {
    Vec w = temporal_weights({5.0, 5.0, 5.0}, 2.0);
    CHECK(w[0] == 1.0);
    CHECK(w[1] == 1.0);
    CHECK(w[2] == 1.0);
  }

  SECTION("one half-life of age halves the weight") {
    Vec w = temporal_weights({0.0, 2.0}, 2.0);
    CHECK(w[1] == 1.0);
    CHECK(w[0] == Catch::Approx(0.5).margin(1e-15));
  }

  SECTION("weights decrease with age") {
    Vec w = temporal_weights({3.0, 1.0, 4.0, 0.5}, 1.7);
    CHECK(w[2] == 1.0);
    CHECK(w[2] > w[0]);
    CHECK(w[0] > w[1]);
    CHECK(w[1] > w[3]);
  }

  SECTION("bad inputs") {
    CHECK_THROWS_AS(temporal_weights({1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(temporal_weights({}, 1.0), std::invalid_argument);
  }
}
