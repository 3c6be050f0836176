#include <catch2/catch_amalgamated.hpp>

#include "odc/io.hpp"
#include "odc/npe.hpp"
#include "linear_gaussian.hpp"
#include "test_util.hpp"

using namespace odc;

TEST_CASE("npe loss on the identity flow at prior midpoints") {
  ParamSpace sp = default_space();
  Rng rng(1);
  ConditionalFlow flow(sp, 8, FlowConfig{}, rng);

  Vec theta(6);
  int k = 0;
  for (int i : sp.predicted_indices()) theta[k++] = sp.dims[i].midpoint();
  std::vector<Vec> thetas(4, theta);
  std::vector<Vec> ctxs(4, Vec::Zero(8));

  const double expected = 3.0 * std::log(2.0 * M_PI) - sp.log_jacobian_to_model();
  CHECK(npe_loss(flow, thetas, ctxs) == Catch::Approx(expected).margin(1e-9));
}

TEST_CASE("npe loss gradient matches finite differences on a tiny flow") {
  ParamSpace sp = ParamSpace({{"a", 0.0, 10.0}, {"b", -5.0, 5.0}}, {true, true});
  FlowConfig cfg;
  cfg.n_layers = 2;
  cfg.bins = 4;
  cfg.hidden = {8};
  Rng rng(3);
  ConditionalFlow flow(sp, 2, cfg, rng);
  for (auto& layer : flow.layers) {
    for (Eigen::Index r = 0; r < layer.conditioner.W.back().rows(); ++r) {
      layer.conditioner.b.back()[r] = rng.uniform(-0.5, 0.5);
      for (Eigen::Index c = 0; c < layer.conditioner.W.back().cols(); ++c)
        layer.conditioner.W.back()(r, c) = rng.uniform(-0.5, 0.5);
    }
  }

  std::vector<Vec> thetas, ctxs;
  for (int i = 0; i < 6; ++i) {
    Vec t(2), c(2);
    t << rng.uniform(0.5, 9.5), rng.uniform(-4.5, 4.5);
    c << rng.uniform(-1, 1), rng.uniform(-1, 1);
    thetas.push_back(t);
    ctxs.push_back(c);
  }

  FlowGrads grads = FlowGrads::zeros_like(flow);
  npe_loss_grad(flow, thetas, ctxs, grads);

  const double h = 1e-5;
  int checked = 0;
  for (std::size_t l = 0; l < flow.layers.size(); ++l) {
    DenseNet& net = flow.layers[l].conditioner;
    for (int kk = 0; kk < net.n_layers(); ++kk)
      for (Eigen::Index r = 0; r < net.W[kk].rows(); r += 3)
        for (Eigen::Index c = 0; c < net.W[kk].cols(); c += 2) {
          const double orig = net.W[kk](r, c);
          net.W[kk](r, c) = orig + h;
          const double fp = npe_loss(flow, thetas, ctxs);
          net.W[kk](r, c) = orig - h;
          const double fm = npe_loss(flow, thetas, ctxs);
          net.W[kk](r, c) = orig;
          const double fd = (fp - fm) / (2 * h);
          CHECK(std::abs(grads.per_layer[l].dW[kk](r, c) - fd) <= 1e-3 * std::max(1e-3, std::abs(fd)));
          ++checked;
        }
  }
  CHECK(checked > 50);
}

TEST_CASE("smoke training decreases the loss on a small dataset") {
  ParamSpace sp = default_space();
  Dataset ds = generate_dataset(sp, 2000, 11, SplitFractions{0.8, 0.2, 0.0});
  TrainConfig cfg;
  cfg.batch_size = 128;
  cfg.max_epochs = 10;
  cfg.patience = 10;
  cfg.seed = 5;
  cfg.flow.n_layers = 4;
  cfg.flow.bins = 6;
  cfg.flow.hidden = {24};
  auto [flow, report] = train(ds, cfg);
  REQUIRE(report.train_loss.size() == 10);
  CHECK(report.train_loss.back() < report.train_loss.front());
  CHECK(report.best_val == *std::min_element(report.val_loss.begin(), report.val_loss.end()));
}

TEST_CASE("training on the linear-Gaussian toy reaches the analytic cross-entropy") {
  testutil::LinearGaussian lg = testutil::lin_gauss_2d();
  Dataset ds = lg.make_dataset(6000, 21, SplitFractions{5.0 / 6.0, 1.0 / 6.0, 0.0});

  TrainConfig cfg;
  cfg.batch_size = 128;
  cfg.lr = 2e-3;
  cfg.max_epochs = 60;
  cfg.patience = 8;
  cfg.seed = 7;
  cfg.flow.n_layers = 4;
  cfg.flow.bins = 6;
  cfg.flow.hidden = {32};
  auto [flow, report] = train(ds, cfg);

  const double oracle = lg.cross_entropy(ds.split_records(1));
  CHECK(std::abs(report.best_val - oracle) <= 0.1);
}

TEST_CASE("training is deterministic and honors patience") {
  ParamSpace sp = default_space();
  Dataset ds = generate_dataset(sp, 600, 13, SplitFractions{0.5, 0.5, 0.0});
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 8;
  cfg.patience = 2;
  cfg.seed = 17;
  cfg.flow.n_layers = 2;
  cfg.flow.bins = 4;
  cfg.flow.hidden = {12};

  SECTION("same seed gives identical reports and parameters") {
    auto [flow_a, rep_a] = train(ds, cfg);
    auto [flow_b, rep_b] = train(ds, cfg);
    CHECK(rep_a.train_loss == rep_b.train_loss);
    CHECK(rep_a.val_loss == rep_b.val_loss);
    CHECK(rep_a.best_epoch == rep_b.best_epoch);
    for (std::size_t l = 0; l < flow_a.layers.size(); ++l)
      for (int k = 0; k < flow_a.layers[l].conditioner.n_layers(); ++k)
        CHECK(flow_a.layers[l].conditioner.W[k] == flow_b.layers[l].conditioner.W[k]);
  }

  SECTION("patience 0 stops at the first non-improving epoch") {
    cfg.patience = 0;
    cfg.max_epochs = 40;
    auto [flow, rep] = train(ds, cfg);
    if (rep.val_loss.size() < 40) {
      // every epoch but the last strictly improved on the running best
      double best = rep.val_loss[0];
      for (std::size_t e = 1; e + 1 < rep.val_loss.size(); ++e) {
        CHECK(rep.val_loss[e] < best);
        best = std::min(best, rep.val_loss[e]);
      }
      CHECK(rep.val_loss.back() >= best);
    }
  }
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  ParamSpace sp = default_space();
  Dataset ds = generate_dataset(sp, 64, 19, SplitFractions{0.5, 0.5, 0.0});
  ds.records[3].obs[2] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.max_epochs = 2;
  cfg.flow.n_layers = 2;
  cfg.flow.bins = 4;
  cfg.flow.hidden = {8};
  CHECK_THROWS_AS(train(ds, cfg), std::runtime_error);
}
