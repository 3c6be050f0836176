#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "odc/flow.hpp"
#include "odc/simulator.hpp"

namespace odc {

struct TrainConfig {
  int batch_size = 256;
  double lr = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  double lr_decay = 0.5;  // multiplied in after lr_patience non-improving epochs
  int lr_patience = 5;
  std::uint64_t seed = 0;
  FlowConfig flow;

  void validate() const {
    if (batch_size < 1 || lr <= 0.0 || max_epochs < 1 || patience < 0)
      throw std::invalid_argument("TrainConfig: batch size, lr and epochs must be positive");
    if (lr_decay <= 0.0 || lr_decay > 1.0 || lr_patience < 1)
      throw std::invalid_argument("TrainConfig: bad lr schedule");
  }
};

struct TrainReport {
  std::vector<double> train_loss;  // per-epoch mean negative log posterior
  std::vector<double> val_loss;
  int best_epoch = -1;             // 0-based index into the loss arrays
  double best_val = std::numeric_limits<double>::infinity();
};

struct TrainBatch {
  Mat U;  // model coordinates, one row per pair
  Mat C;  // contexts
};

inline TrainBatch pack_pairs(const ConditionalFlow& flow, const std::vector<Vec>& thetas,
                             const std::vector<Vec>& contexts) {
  if (thetas.empty() || thetas.size() != contexts.size())
    throw std::invalid_argument("pack_pairs: need a nonempty matched batch");
  TrainBatch b;
  b.U = Mat(thetas.size(), flow.ndim);
  b.C = Mat(contexts.size(), flow.ctx_dim);
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    b.U.row(static_cast<Eigen::Index>(i)) = to_model(flow.space, thetas[i]).transpose();
    b.C.row(static_cast<Eigen::Index>(i)) = contexts[i].transpose();
  }
  return b;
}

// Mean of -log q(theta | x) over a batch, in physical units.
inline double npe_loss(const ConditionalFlow& flow, const std::vector<Vec>& thetas,
                       const std::vector<Vec>& contexts) {
  TrainBatch b = pack_pairs(flow, thetas, contexts);
  return -flow.log_prob_model_batch(b.U, b.C).mean() - flow.space.log_jacobian_to_model();
}

// Same loss with exact gradients for every conditioner parameter (the
// standardization constant does not depend on them).
inline double npe_loss_grad(const ConditionalFlow& flow, const std::vector<Vec>& thetas,
                            const std::vector<Vec>& contexts, FlowGrads& grads) {
  TrainBatch b = pack_pairs(flow, thetas, contexts);
  return flow_nll_grad(flow, b.U, b.C, grads) - flow.space.log_jacobian_to_model();
}

namespace detail {

inline double mean_nll_physical(const ConditionalFlow& flow, const Mat& U, const Mat& C) {
  return -flow.log_prob_model_batch(U, C).mean() - flow.space.log_jacobian_to_model();
}

}  // namespace detail

// Maximum-likelihood training of the posterior flow: Adam over shuffled
// minibatches, early stopping on the validation loss, best-epoch restore.
// Fully deterministic given config.seed.
inline std::pair<ConditionalFlow, TrainReport> train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  const auto train_recs = dataset.split_records(0);
  const auto val_recs = dataset.split_records(1);
  if (train_recs.empty() || val_recs.empty())
    throw std::invalid_argument("train: dataset needs nonempty train and val splits");

  Rng root(config.seed);
  Rng init_rng = root.child(1);
  const int ctx_dim = static_cast<int>(dataset.records.front().obs.size());
  ConditionalFlow flow(dataset.space, ctx_dim, config.flow, init_rng);

  auto pack = [&](const std::vector<const Record*>& recs) {
    TrainBatch b;
    b.U = Mat(recs.size(), flow.ndim);
    b.C = Mat(recs.size(), flow.ctx_dim);
    for (std::size_t i = 0; i < recs.size(); ++i) {
      b.U.row(static_cast<Eigen::Index>(i)) =
          to_model(flow.space, flow.space.weather_of(recs[i]->params)).transpose();
      b.C.row(static_cast<Eigen::Index>(i)) = recs[i]->obs.transpose();
    }
    return b;
  };
  TrainBatch tr = pack(train_recs);
  TrainBatch va = pack(val_recs);
  const double log_jac = flow.space.log_jacobian_to_model();

  std::vector<AdamState> opt;
  for (const auto& layer : flow.layers)
    opt.push_back(AdamState::zeros_like(layer.conditioner, AdamConfig{config.lr, 0.9, 0.999, 1e-8}));
  FlowGrads grads = FlowGrads::zeros_like(flow);

  TrainReport report;
  std::vector<CouplingLayer> best_layers = flow.layers;
  int bad_epochs = 0;
  const Eigen::Index n_train = tr.U.rows();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng epoch_rng = root.child(2, static_cast<std::uint64_t>(epoch));
    epoch_rng.shuffle(order);

    double epoch_loss = 0.0;
    Eigen::Index done = 0;
    while (done < n_train) {
      const Eigen::Index bs = std::min<Eigen::Index>(config.batch_size, n_train - done);
      Mat U(bs, flow.ndim), C(bs, flow.ctx_dim);
      for (Eigen::Index i = 0; i < bs; ++i) {
        U.row(i) = tr.U.row(order[static_cast<std::size_t>(done + i)]);
        C.row(i) = tr.C.row(order[static_cast<std::size_t>(done + i)]);
      }
      grads.setZero();
      const double loss = flow_nll_grad(flow, U, C, grads);
      if (!std::isfinite(loss))
        throw std::runtime_error("train: loss diverged (non-finite) at epoch " + std::to_string(epoch));
      for (std::size_t l = 0; l < flow.layers.size(); ++l)
        adam_step(flow.layers[l].conditioner, grads.per_layer[l], opt[l]);
      epoch_loss += loss * static_cast<double>(bs);
      done += bs;
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n_train) - log_jac);

    const double val = detail::mean_nll_physical(flow, va.U, va.C);
    if (!std::isfinite(val))
      throw std::runtime_error("train: validation loss diverged at epoch " + std::to_string(epoch));
    report.val_loss.push_back(val);

    if (val < report.best_val) {
      report.best_val = val;
      report.best_epoch = epoch;
      best_layers = flow.layers;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs > config.patience) break;
      if (config.lr_decay < 1.0 && bad_epochs % config.lr_patience == 0)
        for (auto& state : opt) state.cfg.lr = std::max(state.cfg.lr * config.lr_decay, 1e-6);
    }
  }

  flow.layers = std::move(best_layers);  // restore the best-val checkpoint
  return {std::move(flow), std::move(report)};
}

}  // namespace odc
