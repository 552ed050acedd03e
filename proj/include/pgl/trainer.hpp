#pragma once

// The periodically guided training loop.
//
// Local epoch, per mini-batch, j = 1..J in order:
//   x <- detach(X_{j-1}); (X_j, logits_j) = forward_local(j, x)
//   step theta_j and gamma_j on CE(logits_j)
// Block j+1 consumes X_j as computed before block j's step.
//
// Guided epoch, per mini-batch:
//   one uninterrupted forward; step every theta_j on the global CE;
//   step each gamma_j on CE(head_j(detached X_j)).

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pgl/data.hpp"
#include "pgl/decoupled_net.hpp"
#include "pgl/optim.hpp"
#include "pgl/schedule.hpp"

namespace pgl {

struct AugmentSpec {
  std::size_t pad = 0;
  double flip_prob = 0.0;

  bool enabled() const { return pad > 0 || flip_prob > 0; }
};

struct RunConfig {
  NetworkSpec network = MlpSpec{std::vector<std::size_t>(8, 64), 2, 3};
  std::size_t J = 4;
  AuxPolicy aux = AuxPolicy::adapt();
  Schedule schedule;  // E = 160, P = 10, Q = 2, pgl
  double lr0 = 0.8;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 1024;
  std::uint64_t seed = 0;
  DatasetSpec dataset = SpiralsSpec{};
  AugmentSpec augment;
  std::string out_dir = "runs/default";

  /// Checks everything that does not require touching the filesystem.
  void validate() const {
    pgl::validate(network);
    schedule.validate();
    const std::size_t partitionable = backbone_layout(network).size() - 1;
    partition(partitionable, J);
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr0 > 0)) throw ConfigError("lr0 must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
    if (augment.enabled() && !is_resnet(network)) throw ConfigError("augment applies to image inputs only");
    const std::size_t classes = num_classes(network);
    if (auto* s = std::get_if<SpiralsSpec>(&dataset)) {
      if (s->classes != classes) throw ConfigError("dataset.classes does not match network.num_classes");
      auto* m = std::get_if<MlpSpec>(&network);
      if (!m || m->input_dim != 2) throw ConfigError("spirals require an mlp network with input_dim 2");
    } else if (auto* b = std::get_if<BlobsSpec>(&dataset)) {
      if (b->classes != classes) throw ConfigError("dataset.classes does not match network.num_classes");
      auto* m = std::get_if<MlpSpec>(&network);
      if (!m || m->input_dim != b->dim) throw ConfigError("blobs require an mlp network with input_dim == dataset.dim");
    }
  }
};

struct MetricsRecord {
  int epoch = 0;
  Mode mode = Mode::Local;
  double lr = 0.0;
  std::optional<double> global_loss;
  std::vector<std::optional<double>> local_losses;  // J entries
  double train_acc = 0.0;
  double test_acc = 0.0;
};

namespace detail {

inline std::vector<ParamRef> concat(std::vector<ParamRef> a, const std::vector<ParamRef>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

/// One greedy pass over `data`; returns the sample-weighted mean local loss
/// of every block.
inline std::vector<double> local_epoch(DecoupledModel& model, const std::vector<Batch>& data, OptimizerState& opt,
                                       double lr) {
  const std::size_t J = model.J();
  std::vector<double> totals(J, 0.0);
  std::size_t seen = 0;
  for (const auto& batch : data) {
    Tensor x = batch.inputs;
    for (std::size_t j = 1; j <= J; ++j) {
      auto out = forward_local(model, detach(x), j, Phase::train);
      auto loss = softmax_cross_entropy(out.logits, std::span<const int>(batch.labels));
      auto grads = backward(loss);
      auto params = detail::concat(block_params(model, j), head_params(model, j));
      sgd_nesterov_step(params, grads, opt, lr);
      totals[j - 1] += static_cast<double>(loss.item()) * static_cast<double>(batch.labels.size());
      x = out.features;
    }
    seen += batch.labels.size();
  }
  for (auto& t : totals) t /= static_cast<double>(std::max<std::size_t>(seen, 1));
  return totals;
}

struct GuidedLosses {
  double global = 0.0;
  std::vector<double> aux;  // J - 1 entries, empty when heads are not trained
};

/// One globally guided pass. With `train_aux` false the heads are left
/// untouched and the epoch is plain backpropagation.
inline GuidedLosses guided_epoch(DecoupledModel& model, const std::vector<Batch>& data, OptimizerState& opt, double lr,
                                 bool train_aux = true) {
  GuidedLosses result;
  const std::size_t heads = train_aux ? model.heads.size() : 0;
  result.aux.assign(heads, 0.0);
  std::size_t seen = 0;
  auto theta = backbone_params(model);
  for (const auto& batch : data) {
    std::span<const int> labels(batch.labels);
    auto out = forward_global(model, batch.inputs, Phase::train);
    auto loss = softmax_cross_entropy(out.logits, labels);
    sgd_nesterov_step(theta, backward(loss), opt, lr);
    result.global += static_cast<double>(loss.item()) * static_cast<double>(labels.size());
    for (std::size_t j = 1; j <= heads; ++j) {
      auto aux_loss = softmax_cross_entropy(forward_head(model, j, out.boundaries[j - 1], Phase::train), labels);
      sgd_nesterov_step(head_params(model, j), backward(aux_loss), opt, lr);
      result.aux[j - 1] += static_cast<double>(aux_loss.item()) * static_cast<double>(labels.size());
    }
    seen += labels.size();
  }
  const double denom = static_cast<double>(std::max<std::size_t>(seen, 1));
  result.global /= denom;
  for (auto& a : result.aux) a /= denom;
  return result;
}

/// Fraction of samples whose argmax global logit equals the label.
inline double evaluate(DecoupledModel& model, const Dataset& data, std::size_t batch_size = 256) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (const auto& batch : sequential_batches(data, batch_size)) {
    auto logits = forward_global(model, batch.inputs, Phase::eval).logits;
    const std::size_t c = logits.dim(1);
    const auto& z = logits.values();
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      auto row = z.begin() + static_cast<std::ptrdiff_t>(i * c);
      auto best = static_cast<int>(std::max_element(row, row + static_cast<std::ptrdiff_t>(c)) - row);
      if (best == batch.labels[i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct TrainOptions {
  /// Replaces the schedule's mode decision (used to force all-Guided runs).
  std::function<Mode(int)> mode_override;
  std::function<void(const MetricsRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<MetricsRecord> metrics;
  DecoupledModel model;
  OptimizerState optimizer;
};

inline DecoupledModel model_for(const RunConfig& cfg) { return build_model(cfg.network, cfg.J, cfg.aux, cfg.seed); }

inline TrainResult train(const RunConfig& cfg, const DataSplit& data, const TrainOptions& options = {}) {
  cfg.validate();
  TrainResult r{{}, model_for(cfg), OptimizerState{cfg.lr0, cfg.momentum, cfg.weight_decay, {}}};
  const std::size_t J = r.model.J();
  const bool train_aux = cfg.schedule.regime != Regime::bp;
  for (int e = 0; e < cfg.schedule.E; ++e) {
    MetricsRecord rec;
    rec.epoch = e;
    rec.lr = lr_at(e, cfg.schedule.E, cfg.lr0);
    rec.mode = options.mode_override ? options.mode_override(e) : mode_of_epoch(e, cfg.schedule);
    rec.local_losses.assign(J, std::nullopt);

    auto epoch_batches = batches(data.train, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(e));
    if (cfg.augment.enabled()) {
      std::mt19937_64 aug_rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(e));
      for (auto& b : epoch_batches) b.inputs = augment(b.inputs, cfg.augment.pad, cfg.augment.flip_prob, aug_rng);
    }

    if (rec.mode == Mode::Local) {
      auto losses = local_epoch(r.model, epoch_batches, r.optimizer, rec.lr);
      for (std::size_t j = 0; j < J; ++j) rec.local_losses[j] = losses[j];
    } else {
      auto losses = guided_epoch(r.model, epoch_batches, r.optimizer, rec.lr, train_aux);
      rec.global_loss = losses.global;
      for (std::size_t j = 0; j < losses.aux.size(); ++j) rec.local_losses[j] = losses.aux[j];
    }
    rec.train_acc = evaluate(r.model, data.train);
    rec.test_acc = evaluate(r.model, data.test);
    if (options.on_epoch) options.on_epoch(rec);
    r.metrics.push_back(std::move(rec));
  }
  return r;
}

/// Reshapes image data for flat backbones and checks the input geometry.
inline void conform_inputs(const NetworkSpec& net, Dataset& ds) {
  Shape want = input_shape(net, ds.size());
  if (!is_resnet(net) && ds.inputs.rank() > 2) ds.inputs = detach(flatten(ds.inputs));
  if (ds.inputs.shape() != want)
    throw DataError("dataset inputs " + to_string(ds.inputs.shape()) + " do not fit network input " + to_string(want));
  if (ds.num_classes > num_classes(net))
    throw DataError("dataset has " + std::to_string(ds.num_classes) + " classes, network predicts " +
                    std::to_string(num_classes(net)));
}

inline DataSplit load_data(const RunConfig& cfg) {
  auto data = make_datasets(cfg.dataset);
  conform_inputs(cfg.network, data.train);
  conform_inputs(cfg.network, data.test);
  return data;
}

inline TrainResult train(const RunConfig& cfg, const TrainOptions& options = {}) {
  cfg.validate();
  return train(cfg, load_data(cfg), options);
}

}  // namespace pgl
