#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "trackteller/pipeline.hpp"

namespace trackteller::pipeline {

struct TrainConfig {
  double lr = 2e-4;
  int epochs = 1;
  int batch_sequences = 1;
  LossParams loss;
  std::uint64_t seed = 0;
};

struct StepLog {
  long step = 0;
  int epoch = 0;
  int first_sequence = 0;
  objective::LossBreakdown loss;  // batch mean
};

struct TrainResult {
  long steps = 0;
  double first_loss = 0;
  double final_loss = 0;
  double best_loss = std::numeric_limits<double>::infinity();
  long best_step = 0;
  std::string best_params;  // serialized snapshot at the best step
};

inline std::string serialize_params(const ParamStore& ps) {
  std::ostringstream os(std::ios::binary);
  ps.serialize(os, /*with_adam=*/true);
  return os.str();
}

inline ParamStore deserialize_params(const std::string& blob) {
  std::istringstream is(blob, std::ios::binary);
  return ParamStore::deserialize(is, "<memory>");
}

// Serial optimization over the dataset: per optimizer step, gradients of
// batch_sequences consecutive sequences are accumulated in index order,
// then one Adam update is applied. A non-finite loss aborts with the
// offending step in the message.
inline TrainResult train(
    ParamStore& ps, const std::vector<SequenceData>& dataset,
    const scenekit::WorldConfig& world, const ModelConfig& model,
    const TrainConfig& cfg,
    const std::function<void(const StepLog&)>& log = nullptr) {
  if (dataset.empty()) throw DomainError("train: empty dataset");
  numcore::AdamConfig adam;
  adam.lr = cfg.lr;
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::size_t i = 0;
    while (i < dataset.size()) {
      std::size_t batch_end =
          std::min(dataset.size(), i + std::size_t(std::max(1, cfg.batch_sequences)));
      numcore::GradMap acc;
      objective::LossBreakdown batch_mean;
      int batch_n = 0;
      for (std::size_t s = i; s < batch_end; ++s, ++batch_n) {
        auto seq_result =
            run_sequence(dataset[s], ps, world, model, /*with_loss=*/true, cfg.loss);
        const auto& loss = seq_result.loss;
        if (!std::isfinite(loss.total))
          throw NumericError("non-finite loss at step " +
                             std::to_string(result.steps) + " (epoch " +
                             std::to_string(epoch) + ", sequence " +
                             std::to_string(s) + ")");
        auto grads = numcore::backward(loss.total_tensor, ps);
        if (acc.empty()) {
          acc = std::move(grads);
        } else {
          for (auto& [name, g] : acc) {
            const auto& add = grads.at(name);
            for (std::size_t e = 0; e < g.size(); ++e) g[e] += add[e];
          }
        }
        batch_mean.cls += loss.cls;
        batch_mean.bbox += loss.bbox;
        batch_mean.mem += loss.mem;
        batch_mean.fut += loss.fut;
        batch_mean.ground += loss.ground;
        batch_mean.total += loss.total;
      }
      batch_mean.cls /= batch_n;
      batch_mean.bbox /= batch_n;
      batch_mean.mem /= batch_n;
      batch_mean.fut /= batch_n;
      batch_mean.ground /= batch_n;
      batch_mean.total /= batch_n;

      ps.step_adam(acc, adam);
      if (result.steps == 0) result.first_loss = batch_mean.total;
      result.final_loss = batch_mean.total;
      if (batch_mean.total < result.best_loss) {
        result.best_loss = batch_mean.total;
        result.best_step = result.steps;
        result.best_params = serialize_params(ps);
      }
      if (log) log({result.steps, epoch, static_cast<int>(i), batch_mean});
      ++result.steps;
      i = batch_end;
    }
  }
  if (result.best_params.empty()) result.best_params = serialize_params(ps);
  return result;
}

}  // namespace trackteller::pipeline
