#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "grrnn/dataset.hpp"
#include "grrnn/model.hpp"
#include "grrnn/optimizer.hpp"

namespace grrnn {

/// Mean label-smoothed cross entropy over the rows of `logits`.
/// The true class carries weight 1-eps; the remaining eps is spread
/// uniformly over all classes (the true one included).
template <typename T>
Tensor<T> label_smooth_loss(Tape<T>* tape, const Tensor<T>& logits,
                            const std::vector<std::size_t>& labels, double eps) {
  const bool batched = logits.rank() == 2;
  if (logits.rank() != 1 && !batched)
    throw ShapeError("label_smooth_loss: expected rank-1/2 logits, got " +
                     shape_str(logits.shape()));
  const std::size_t n = batched ? logits.dim(0) : 1;
  const std::size_t classes = logits.dim(batched ? 1 : 0);
  if (classes < 2) throw ConfigError("label_smooth_loss: need at least 2 classes");
  if (eps < 0.0 || eps >= 1.0)
    throw ConfigError("label_smooth_loss: eps must lie in [0,1)");
  if (labels.size() != n)
    throw ShapeError("label_smooth_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  for (std::size_t y : labels)
    if (y >= classes)
      throw ValueError("label_smooth_loss: label " + std::to_string(y) +
                       " out of range for " + std::to_string(classes) + " classes");
  if (!logits.all_finite()) throw ValueError("label_smooth_loss: non-finite logits");

  // Row-wise log-softmax, keeping the probabilities for the backward pass.
  std::vector<double> probs(n * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * classes;
    double mx = static_cast<double>(row[0]);
    for (std::size_t j = 1; j < classes; ++j)
      mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j)
      sum += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(sum);
    double row_loss = 0.0;
    for (std::size_t j = 0; j < classes; ++j) {
      const double logp = static_cast<double>(row[j]) - lse;
      probs[i * classes + j] = std::exp(logp);
      row_loss -= eps / static_cast<double>(classes) * logp;
      if (j == labels[i]) row_loss -= (1.0 - eps) * logp;
    }
    total += row_loss;
  }
  auto out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));

  if (tape && logits.requires_grad()) {
    out.set_requires_grad(true);
    Tensor<T> lc = logits, oc = out;
    auto lbl = labels;
    tape->record([lc, oc, probs = std::move(probs), lbl, eps, n, classes]() mutable {
      const T gy = oc.grad_data()[0];
      T* dx = lc.grad_data();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < classes; ++j) {
          double target = eps / static_cast<double>(classes);
          if (j == lbl[i]) target += 1.0 - eps;
          dx[i * classes + j] += static_cast<T>(
              (probs[i * classes + j] - target) / static_cast<double>(n) *
              static_cast<double>(gy));
        }
    });
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch = 16;
  double lr = 1e-4;
  std::size_t halve_every = 10;
  double weight_decay = 1e-4;
  double label_eps = 0.1;
  std::uint64_t seed = 0;
  bool augment = true;
  ImageMode mode = ImageMode::kGray;  // sets the augmentation padding
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_top1 = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,train_loss,train_top1";

inline void write_metrics_csv(const std::string& path,
                              const std::vector<EpochStats>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write metrics file: " + path);
  out << kMetricsHeader << "\n";
  for (const auto& r : rows)
    out << r.epoch << ',' << format_metric(r.lr) << ',' << format_metric(r.train_loss)
        << ',' << format_metric(r.train_top1) << "\n";
  if (!out) throw IoError("failed writing metrics file: " + path);
}

/// Run the optimization loop over the training split.  The model must be
/// constructed and initialized by the caller; every randomized choice is
/// derived from cfg.seed, so equal configurations reproduce equal results.
template <typename T>
std::vector<EpochStats> train_model(GrrnnModel<T>& model,
                                    const std::vector<Sample<T>>& train,
                                    const TrainConfig& cfg,
                                    std::ostream* log = nullptr) {
  if (train.empty()) throw DataError("training split is empty");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  for (const auto& s : train)
    if (s.label >= model.spec().n_writers)
      throw DataError("training label " + std::to_string(s.label) +
                      " exceeds the model's class count");

  model.set_requires_grad(true);
  AdamConfig acfg;
  acfg.weight_decay = cfg.weight_decay;
  Adam<T> opt(acfg);
  model.visit_params(
      [&](const std::string& name, Tensor<T>& t) { opt.add_param(name, t); });

  Rng rng(mix64(cfg.seed ^ 0x7261696e5f726e67ULL));
  const T pad = static_cast<T>(mode_padding(cfg.mode));
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<EpochStats> stats;
  stats.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(cfg.lr, epoch, cfg.halve_every);
    shuffle_indices(order, rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch) {
      const std::size_t end = std::min(begin + cfg.batch, order.size());
      std::vector<std::size_t> labels;
      auto batch =
          make_batch(train, order, begin, end, labels, cfg.augment ? &rng : nullptr, pad);

      model.zero_grad();
      Tape<T> tape;
      auto fwd = model.forward(&tape, batch, true);
      auto loss = label_smooth_loss(&tape, fwd.logits, labels, cfg.label_eps);
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv))
        throw ValueError("non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(begin / cfg.batch));
      tape.backward(loss);
      opt.step(lr);

      loss_sum += lv * static_cast<double>(end - begin);
      const std::size_t classes = model.spec().n_writers;
      for (std::size_t b = 0; b < labels.size(); ++b) {
        const T* row = fwd.logits.data() + b * classes;
        std::size_t best = 0;
        for (std::size_t j = 1; j < classes; ++j)
          if (row[j] > row[best]) best = j;
        if (best == labels[b]) ++correct;
      }
    }
    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.train_loss = loss_sum / static_cast<double>(train.size());
    es.train_top1 = static_cast<double>(correct) / static_cast<double>(train.size());
    stats.push_back(es);
    if (log)
      (*log) << "epoch " << epoch << " lr " << format_metric(lr) << " loss "
             << format_metric(es.train_loss) << " top1 " << format_metric(es.train_top1)
             << "\n";
  }
  return stats;
}

}  // namespace grrnn
