#pragma once

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "asdkit/model.hpp"

// Joint training loop: reconstruction-only epochs with the classifier frozen,
// and periodic joint epochs optimizing (1-alpha)*L_r + alpha*L_c.
namespace asdkit::trainer {

using ag::Tensor;
using model::Model;

/// Flat storage for a set of model windows with machine-ID labels.
struct WindowSet {
  int context_rows = 0, mel = 0, phase_bins = 0;
  int64_t count = 0;
  std::vector<double> ctx;     // count x (context_rows*mel)
  std::vector<double> phase;   // count x (context_rows*phase_bins)
  std::vector<double> center;  // count x mel
  std::vector<int> labels;
  int num_classes = 0;

  void add(const dsp::FrameWindow& w, int label) {
    if (count == 0) {
      context_rows = w.context_rows;
      mel = w.mel_bins;
      phase_bins = w.phase_bins;
    } else if (w.context_rows != context_rows || w.mel_bins != mel ||
               w.phase_bins != phase_bins) {
      throw ContractError("window set: inconsistent window geometry");
    }
    ctx.insert(ctx.end(), w.context.begin(), w.context.end());
    phase.insert(phase.end(), w.phase_context.begin(), w.phase_context.end());
    center.insert(center.end(), w.center.begin(), w.center.end());
    labels.push_back(label);
    ++count;
  }
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 256;
  double lr = 1e-4;
  double alpha = 0.3;
  int classifier_period = 10;  // joint epochs are multiples of this (1-based)
  uint64_t seed = 0;
  bool standardize = true;  // informational; stats are applied via Model::stats

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (classifier_period < 1) throw ConfigError("train: classifier_period must be >= 1");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("train: alpha must be in [0,1)");
  }
};

struct EpochLog {
  int epoch = 0;
  bool joint = false;
  double loss_r = 0.0;
  double loss_c = std::numeric_limits<double>::quiet_NaN();  // NaN on recon-only epochs
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

using EpochCallback = std::function<void(int epoch, const Model&)>;

/// Compute per-dimension mean/std over a set of log-mel frames (row-major,
/// `width` values per frame). Degenerate dimensions get stdev 1.
inline model::FeatureStats compute_feature_stats(const std::vector<double>& frames, int width) {
  if (frames.empty() || width <= 0) throw ContractError("feature stats: no data");
  const int64_t rows = int64_t(frames.size()) / width;
  model::FeatureStats s;
  s.mean.assign(size_t(width), 0.0);
  s.stdev.assign(size_t(width), 0.0);
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c) s.mean[size_t(c)] += frames[size_t(r) * width + c];
  for (int c = 0; c < width; ++c) s.mean[size_t(c)] /= double(rows);
  for (int64_t r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c) {
      const double d = frames[size_t(r) * width + c] - s.mean[size_t(c)];
      s.stdev[size_t(c)] += d * d;
    }
  for (int c = 0; c < width; ++c) {
    s.stdev[size_t(c)] = std::sqrt(s.stdev[size_t(c)] / double(rows));
    if (s.stdev[size_t(c)] < 1e-8) s.stdev[size_t(c)] = 1.0;
  }
  return s;
}

namespace detail {

struct Batch {
  Tensor ctx, phase, center, onehot;
  int size = 0;
};

inline Batch gather_batch(const WindowSet& set, const model::FeatureStats& stats,
                          const std::vector<int64_t>& order, int64_t begin, int64_t end,
                          bool with_onehot) {
  Batch b;
  b.size = int(end - begin);
  const int T = set.context_rows, M = set.mel, P = set.phase_bins;
  b.ctx = Tensor::zeros({b.size * T, M});
  b.phase = Tensor::zeros({b.size * T, P});
  b.center = Tensor::zeros({b.size, M});
  if (with_onehot) b.onehot = Tensor::zeros({b.size, set.num_classes});
  for (int64_t i = begin; i < end; ++i) {
    const int64_t w = order[size_t(i)];
    const int64_t row = i - begin;
    const double* src_ctx = &set.ctx[size_t(w) * T * M];
    double* dst_ctx = &b.ctx.v[size_t(row) * T * M];
    for (int64_t j = 0; j < int64_t(T) * M; ++j)
      dst_ctx[j] = stats.apply(src_ctx[j], int(j % M));
    const double* src_ph = &set.phase[size_t(w) * T * P];
    std::copy(src_ph, src_ph + int64_t(T) * P, &b.phase.v[size_t(row) * T * P]);
    const double* src_c = &set.center[size_t(w) * M];
    double* dst_c = &b.center.v[size_t(row) * M];
    for (int j = 0; j < M; ++j) dst_c[j] = stats.apply(src_c[j], j);
    if (with_onehot) b.onehot.at(int(row), set.labels[size_t(w)]) = 1.0;
  }
  return b;
}

}  // namespace detail

/// Train on windows of normal sounds. Epochs are 1-based; epoch e is a joint
/// epoch iff e % classifier_period == 0. On reconstruction-only epochs the
/// classifier is neither evaluated nor updated.
inline TrainLog fit(Model& m, const WindowSet& train, const TrainConfig& cfg,
                    const EpochCallback& cb = {}) {
  cfg.validate();
  if (train.count == 0) throw ContractError("fit: empty train set");
  if (cfg.alpha > 0.0 && train.num_classes < 2)
    throw ConfigError("fit: classifier needs at least 2 machine IDs when alpha > 0");
  if (train.num_classes != m.cfg.num_ids)
    throw ContractError("fit: window set has " + std::to_string(train.num_classes) +
                        " classes, model expects " + std::to_string(m.cfg.num_ids));
  for (int label : train.labels)
    if (label < 0 || label >= train.num_classes)
      throw ContractError("fit: label outside vocabulary");

  const ag::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  auto ae_group = m.autoencoder_group();
  auto all_group = m.all_trainable();

  Rng rng(mix_seed(cfg.seed, 0x747261696eull));
  std::vector<int64_t> order(size_t(train.count));
  for (int64_t i = 0; i < train.count; ++i) order[size_t(i)] = i;

  TrainLog log;
  log.epochs.reserve(size_t(cfg.epochs));
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool joint = (epoch % cfg.classifier_period == 0) && cfg.alpha > 0.0;
    rng.shuffle(order);
    double sum_r = 0.0, sum_c = 0.0;
    for (int64_t begin = 0; begin < train.count; begin += cfg.batch_size) {
      const int64_t end = std::min<int64_t>(begin + cfg.batch_size, train.count);
      auto batch = detail::gather_batch(train, m.stats, order, begin, end, joint);
      ag::Tape tape;
      auto fwd = model::forward_batch(tape, m, batch.ctx, batch.phase, batch.size,
                                      /*training=*/true, /*with_classifier=*/joint);
      ag::Var lr_var = model::loss_reconstruction(tape, fwd.center_pred, batch.center);
      sum_r += tape.val(lr_var).v[0] * double(batch.size);
      ag::Var loss = lr_var;
      if (joint) {
        ag::Var lc_var = model::loss_classification(tape, fwd.probs, batch.onehot);
        sum_c += tape.val(lc_var).v[0] * double(batch.size);
        loss = model::loss_total(lr_var, lc_var, cfg.alpha);
      }
      m.params.zero_grad();
      tape.backward(loss);
      ag::adam_step(joint ? all_group : ae_group, adam);
    }
    EpochLog el;
    el.epoch = epoch;
    el.joint = joint;
    el.loss_r = sum_r / double(train.count);
    if (joint) el.loss_c = sum_c / double(train.count);
    el.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(el);
    if (cb) cb(epoch, m);
  }
  return log;
}

struct EvalMetrics {
  double loss_r = 0.0;
  double loss_c = 0.0;
  double accuracy = 0.0;  // window-level argmax accuracy
};

/// Losses and classifier accuracy in eval mode (running batch-norm statistics,
/// no parameter or buffer mutation).
inline EvalMetrics evaluate(Model& m, const WindowSet& set, int batch_size = 256) {
  if (set.count == 0) throw ContractError("evaluate: empty window set");
  std::vector<int64_t> order(size_t(set.count));
  for (int64_t i = 0; i < set.count; ++i) order[size_t(i)] = i;
  EvalMetrics em;
  int64_t correct = 0;
  for (int64_t begin = 0; begin < set.count; begin += batch_size) {
    const int64_t end = std::min<int64_t>(begin + batch_size, set.count);
    auto batch = detail::gather_batch(set, m.stats, order, begin, end, true);
    ag::Tape tape;
    auto fwd = model::forward_batch(tape, m, batch.ctx, batch.phase, batch.size,
                                    /*training=*/false, /*with_classifier=*/true);
    em.loss_r += tape.val(model::loss_reconstruction(tape, fwd.center_pred, batch.center)).v[0] *
                 double(batch.size);
    em.loss_c += tape.val(model::loss_classification(tape, fwd.probs, batch.onehot)).v[0] *
                 double(batch.size);
    const Tensor& probs = tape.val(fwd.probs);
    for (int r = 0; r < batch.size; ++r) {
      int best = 0;
      for (int c = 1; c < probs.cols(); ++c)
        if (probs.at(r, c) > probs.at(r, best)) best = c;
      if (best == set.labels[size_t(order[size_t(begin + r)])]) ++correct;
    }
  }
  em.loss_r /= double(set.count);
  em.loss_c /= double(set.count);
  em.accuracy = double(correct) / double(set.count);
  return em;
}

inline void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write train log: " + path);
  out << "epoch,mode,loss_r,loss_c,seconds\n";
  char buf[160];
  for (const auto& e : log.epochs) {
    std::snprintf(buf, sizeof(buf), "%d,%s,%.10g,%.10g,%.3f\n", e.epoch,
                  e.joint ? "joint" : "recon", e.loss_r, e.loss_c, e.seconds);
    out << buf;
  }
}

}  // namespace asdkit::trainer
