#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "asdkit/model.hpp"

// Anomaly scoring of test clips with a frozen model: per-window center-frame
// reconstruction errors, mean/max/GWRP aggregation, and the combination with
// the ID-classification loss.
namespace asdkit::scorer {

using ag::Tensor;
using model::Model;

struct ErrorSequence {
  std::string clip_path, machine_type, machine_id;
  bool anomaly = false;  // ground truth
  std::vector<double> e;
};

struct ScoreConfig {
  double r = 1.0;     // GWRP decay in [0,1]
  double beta = 0.5;  // weight of the classification loss in [0,1]
  // decision threshold for decide(); +inf keeps everything normal, which is
  // the right default for threshold-free (AUC) evaluation
  double theta = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("score: r must be in [0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("score: beta must be in [0,1]");
  }
};

struct ScoreRecord {
  std::string clip_path, machine_type, machine_id;
  bool anomaly = false;
  int window_count = 0;
  double score_mean = 0.0, score_max = 0.0, score_gwrp = 0.0;
  double loss_c = 0.0;
  double score_weighted = 0.0;
};

namespace detail {

/// Kahan-compensated sum; keeps the aggregation identities (r=1 vs mean)
/// tight regardless of summation order.
struct CompensatedSum {
  double sum = 0.0, c = 0.0;

  void add(double x) {
    const double y = x - c;
    const double t = sum + y;
    c = (t - sum) - y;
    sum = t;
  }
};

}  // namespace detail

inline double score_mean(const std::vector<double>& e) {
  if (e.empty()) throw ContractError("score_mean: empty error sequence");
  detail::CompensatedSum s;
  for (double x : e) s.add(x);
  return s.sum / double(e.size());
}

inline double score_max(const std::vector<double>& e) {
  if (e.empty()) throw ContractError("score_max: empty error sequence");
  return *std::max_element(e.begin(), e.end());
}

/// Global weighted rank pooling: sort descending, weight the i-th value by
/// r^(i-1), normalize by Z(r) = sum of the weights. r=0 gives the max
/// (0^0 = 1), r=1 gives the mean.
inline double score_gwrp(const std::vector<double>& e, double r) {
  if (e.empty()) throw ContractError("score_gwrp: empty error sequence");
  if (!(r >= 0.0 && r <= 1.0)) throw ContractError("score_gwrp: r must be in [0,1]");
  std::vector<double> sorted(e);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());
  detail::CompensatedSum acc, z;
  double w = 1.0;
  for (double x : sorted) {
    acc.add(w * x);
    z.add(w);
    if (r == 0.0) break;
    w *= r;
  }
  return acc.sum / z.sum;
}

/// (1 - beta) * gwrp + beta * L_c
inline double score_weighted(double gwrp, double loss_c, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("score_weighted: beta must be in [0,1]");
  return (1.0 - beta) * gwrp + beta * loss_c;
}

/// 1 (anomaly) iff score > theta, else 0 (normal).
inline int decide(double score, double theta) { return score > theta ? 1 : 0; }

namespace detail {

struct ClipEval {
  std::vector<double> errors;      // per-window center reconstruction error / M
  std::vector<double> ce;          // per-window cross entropy vs true id (empty if no id)
  std::vector<double> mean_probs;  // mean class probabilities over windows
};

/// One eval-mode forward over every stride-1 window of a clip.
inline ClipEval eval_clip(Model& m, const dsp::ClipFeatures& feat, int true_id) {
  auto windows = dsp::window_frames(feat.logmel, feat.phase, m.cfg.context_len + 1, 1);
  const int I = int(windows.size());
  const int T = m.cfg.context_len, M = m.cfg.n_mels, P = m.cfg.phase_dim;
  Tensor ctx({I * T, M}), phase({I * T, P}), center({I, M});
  for (int w = 0; w < I; ++w) {
    for (int64_t j = 0; j < int64_t(T) * M; ++j)
      ctx.v[size_t(w) * T * M + size_t(j)] =
          m.stats.apply(windows[size_t(w)].context[size_t(j)], int(j % M));
    std::copy(windows[size_t(w)].phase_context.begin(), windows[size_t(w)].phase_context.end(),
              phase.v.begin() + int64_t(w) * T * P);
    for (int j = 0; j < M; ++j)
      center.at(w, j) = m.stats.apply(windows[size_t(w)].center[size_t(j)], j);
  }
  ag::Tape tape;
  auto fwd = model::forward_batch(tape, m, ctx, phase, I, /*training=*/false,
                                  /*with_classifier=*/true);
  const Tensor& pred = tape.val(fwd.center_pred);
  const Tensor& probs = tape.val(fwd.probs);

  ClipEval out;
  out.errors.resize(size_t(I));
  for (int w = 0; w < I; ++w) {
    double s = 0.0;
    for (int j = 0; j < M; ++j) {
      const double d = center.at(w, j) - pred.at(w, j);
      s += d * d;
    }
    out.errors[size_t(w)] = s / double(M);
  }
  out.mean_probs.assign(size_t(m.cfg.num_ids), 0.0);
  for (int w = 0; w < I; ++w)
    for (int k = 0; k < m.cfg.num_ids; ++k) out.mean_probs[size_t(k)] += probs.at(w, k);
  for (double& p : out.mean_probs) p /= double(I);
  if (true_id >= 0) {
    if (true_id >= m.cfg.num_ids) throw ContractError("eval_clip: id index out of range");
    out.ce.resize(size_t(I));
    for (int w = 0; w < I; ++w)
      out.ce[size_t(w)] = -std::log(std::max(probs.at(w, true_id), ag::kProbClamp));
  }
  return out;
}

}  // namespace detail

/// Stride-1 per-window reconstruction errors of a clip, in the standardized
/// feature space, each divided by the mel dimension.
inline ErrorSequence segment_errors(Model& m, const dsp::ClipFeatures& feat) {
  ErrorSequence seq;
  seq.e = detail::eval_clip(m, feat, -1).errors;
  return seq;
}

/// Mean over windows of the cross entropy between the true machine ID and the
/// classifier output.
inline double clip_classification_loss(Model& m, const dsp::ClipFeatures& feat, int true_id) {
  auto ce = detail::eval_clip(m, feat, true_id).ce;
  double s = 0.0;
  for (double x : ce) s += x;
  return s / double(ce.size());
}

/// Most probable machine ID for a clip (argmax of the window-mean probability).
inline int predict_clip_id(Model& m, const dsp::ClipFeatures& feat) {
  auto probs = detail::eval_clip(m, feat, -1).mean_probs;
  return int(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

/// Full per-clip scoring: error sequence plus every aggregate in one pass.
inline ScoreRecord score_clip(Model& m, const dsp::ClipFeatures& feat, int true_id,
                              const ScoreConfig& cfg, ErrorSequence* errors_out = nullptr) {
  cfg.validate();
  auto ev = detail::eval_clip(m, feat, true_id);
  ScoreRecord rec;
  rec.window_count = int(ev.errors.size());
  rec.score_mean = score_mean(ev.errors);
  rec.score_max = score_max(ev.errors);
  rec.score_gwrp = score_gwrp(ev.errors, cfg.r);
  double s = 0.0;
  for (double x : ev.ce) s += x;
  rec.loss_c = s / double(ev.ce.size());
  rec.score_weighted = score_weighted(rec.score_gwrp, rec.loss_c, cfg.beta);
  if (errors_out) errors_out->e = std::move(ev.errors);
  return rec;
}

// --- CSV artifacts ---

inline void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& recs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write scores: " + path);
  out << "clip_path,machine_type,machine_id,label,I,score_mean,score_max,score_gwrp,"
         "loss_c,score_weighted\n";
  char buf[512];
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%d,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.clip_path.c_str(), r.machine_type.c_str(), r.machine_id.c_str(),
                  r.anomaly ? "anomaly" : "normal", r.window_count, r.score_mean,
                  r.score_max, r.score_gwrp, r.loss_c, r.score_weighted);
    out << buf;
  }
}

inline void write_errors_csv(const std::string& path, const std::vector<ErrorSequence>& seqs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write errors: " + path);
  out << "clip_path,machine_type,machine_id,label,window_index,error\n";
  char buf[512];
  for (const auto& s : seqs)
    for (size_t i = 0; i < s.e.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%s,%s,%zu,%.17g\n", s.clip_path.c_str(),
                    s.machine_type.c_str(), s.machine_id.c_str(),
                    s.anomaly ? "anomaly" : "normal", i, s.e[i]);
      out << buf;
    }
}

inline std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scores: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty scores file: " + path);
  std::vector<ScoreRecord> recs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 10) throw IoError("malformed scores row: " + line);
    ScoreRecord r;
    r.clip_path = f[0];
    r.machine_type = f[1];
    r.machine_id = f[2];
    r.anomaly = f[3] == "anomaly";
    r.window_count = std::stoi(f[4]);
    r.score_mean = std::stod(f[5]);
    r.score_max = std::stod(f[6]);
    r.score_gwrp = std::stod(f[7]);
    r.loss_c = std::stod(f[8]);
    r.score_weighted = std::stod(f[9]);
    recs.push_back(std::move(r));
  }
  return recs;
}

inline std::vector<ErrorSequence> read_errors_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open errors: " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty errors file: " + path);
  std::vector<ErrorSequence> seqs;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != 6) throw IoError("malformed errors row: " + line);
    if (seqs.empty() || seqs.back().clip_path != f[0]) {
      ErrorSequence s;
      s.clip_path = f[0];
      s.machine_type = f[1];
      s.machine_id = f[2];
      s.anomaly = f[3] == "anomaly";
      seqs.push_back(std::move(s));
    }
    seqs.back().e.push_back(std::stod(f[5]));
  }
  return seqs;
}

}  // namespace asdkit::scorer
