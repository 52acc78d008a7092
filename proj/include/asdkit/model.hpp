#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "asdkit/autograd.hpp"
#include "asdkit/dsp.hpp"
#include "asdkit/optim.hpp"

// Transformer autoencoder with linear phase embedding, center-frame
// prediction head, and a machine-ID classifier on the encoder latent.
namespace asdkit::model {

using ag::Param;
using ag::ParamSet;
using ag::Tape;
using ag::Tensor;
using ag::Var;

struct ModelConfig {
  int d_model = 128;
  int n_heads = 4;
  int ff_dim = 256;
  int enc_layers = 2;
  int dec_layers = 2;
  int n_mels = 128;
  int phase_dim = 513;
  int context_len = 4;  // frames per window after center removal
  int num_ids = 2;
  int classifier_hidden = 64;
  double alpha = 0.3;

  void validate() const {
    if (d_model % n_heads != 0)
      throw ConfigError("model: d_model must be divisible by n_heads");
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("model: alpha must be in [0,1)");
    if (num_ids < 1) throw ConfigError("model: num_ids must be >= 1");
    if (d_model != n_mels)
      throw ConfigError("model: d_model must equal n_mels (context frames feed the encoder directly)");
    if (enc_layers < 1 || dec_layers < 1 || ff_dim < 1 || classifier_hidden < 1 ||
        context_len < 1 || phase_dim < 1)
      throw ConfigError("model: dimensions must be positive");
  }
};

/// Per-dimension standardization of the log-mel features. Persisted in the
/// checkpoint so that scoring sees the training-time feature space.
struct FeatureStats {
  std::vector<double> mean, stdev;

  static FeatureStats identity(int n) {
    FeatureStats s;
    s.mean.assign(size_t(n), 0.0);
    s.stdev.assign(size_t(n), 1.0);
    return s;
  }

  double apply(double x, int dim) const { return (x - mean[size_t(dim)]) / stdev[size_t(dim)]; }

  void apply_rows(std::vector<double>& rows, int width) const {
    for (size_t i = 0; i < rows.size(); ++i) rows[i] = apply(rows[i], int(i % size_t(width)));
  }
};

/// Machine-ID label string -> class index mapping, in sorted label order.
struct IdVocab {
  std::vector<std::string> labels;

  int index_of(const std::string& label) const {
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return int(i);
    throw ContractError("unknown machine id: " + label);
  }
  int size() const { return int(labels.size()); }
};

class Model {
public:
  ModelConfig cfg;
  ParamSet params;
  FeatureStats stats;

  Model() = default;

  Model(const ModelConfig& c, uint64_t seed) : cfg(c) {
    cfg.validate();
    stats = FeatureStats::identity(cfg.n_mels);
    Rng rng(mix_seed(seed, 0x6d6f64656cull));
    add_linear("lpe.fc1", cfg.phase_dim, cfg.d_model, rng);
    add_norm_pair("lpe.bn1", cfg.d_model, /*running=*/true);
    add_linear("lpe.fc2", cfg.d_model, cfg.d_model, rng);
    add_norm_pair("lpe.bn2", cfg.d_model, /*running=*/true);
    for (int l = 0; l < cfg.enc_layers; ++l) add_encoder_layer("enc" + std::to_string(l), rng);
    for (int l = 0; l < cfg.dec_layers; ++l) add_encoder_layer("dec" + std::to_string(l), rng);
    add_linear("head", cfg.d_model, cfg.n_mels, rng);
    add_linear("cls.fc1", cfg.d_model, cfg.classifier_hidden, rng);
    add_linear("cls.fc2", cfg.classifier_hidden, cfg.num_ids, rng);
  }

  static bool is_classifier_param(const std::string& name) {
    return starts_with(name, "cls.");
  }

  /// Trainable params outside the classifier head.
  std::vector<Param*> autoencoder_group() {
    std::vector<Param*> g;
    for (size_t i = 0; i < params.size(); ++i) {
      Param& p = params.at(i);
      if (p.trainable && !is_classifier_param(p.name)) g.push_back(&p);
    }
    return g;
  }

  std::vector<Param*> classifier_group() {
    std::vector<Param*> g;
    for (size_t i = 0; i < params.size(); ++i) {
      Param& p = params.at(i);
      if (p.trainable && is_classifier_param(p.name)) g.push_back(&p);
    }
    return g;
  }

  std::vector<Param*> all_trainable() {
    std::vector<Param*> g;
    for (size_t i = 0; i < params.size(); ++i)
      if (params.at(i).trainable) g.push_back(&params.at(i));
    return g;
  }

private:
  // Glorot-uniform weights, zero biases.
  void add_linear(const std::string& name, int fan_in, int fan_out, Rng& rng) {
    Tensor w({fan_in, fan_out});
    ag::fill_uniform(w, std::sqrt(6.0 / double(fan_in + fan_out)), rng);
    params.add(name + ".w", std::move(w));
    params.add(name + ".b", Tensor::zeros({fan_out}));
  }

  void add_norm_pair(const std::string& name, int width, bool running) {
    params.add(name + ".gain", Tensor::full({width}, 1.0));
    params.add(name + ".bias", Tensor::zeros({width}));
    if (running) {
      params.add(name + ".run_mean", Tensor::zeros({width}), /*trainable=*/false);
      params.add(name + ".run_var", Tensor::full({width}, 1.0), /*trainable=*/false);
    }
  }

  void add_encoder_layer(const std::string& prefix, Rng& rng) {
    add_linear(prefix + ".attn.q", cfg.d_model, cfg.d_model, rng);
    add_linear(prefix + ".attn.k", cfg.d_model, cfg.d_model, rng);
    add_linear(prefix + ".attn.v", cfg.d_model, cfg.d_model, rng);
    add_linear(prefix + ".attn.o", cfg.d_model, cfg.d_model, rng);
    add_norm_pair(prefix + ".ln1", cfg.d_model, /*running=*/false);
    add_linear(prefix + ".ff.fc1", cfg.d_model, cfg.ff_dim, rng);
    add_linear(prefix + ".ff.fc2", cfg.ff_dim, cfg.d_model, rng);
    add_norm_pair(prefix + ".ln2", cfg.d_model, /*running=*/false);
  }
};

namespace detail {

struct Lease {
  Tape& tape;
  ParamSet& params;

  Var operator()(const std::string& name) { return tape.leaf(params.get(name)); }
};

inline Var linear_named(Lease& L, const std::string& prefix, Var x) {
  return ag::linear(x, L(prefix + ".w"), L(prefix + ".b"));
}

inline Var batch_norm_named(Lease& L, const std::string& prefix, Var x, bool training) {
  return ag::batch_norm(x, L(prefix + ".gain"), L(prefix + ".bias"),
                        L.params.get(prefix + ".run_mean").value,
                        L.params.get(prefix + ".run_var").value, training);
}

inline Var layer_norm_named(Lease& L, const std::string& prefix, Var x) {
  return ag::layer_norm(x, L(prefix + ".gain"), L(prefix + ".bias"));
}

// Post-norm Transformer encoder layer: self-attention + residual + LN, then
// position-wise feed-forward + residual + LN.
inline Var encoder_layer(Lease& L, const std::string& prefix, Var x, int batch,
                         const ModelConfig& cfg) {
  Var q = linear_named(L, prefix + ".attn.q", x);
  Var k = linear_named(L, prefix + ".attn.k", x);
  Var v = linear_named(L, prefix + ".attn.v", x);
  Var a = ag::mha(q, k, v, batch, cfg.context_len, cfg.n_heads);
  Var o = linear_named(L, prefix + ".attn.o", a);
  Var h = layer_norm_named(L, prefix + ".ln1", ag::add(x, o));
  Var f = linear_named(L, prefix + ".ff.fc2",
                       ag::relu(linear_named(L, prefix + ".ff.fc1", h)));
  return layer_norm_named(L, prefix + ".ln2", ag::add(h, f));
}

}  // namespace detail

/// Linear phase embedding: two linear layers with batch normalization,
/// applied frame-wise to the phase angles. Input (batch*T, phase_dim).
inline Var lpe_embed(Tape& tape, Model& m, Var phase, bool training) {
  detail::Lease L{tape, m.params};
  Var h = detail::batch_norm_named(L, "lpe.bn1", detail::linear_named(L, "lpe.fc1", phase), training);
  return detail::batch_norm_named(L, "lpe.bn2", detail::linear_named(L, "lpe.fc2", h), training);
}

/// Encoder half: z = encoder_stack(x + lpe(phase)). x is (batch*T, n_mels).
inline Var encode(Tape& tape, Model& m, Var x, Var phase, int batch, bool training) {
  detail::Lease L{tape, m.params};
  Var h = ag::add(x, lpe_embed(tape, m, phase, training));
  for (int l = 0; l < m.cfg.enc_layers; ++l)
    h = detail::encoder_layer(L, "enc" + std::to_string(l), h, batch, m.cfg);
  return h;
}

inline Var decode(Tape& tape, Model& m, Var z, int batch) {
  detail::Lease L{tape, m.params};
  Var h = z;
  for (int l = 0; l < m.cfg.dec_layers; ++l)
    h = detail::encoder_layer(L, "dec" + std::to_string(l), h, batch, m.cfg);
  return h;
}

/// Average the reconstructed context frames and map through the output layer.
inline Var predict_center(Tape& tape, Model& m, Var xbar, int batch) {
  detail::Lease L{tape, m.params};
  Var pooled = ag::mean_pool(
      ag::reshape(xbar, {batch, m.cfg.context_len, m.cfg.d_model}), 1);
  return detail::linear_named(L, "head", pooled);
}

/// Machine-ID probabilities from the latent: max-pool over frames, two linear
/// layers with a ReLU, softmax.
inline Var classify(Tape& tape, Model& m, Var z, int batch) {
  detail::Lease L{tape, m.params};
  Var pooled = ag::max_pool(ag::reshape(z, {batch, m.cfg.context_len, m.cfg.d_model}), 1);
  Var h = ag::relu(detail::linear_named(L, "cls.fc1", pooled));
  return ag::softmax(detail::linear_named(L, "cls.fc2", h));
}

/// Squared L2 error of the predicted center frame, averaged over the batch.
inline Var loss_reconstruction(Tape& tape, Var center_pred, const Tensor& center_target) {
  return ag::mse_loss(center_pred, tape.constant(center_target));
}

inline Var loss_classification(Tape& tape, Var probs, const Tensor& onehot) {
  return ag::cross_entropy_loss(probs, tape.constant(onehot));
}

/// L_total = (1 - alpha) * L_r + alpha * L_c
inline Var loss_total(Var loss_r, Var loss_c, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ContractError("loss_total: alpha must be in [0,1)");
  return ag::add(ag::scale(loss_r, 1.0 - alpha), ag::scale(loss_c, alpha));
}

struct ForwardResult {
  Var z;            // latent, (batch*T, d_model)
  Var xbar;         // decoder output, (batch*T, d_model)
  Var center_pred;  // (batch, n_mels)
  Var probs;        // (batch, num_ids); only set when with_classifier
  bool has_probs = false;
};

/// Shared forward pass over a batch of windows. ctx is (batch*T, n_mels)
/// already standardized, phase is (batch*T, phase_dim) raw radians.
inline ForwardResult forward_batch(Tape& tape, Model& m, const Tensor& ctx,
                                   const Tensor& phase, int batch, bool training,
                                   bool with_classifier) {
  Var x = tape.constant(ctx);
  Var ph = tape.constant(phase);
  ForwardResult r;
  r.z = encode(tape, m, x, ph, batch, training);
  r.xbar = decode(tape, m, r.z, batch);
  r.center_pred = predict_center(tape, m, r.xbar, batch);
  if (with_classifier) {
    r.probs = classify(tape, m, r.z, batch);
    r.has_probs = true;
  }
  return r;
}

// --- single-window convenience surface (eval mode, no gradients) ---

inline Tensor window_context_tensor(const dsp::FrameWindow& w) {
  return Tensor::from({w.context_rows, w.mel_bins}, w.context);
}
inline Tensor window_phase_tensor(const dsp::FrameWindow& w) {
  return Tensor::from({w.context_rows, w.phase_bins}, w.phase_context);
}

inline Tensor eval_lpe_embed(Model& m, const Tensor& phase) {
  Tape tape;
  return tape.val(lpe_embed(tape, m, tape.constant(phase), false));
}

inline Tensor eval_encode(Model& m, const Tensor& ctx, const Tensor& phase) {
  Tape tape;
  return tape.val(encode(tape, m, tape.constant(ctx), tape.constant(phase), 1, false));
}

inline Tensor eval_decode(Model& m, const Tensor& z) {
  Tape tape;
  return tape.val(decode(tape, m, tape.constant(z), 1));
}

inline Tensor eval_predict_center(Model& m, const Tensor& xbar) {
  Tape tape;
  return tape.val(predict_center(tape, m, tape.constant(xbar), 1));
}

inline std::vector<double> eval_classify(Model& m, const Tensor& z) {
  Tape tape;
  return tape.val(classify(tape, m, tape.constant(z), 1)).v;
}

}  // namespace asdkit::model
