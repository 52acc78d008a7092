#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "asdkit/common.hpp"
#include "asdkit/tensor.hpp"

// Reverse-mode tape over dense double tensors. The tape is define-by-run: ops
// append nodes, backward() walks them once in reverse creation order (creation
// order is already topological). Matrix products are delegated to Eigen; all
// other kernels are plain loops.
namespace asdkit::ag {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const EMat> emap(const Tensor& t) {
  return {t.v.data(), t.rows(), t.cols()};
}
inline Eigen::Map<EMat> emap(Tensor& t) { return {t.v.data(), t.rows(), t.cols()}; }

/// A named learnable tensor with its gradient and Adam moment buffers.
/// Non-trainable params hold state such as batch-norm running statistics.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m, adam_v;
  long long adam_t = 0;
  bool trainable = true;

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), 0.0); }
};

/// Ordered collection of params. Iteration order is insertion order, which
/// keeps optimizer sweeps and checkpoints deterministic.
class ParamSet {
public:
  Param& add(const std::string& name, Tensor init, bool trainable = true) {
    if (index_.count(name)) throw ContractError("duplicate param name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->grad = Tensor::zeros(init.shape);
    if (trainable) {
      p->adam_m = Tensor::zeros(init.shape);
      p->adam_v = Tensor::zeros(init.shape);
    }
    p->value = std::move(init);
    p->trainable = trainable;
    index_[name] = int(items_.size());
    items_.push_back(std::move(p));
    return *items_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Param& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown param: " + name);
    return *items_[size_t(it->second)];
  }
  const Param& get(const std::string& name) const {
    return const_cast<ParamSet*>(this)->get(name);
  }

  size_t size() const { return items_.size(); }
  Param& at(size_t i) { return *items_[i]; }
  const Param& at(size_t i) const { return *items_[i]; }

  void zero_grad() {
    for (auto& p : items_)
      if (p->trainable) p->zero_grad();
  }

  int64_t trainable_count() const {
    int64_t n = 0;
    for (auto& p : items_)
      if (p->trainable) n += p->value.numel();
    return n;
  }

private:
  std::vector<std::unique_ptr<Param>> items_;
  std::unordered_map<std::string, int> index_;
};

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

class Tape {
public:
  struct Node {
    Tensor val;
    Tensor grad;  // empty until backward reaches this node
    std::function<void(Tape&, int)> back;
    Param* param = nullptr;
    bool requires_grad = false;
  };

  /// When set, every op output is scanned for NaN/Inf and a fault throws.
  bool check_finite = false;

  Var constant(Tensor t) { return make(std::move(t), false, nullptr, nullptr); }

  Var leaf(Param& p) {
    Tensor copy = p.value;
    return make(std::move(copy), p.trainable, nullptr, &p);
  }

  const Tensor& val(const Var& v) const { return nodes_[size_t(v.id)].val; }

  /// Gradient of a node after backward(). Empty tensor if unreachable.
  const Tensor& grad(const Var& v) const { return nodes_[size_t(v.id)].grad; }

  void backward(const Var& loss) {
    if (nodes_.empty()) throw ContractError("backward on empty tape");
    if (consumed_)
      throw ContractError("backward called twice on the same tape (reset first)");
    if (nodes_[size_t(loss.id)].val.numel() != 1)
      throw ContractError("backward requires a scalar loss, got shape " +
                          nodes_[size_t(loss.id)].val.shape_str());
    consumed_ = true;
    grad_buf(loss.id).v[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (!n.requires_grad || n.grad.v.empty()) continue;
      if (n.back) n.back(*this, id);
      if (n.param) {
        auto& dst = n.param->grad.v;
        const auto& src = n.grad.v;
        for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

  size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  // --- op construction interface ---

  Var make(Tensor val, bool requires_grad, std::function<void(Tape&, int)> back,
           Param* param = nullptr) {
    if (check_finite) {
      for (double x : val.v)
        if (!std::isfinite(x))
          throw ContractError("non-finite value produced on tape (node " +
                              std::to_string(nodes_.size()) + ")");
    }
    Node n;
    n.val = std::move(val);
    n.back = std::move(back);
    n.param = param;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, int(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[size_t(id)]; }

  Tensor& grad_buf(int id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.v.empty()) n.grad = Tensor::zeros(n.val.shape);
    return n.grad;
  }

  bool wants_grad(int id) const { return nodes_[size_t(id)].requires_grad; }

private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline Tape& tape_of(const Var& v) {
  if (!v.tape) throw ContractError("op on detached Var");
  return *v.tape;
}
inline void same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw ContractError("op combines Vars from different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops
// ---------------------------------------------------------------------------

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require_2d(A, "matmul");
  require_2d(B, "matmul");
  if (A.cols() != B.rows())
    throw ContractError("matmul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor out({A.rows(), B.cols()});
  emap(out).noalias() = emap(A) * emap(B);
  bool rg = tp.wants_grad(a.id) || tp.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, ib](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         const Tensor& A_ = t.node(ia).val;
                         const Tensor& B_ = t.node(ib).val;
                         if (t.wants_grad(ia))
                           emap(t.grad_buf(ia)).noalias() += emap(g) * emap(B_).transpose();
                         if (t.wants_grad(ib))
                           emap(t.grad_buf(ib)).noalias() += emap(A_).transpose() * emap(g);
                       });
}

/// y = x*W + b with b broadcast over rows.
inline Var linear(Var x, Var w, Var b) {
  detail::same_tape(x, w);
  detail::same_tape(x, b);
  Tape& tp = detail::tape_of(x);
  const Tensor& X = tp.val(x);
  const Tensor& W = tp.val(w);
  const Tensor& B = tp.val(b);
  require_2d(X, "linear");
  require_2d(W, "linear");
  if (X.cols() != W.rows() || B.rank() != 1 || B.dim(0) != W.cols())
    throw ContractError("linear: shape mismatch " + X.shape_str() + " x " +
                        W.shape_str() + " + " + B.shape_str());
  Tensor out({X.rows(), W.cols()});
  emap(out).noalias() = emap(X) * emap(W);
  const int R = out.rows(), C = out.cols();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.at(r, c) += B.v[size_t(c)];
  bool rg = tp.wants_grad(x.id) || tp.wants_grad(w.id) || tp.wants_grad(b.id);
  int ix = x.id, iw = w.id, ib = b.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ix, iw, ib](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         if (t.wants_grad(ix))
                           emap(t.grad_buf(ix)).noalias() +=
                               emap(g) * emap(t.node(iw).val).transpose();
                         if (t.wants_grad(iw))
                           emap(t.grad_buf(iw)).noalias() +=
                               emap(t.node(ix).val).transpose() * emap(g);
                         if (t.wants_grad(ib)) {
                           Tensor& gb = t.grad_buf(ib);
                           for (int r = 0; r < g.rows(); ++r)
                             for (int c = 0; c < g.cols(); ++c)
                               gb.v[size_t(c)] += g.at(r, c);
                         }
                       });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require_same_shape(A, B, "add");
  Tensor out = A;
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += B.v[i];
  bool rg = tp.wants_grad(a.id) || tp.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, ib](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         for (int id : {ia, ib}) {
                           if (!t.wants_grad(id)) continue;
                           auto& dst = t.grad_buf(id).v;
                           for (size_t i = 0; i < dst.size(); ++i) dst[i] += g.v[i];
                         }
                       });
}

inline Var scale(Var a, double s) {
  Tape& tp = detail::tape_of(a);
  Tensor out = tp.val(a);
  for (double& x : out.v) x *= s;
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, s](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         auto& dst = t.grad_buf(ia).v;
                         for (size_t i = 0; i < dst.size(); ++i) dst[i] += s * g.v[i];
                       });
}

inline Var relu(Var a) {
  Tape& tp = detail::tape_of(a);
  Tensor out = tp.val(a);
  for (double& x : out.v) x = x > 0.0 ? x : 0.0;
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         const Tensor& x = t.node(ia).val;
                         auto& dst = t.grad_buf(ia).v;
                         for (size_t i = 0; i < dst.size(); ++i)
                           if (x.v[i] > 0.0) dst[i] += g.v[i];
                       });
}

/// Row-wise softmax over the last dimension of a rank-2 tensor.
inline Var softmax(Var a) {
  Tape& tp = detail::tape_of(a);
  const Tensor& X = tp.val(a);
  require_2d(X, "softmax");
  Tensor out = X;
  const int R = X.rows(), C = X.cols();
  for (int r = 0; r < R; ++r) {
    double m = out.at(r, 0);
    for (int c = 1; c < C; ++c) m = std::max(m, out.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      double e = std::exp(out.at(r, c) - m);
      out.at(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < C; ++c) out.at(r, c) /= sum;
  }
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         const Tensor& y = t.node(self).val;
                         Tensor& gx = t.grad_buf(ia);
                         const int R_ = y.rows(), C_ = y.cols();
                         for (int r = 0; r < R_; ++r) {
                           double dot = 0.0;
                           for (int c = 0; c < C_; ++c) dot += g.at(r, c) * y.at(r, c);
                           for (int c = 0; c < C_; ++c)
                             gx.at(r, c) += y.at(r, c) * (g.at(r, c) - dot);
                         }
                       });
}

/// Row-wise layer norm with learnable gain/bias (both rank-1 of width cols).
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-8) {
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  Tape& tp = detail::tape_of(x);
  const Tensor& X = tp.val(x);
  const Tensor& G = tp.val(gain);
  const Tensor& B = tp.val(bias);
  require_2d(X, "layer_norm");
  if (G.rank() != 1 || G.dim(0) != X.cols() || B.rank() != 1 || B.dim(0) != X.cols())
    throw ContractError("layer_norm: gain/bias shape mismatch " + G.shape_str() +
                        "," + B.shape_str() + " for input " + X.shape_str());
  const int R = X.rows(), C = X.cols();
  Tensor xhat({R, C});
  Tensor inv({R});
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += X.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = X.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    double iv = 1.0 / std::sqrt(var + eps);
    inv.v[size_t(r)] = iv;
    for (int c = 0; c < C; ++c) {
      double xh = (X.at(r, c) - mean) * iv;
      xhat.at(r, c) = xh;
      out.at(r, c) = G.v[size_t(c)] * xh + B.v[size_t(c)];
    }
  }
  bool rg = tp.wants_grad(x.id) || tp.wants_grad(gain.id) || tp.wants_grad(bias.id);
  int ix = x.id, ig = gain.id, ib = bias.id;
  auto xh = std::make_shared<Tensor>(std::move(xhat));
  auto ivs = std::make_shared<Tensor>(std::move(inv));
  return tp.make(
      std::move(out), rg,
      !rg ? std::function<void(Tape&, int)>{}
          : [ix, ig, ib, xh, ivs](Tape& t, int self) {
              const Tensor& g = t.node(self).grad;
              const Tensor& G_ = t.node(ig).val;
              const int R_ = g.rows(), C_ = g.cols();
              if (t.wants_grad(ig) || t.wants_grad(ib)) {
                Tensor& gg = t.grad_buf(ig);
                Tensor& gb = t.grad_buf(ib);
                for (int r = 0; r < R_; ++r)
                  for (int c = 0; c < C_; ++c) {
                    gg.v[size_t(c)] += g.at(r, c) * xh->at(r, c);
                    gb.v[size_t(c)] += g.at(r, c);
                  }
              }
              if (t.wants_grad(ix)) {
                Tensor& gx = t.grad_buf(ix);
                for (int r = 0; r < R_; ++r) {
                  double mean_dy = 0.0, mean_dyxh = 0.0;
                  for (int c = 0; c < C_; ++c) {
                    double dyg = g.at(r, c) * G_.v[size_t(c)];
                    mean_dy += dyg;
                    mean_dyxh += dyg * xh->at(r, c);
                  }
                  mean_dy /= C_;
                  mean_dyxh /= C_;
                  double iv = ivs->v[size_t(r)];
                  for (int c = 0; c < C_; ++c) {
                    double dyg = g.at(r, c) * G_.v[size_t(c)];
                    gx.at(r, c) += iv * (dyg - mean_dy - xh->at(r, c) * mean_dyxh);
                  }
                }
              }
            });
}

/// Column-wise batch norm. Training mode normalizes with batch statistics and
/// folds them into the running buffers; eval mode normalizes with the running
/// buffers and treats them as constants.
inline Var batch_norm(Var x, Var gain, Var bias, Tensor& run_mean, Tensor& run_var,
                      bool training, double momentum = 0.9, double eps = 1e-8) {
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  Tape& tp = detail::tape_of(x);
  const Tensor& X = tp.val(x);
  const Tensor& G = tp.val(gain);
  const Tensor& B = tp.val(bias);
  require_2d(X, "batch_norm");
  const int R = X.rows(), C = X.cols();
  if (G.rank() != 1 || G.dim(0) != C || B.rank() != 1 || B.dim(0) != C ||
      run_mean.numel() != C || run_var.numel() != C)
    throw ContractError("batch_norm: feature width mismatch for input " + X.shape_str());

  Tensor mean({C}), var({C});
  if (training) {
    for (int c = 0; c < C; ++c) {
      double m = 0.0;
      for (int r = 0; r < R; ++r) m += X.at(r, c);
      m /= R;
      double v = 0.0;
      for (int r = 0; r < R; ++r) {
        double d = X.at(r, c) - m;
        v += d * d;
      }
      v /= R;
      mean.v[size_t(c)] = m;
      var.v[size_t(c)] = v;
    }
    for (int c = 0; c < C; ++c) {
      run_mean.v[size_t(c)] = momentum * run_mean.v[size_t(c)] + (1.0 - momentum) * mean.v[size_t(c)];
      run_var.v[size_t(c)] = momentum * run_var.v[size_t(c)] + (1.0 - momentum) * var.v[size_t(c)];
    }
  } else {
    mean = run_mean;
    var = run_var;
  }

  Tensor xhat({R, C});
  Tensor out({R, C});
  for (int c = 0; c < C; ++c) {
    double iv = 1.0 / std::sqrt(var.v[size_t(c)] + eps);
    for (int r = 0; r < R; ++r) {
      double xh = (X.at(r, c) - mean.v[size_t(c)]) * iv;
      xhat.at(r, c) = xh;
      out.at(r, c) = G.v[size_t(c)] * xh + B.v[size_t(c)];
    }
  }
  bool rg = tp.wants_grad(x.id) || tp.wants_grad(gain.id) || tp.wants_grad(bias.id);
  int ix = x.id, ig = gain.id, ib = bias.id;
  auto xh = std::make_shared<Tensor>(std::move(xhat));
  auto var_s = std::make_shared<Tensor>(std::move(var));
  return tp.make(
      std::move(out), rg,
      !rg ? std::function<void(Tape&, int)>{}
          : [ix, ig, ib, xh, var_s, training, eps](Tape& t, int self) {
              const Tensor& g = t.node(self).grad;
              const Tensor& G_ = t.node(ig).val;
              const int R_ = g.rows(), C_ = g.cols();
              if (t.wants_grad(ig) || t.wants_grad(ib)) {
                Tensor& gg = t.grad_buf(ig);
                Tensor& gb = t.grad_buf(ib);
                for (int r = 0; r < R_; ++r)
                  for (int c = 0; c < C_; ++c) {
                    gg.v[size_t(c)] += g.at(r, c) * xh->at(r, c);
                    gb.v[size_t(c)] += g.at(r, c);
                  }
              }
              if (t.wants_grad(ix)) {
                Tensor& gx = t.grad_buf(ix);
                for (int c = 0; c < C_; ++c) {
                  double iv = 1.0 / std::sqrt(var_s->v[size_t(c)] + eps);
                  if (training) {
                    double mean_dy = 0.0, mean_dyxh = 0.0;
                    for (int r = 0; r < R_; ++r) {
                      double dyg = g.at(r, c) * G_.v[size_t(c)];
                      mean_dy += dyg;
                      mean_dyxh += dyg * xh->at(r, c);
                    }
                    mean_dy /= R_;
                    mean_dyxh /= R_;
                    for (int r = 0; r < R_; ++r) {
                      double dyg = g.at(r, c) * G_.v[size_t(c)];
                      gx.at(r, c) += iv * (dyg - mean_dy - xh->at(r, c) * mean_dyxh);
                    }
                  } else {
                    for (int r = 0; r < R_; ++r)
                      gx.at(r, c) += g.at(r, c) * G_.v[size_t(c)] * iv;
                  }
                }
              }
            });
}

inline Var reshape(Var a, std::vector<int> shape) {
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  if (Tensor::count(shape) != A.numel())
    throw ContractError("reshape: element count mismatch " + A.shape_str() + " -> " +
                        Tensor::shape_str(shape));
  Tensor out;
  out.shape = std::move(shape);
  out.v = A.v;
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         auto& dst = t.grad_buf(ia).v;
                         for (size_t i = 0; i < dst.size(); ++i) dst[i] += g.v[i];
                       });
}

namespace detail {
struct PoolDims {
  int outer, n, inner;  // pooled axis has length n; strides via inner
};
inline PoolDims pool_dims(const Tensor& t, int axis, const char* op) {
  if (t.rank() == 2) {
    if (axis == 0) return {1, t.dim(0), t.dim(1)};
    if (axis == 1) return {t.dim(0), t.dim(1), 1};
  } else if (t.rank() == 3 && axis == 1) {
    return {t.dim(0), t.dim(1), t.dim(2)};
  }
  throw ContractError(std::string(op) + ": unsupported axis " + std::to_string(axis) +
                      " for shape " + t.shape_str());
}
inline std::vector<int> pool_shape(const Tensor& t, int axis) {
  std::vector<int> s;
  for (int i = 0; i < t.rank(); ++i)
    if (i != axis) s.push_back(t.dim(i));
  return s;
}
}  // namespace detail

inline Var mean_pool(Var a, int axis) {
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  auto d = detail::pool_dims(A, axis, "mean_pool");
  Tensor out(detail::pool_shape(A, axis));
  for (int o = 0; o < d.outer; ++o)
    for (int i = 0; i < d.inner; ++i) {
      double s = 0.0;
      for (int k = 0; k < d.n; ++k)
        s += A.v[size_t(o) * d.n * d.inner + size_t(k) * d.inner + i];
      out.v[size_t(o) * d.inner + i] = s / d.n;
    }
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, d](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& gx = t.grad_buf(ia);
                         for (int o = 0; o < d.outer; ++o)
                           for (int i = 0; i < d.inner; ++i) {
                             double gv = g.v[size_t(o) * d.inner + i] / d.n;
                             for (int k = 0; k < d.n; ++k)
                               gx.v[size_t(o) * d.n * d.inner + size_t(k) * d.inner + i] += gv;
                           }
                       });
}

/// Max over one axis; gradient routes to the argmax, ties to the lowest index.
inline Var max_pool(Var a, int axis) {
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  auto d = detail::pool_dims(A, axis, "max_pool");
  Tensor out(detail::pool_shape(A, axis));
  auto argmax = std::make_shared<std::vector<int>>(out.v.size(), 0);
  for (int o = 0; o < d.outer; ++o)
    for (int i = 0; i < d.inner; ++i) {
      double best = A.v[size_t(o) * d.n * d.inner + i];
      int best_k = 0;
      for (int k = 1; k < d.n; ++k) {
        double x = A.v[size_t(o) * d.n * d.inner + size_t(k) * d.inner + i];
        if (x > best) {
          best = x;
          best_k = k;
        }
      }
      out.v[size_t(o) * d.inner + i] = best;
      (*argmax)[size_t(o) * d.inner + i] = best_k;
    }
  bool rg = tp.wants_grad(a.id);
  int ia = a.id;
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, d, argmax](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         Tensor& gx = t.grad_buf(ia);
                         for (int o = 0; o < d.outer; ++o)
                           for (int i = 0; i < d.inner; ++i) {
                             int k = (*argmax)[size_t(o) * d.inner + i];
                             gx.v[size_t(o) * d.n * d.inner + size_t(k) * d.inner + i] +=
                                 g.v[size_t(o) * d.inner + i];
                           }
                       });
}

inline Var concat(Var a, Var b, int axis) {
  detail::same_tape(a, b);
  Tape& tp = detail::tape_of(a);
  const Tensor& A = tp.val(a);
  const Tensor& B = tp.val(b);
  require_2d(A, "concat");
  require_2d(B, "concat");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  if (A.dim(1 - axis) != B.dim(1 - axis))
    throw ContractError("concat: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Tensor out(axis == 0 ? std::vector<int>{A.rows() + B.rows(), A.cols()}
                       : std::vector<int>{A.rows(), A.cols() + B.cols()});
  if (axis == 0) {
    std::copy(A.v.begin(), A.v.end(), out.v.begin());
    std::copy(B.v.begin(), B.v.end(), out.v.begin() + A.numel());
  } else {
    for (int r = 0; r < A.rows(); ++r) {
      for (int c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c);
      for (int c = 0; c < B.cols(); ++c) out.at(r, A.cols() + c) = B.at(r, c);
    }
  }
  bool rg = tp.wants_grad(a.id) || tp.wants_grad(b.id);
  int ia = a.id, ib = b.id;
  int ar = A.rows(), ac = A.cols();
  return tp.make(std::move(out), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ia, ib, axis, ar, ac](Tape& t, int self) {
                         const Tensor& g = t.node(self).grad;
                         if (axis == 0) {
                           if (t.wants_grad(ia)) {
                             Tensor& ga = t.grad_buf(ia);
                             for (int64_t i = 0; i < ga.numel(); ++i) ga.v[size_t(i)] += g.v[size_t(i)];
                           }
                           if (t.wants_grad(ib)) {
                             Tensor& gb = t.grad_buf(ib);
                             int64_t off = int64_t(ar) * ac;
                             for (int64_t i = 0; i < gb.numel(); ++i)
                               gb.v[size_t(i)] += g.v[size_t(off + i)];
                           }
                         } else {
                           if (t.wants_grad(ia)) {
                             Tensor& ga = t.grad_buf(ia);
                             for (int r = 0; r < ga.rows(); ++r)
                               for (int c = 0; c < ga.cols(); ++c) ga.at(r, c) += g.at(r, c);
                           }
                           if (t.wants_grad(ib)) {
                             Tensor& gb = t.grad_buf(ib);
                             for (int r = 0; r < gb.rows(); ++r)
                               for (int c = 0; c < gb.cols(); ++c)
                                 gb.at(r, c) += g.at(r, ac + c);
                           }
                         }
                       });
}

/// Multi-head scaled dot-product self-attention over `batch` windows of
/// `seq` frames each. q/k/v are (batch*seq, d) with d divisible by heads.
/// Attention is full bidirectional (no mask).
inline Var mha(Var q, Var k, Var v, int batch, int seq, int heads) {
  detail::same_tape(q, k);
  detail::same_tape(q, v);
  Tape& tp = detail::tape_of(q);
  const Tensor& Q = tp.val(q);
  const Tensor& K = tp.val(k);
  const Tensor& V = tp.val(v);
  require_2d(Q, "mha");
  require_same_shape(Q, K, "mha");
  require_same_shape(Q, V, "mha");
  const int d = Q.cols();
  if (Q.rows() != batch * seq || heads < 1 || d % heads != 0)
    throw ContractError("mha: bad geometry for input " + Q.shape_str());
  const int dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));

  Tensor out({batch * seq, d});
  auto attn = std::make_shared<Tensor>(
      Tensor::zeros({batch * heads, seq, seq}));  // softmax weights, saved for backward
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      const int row0 = b * seq;
      const int col0 = h * dh;
      double* A = &attn->v[(size_t(b) * heads + h) * seq * seq];
      for (int i = 0; i < seq; ++i) {
        double m = -1e300;
        for (int j = 0; j < seq; ++j) {
          double s = 0.0;
          for (int c = 0; c < dh; ++c)
            s += Q.at(row0 + i, col0 + c) * K.at(row0 + j, col0 + c);
          s *= inv_sqrt;
          A[i * seq + j] = s;
          m = std::max(m, s);
        }
        double sum = 0.0;
        for (int j = 0; j < seq; ++j) {
          double e = std::exp(A[i * seq + j] - m);
          A[i * seq + j] = e;
          sum += e;
        }
        for (int j = 0; j < seq; ++j) A[i * seq + j] /= sum;
        for (int c = 0; c < dh; ++c) {
          double o = 0.0;
          for (int j = 0; j < seq; ++j) o += A[i * seq + j] * V.at(row0 + j, col0 + c);
          out.at(row0 + i, col0 + c) = o;
        }
      }
    }
  }
  bool rg = tp.wants_grad(q.id) || tp.wants_grad(k.id) || tp.wants_grad(v.id);
  int iq = q.id, ik = k.id, iv = v.id;
  return tp.make(
      std::move(out), rg,
      !rg ? std::function<void(Tape&, int)>{}
          : [iq, ik, iv, batch, seq, heads, dh, inv_sqrt, attn](Tape& t, int self) {
              const Tensor& g = t.node(self).grad;
              const Tensor& Q_ = t.node(iq).val;
              const Tensor& K_ = t.node(ik).val;
              const Tensor& V_ = t.node(iv).val;
              Tensor& gq = t.grad_buf(iq);
              Tensor& gk = t.grad_buf(ik);
              Tensor& gv = t.grad_buf(iv);
              std::vector<double> dA(size_t(seq) * seq), dS(size_t(seq) * seq);
              for (int b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                  const int row0 = b * seq;
                  const int col0 = h * dh;
                  const double* A = &attn->v[(size_t(b) * heads + h) * seq * seq];
                  // dV += A^T dO ; dA = dO V^T
                  for (int i = 0; i < seq; ++i)
                    for (int j = 0; j < seq; ++j) {
                      double s = 0.0;
                      for (int c = 0; c < dh; ++c)
                        s += g.at(row0 + i, col0 + c) * V_.at(row0 + j, col0 + c);
                      dA[size_t(i) * seq + j] = s;
                    }
                  for (int j = 0; j < seq; ++j)
                    for (int c = 0; c < dh; ++c) {
                      double s = 0.0;
                      for (int i = 0; i < seq; ++i)
                        s += A[i * seq + j] * g.at(row0 + i, col0 + c);
                      gv.at(row0 + j, col0 + c) += s;
                    }
                  // dS = A o (dA - rowsum(dA o A))
                  for (int i = 0; i < seq; ++i) {
                    double dot = 0.0;
                    for (int j = 0; j < seq; ++j)
                      dot += dA[size_t(i) * seq + j] * A[i * seq + j];
                    for (int j = 0; j < seq; ++j)
                      dS[size_t(i) * seq + j] =
                          A[i * seq + j] * (dA[size_t(i) * seq + j] - dot);
                  }
                  // dQ += dS K / sqrt(dh) ; dK += dS^T Q / sqrt(dh)
                  for (int i = 0; i < seq; ++i)
                    for (int c = 0; c < dh; ++c) {
                      double sq = 0.0;
                      for (int j = 0; j < seq; ++j)
                        sq += dS[size_t(i) * seq + j] * K_.at(row0 + j, col0 + c);
                      gq.at(row0 + i, col0 + c) += sq * inv_sqrt;
                    }
                  for (int j = 0; j < seq; ++j)
                    for (int c = 0; c < dh; ++c) {
                      double sk = 0.0;
                      for (int i = 0; i < seq; ++i)
                        sk += dS[size_t(i) * seq + j] * Q_.at(row0 + i, col0 + c);
                      gk.at(row0 + j, col0 + c) += sk * inv_sqrt;
                    }
                }
              }
            });
}

/// Squared-error loss: per row the squared L2 norm over columns, averaged
/// over rows.
inline Var mse_loss(Var pred, Var target) {
  detail::same_tape(pred, target);
  Tape& tp = detail::tape_of(pred);
  const Tensor& P = tp.val(pred);
  const Tensor& T = tp.val(target);
  require_same_shape(P, T, "mse_loss");
  require_2d(P, "mse_loss");
  const int R = P.rows();
  double loss = 0.0;
  for (size_t i = 0; i < P.v.size(); ++i) {
    double d = P.v[i] - T.v[i];
    loss += d * d;
  }
  loss /= R;
  bool rg = tp.wants_grad(pred.id) || tp.wants_grad(target.id);
  int ip = pred.id, it = target.id;
  return tp.make(Tensor::scalar(loss), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ip, it](Tape& t, int self) {
                         const double g = t.node(self).grad.v[0];
                         const Tensor& P_ = t.node(ip).val;
                         const Tensor& T_ = t.node(it).val;
                         const double w = 2.0 * g / P_.rows();
                         if (t.wants_grad(ip)) {
                           auto& dst = t.grad_buf(ip).v;
                           for (size_t i = 0; i < dst.size(); ++i)
                             dst[i] += w * (P_.v[i] - T_.v[i]);
                         }
                         if (t.wants_grad(it)) {
                           auto& dst = t.grad_buf(it).v;
                           for (size_t i = 0; i < dst.size(); ++i)
                             dst[i] -= w * (P_.v[i] - T_.v[i]);
                         }
                       });
}

constexpr double kProbClamp = 1e-12;

/// Cross entropy between one-hot targets and predicted probabilities,
/// averaged over rows. Probabilities are clamped at 1e-12 before the log.
inline Var cross_entropy_loss(Var probs, Var onehot) {
  detail::same_tape(probs, onehot);
  Tape& tp = detail::tape_of(probs);
  const Tensor& P = tp.val(probs);
  const Tensor& T = tp.val(onehot);
  require_same_shape(P, T, "cross_entropy_loss");
  require_2d(P, "cross_entropy_loss");
  const int R = P.rows();
  double loss = 0.0;
  for (size_t i = 0; i < P.v.size(); ++i)
    if (T.v[i] != 0.0) loss -= T.v[i] * std::log(std::max(P.v[i], kProbClamp));
  loss /= R;
  bool rg = tp.wants_grad(probs.id);
  int ip = probs.id, it = onehot.id;
  return tp.make(Tensor::scalar(loss), rg,
                 !rg ? std::function<void(Tape&, int)>{}
                     : [ip, it](Tape& t, int self) {
                         const double g = t.node(self).grad.v[0];
                         const Tensor& P_ = t.node(ip).val;
                         const Tensor& T_ = t.node(it).val;
                         Tensor& gp = t.grad_buf(ip);
                         const double w = g / P_.rows();
                         for (size_t i = 0; i < P_.v.size(); ++i)
                           if (T_.v[i] != 0.0 && P_.v[i] > kProbClamp)
                             gp.v[i] -= w * T_.v[i] / P_.v[i];
                       });
}

}  // namespace asdkit::ag
