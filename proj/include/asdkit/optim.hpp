#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "asdkit/autograd.hpp"

namespace asdkit::ag {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update from p.grad. Each param carries its own
/// moment buffers and step counter, so params can be stepped selectively
/// without perturbing the others.
inline void adam_step(Param& p, const AdamConfig& c) {
  if (!p.trainable) return;
  p.adam_t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, double(p.adam_t));
  const double bc2 = 1.0 - std::pow(c.beta2, double(p.adam_t));
  auto& val = p.value.v;
  const auto& g = p.grad.v;
  auto& m = p.adam_m.v;
  auto& v = p.adam_v.v;
  for (size_t i = 0; i < val.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    val[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

inline void adam_step(std::vector<Param*>& group, const AdamConfig& c) {
  for (Param* p : group) adam_step(*p, c);
}

struct FdOptions {
  int probe_count = 50;
  double h = 1e-4;
  uint64_t seed = 0;
  double abs_floor = 1e-8;
};

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0, numeric = 0.0;
};

/// Compare analytic gradients against central differences at randomly probed
/// parameter coordinates. `f(true)` must evaluate the loss and leave gradients
/// in the params; `f(false)` must evaluate the loss only. f has to be
/// deterministic (eval-mode batch norm, fixed data).
inline FdReport finite_diff_check(const std::function<double(bool)>& f, ParamSet& params,
                                  const FdOptions& opt = {}) {
  std::vector<std::pair<Param*, int64_t>> coords;
  for (size_t i = 0; i < params.size(); ++i) {
    Param& p = params.at(i);
    if (!p.trainable) continue;
    for (int64_t j = 0; j < p.value.numel(); ++j) coords.emplace_back(&p, j);
  }
  if (coords.empty()) throw ContractError("finite_diff_check: no trainable coordinates");

  params.zero_grad();
  f(true);

  Rng rng(opt.seed);
  FdReport rep;
  const int probes = std::min<int64_t>(opt.probe_count, int64_t(coords.size()));
  for (int n = 0; n < probes; ++n) {
    auto [p, j] = coords[size_t(rng.bounded(coords.size()))];
    const double saved = p->value.v[size_t(j)];
    p->value.v[size_t(j)] = saved + opt.h;
    const double fp = f(false);
    p->value.v[size_t(j)] = saved - opt.h;
    const double fm = f(false);
    p->value.v[size_t(j)] = saved;
    const double numeric = (fp - fm) / (2.0 * opt.h);
    const double analytic = p->grad.v[size_t(j)];
    const double err = std::fabs(analytic - numeric);
    const double rel =
        err <= opt.abs_floor ? 0.0 : err / std::max(std::fabs(analytic), std::fabs(numeric));
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_param = p->name;
      rep.worst_index = j;
      rep.analytic = analytic;
      rep.numeric = numeric;
    }
  }
  return rep;
}

}  // namespace asdkit::ag
