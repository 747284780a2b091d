#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "mlaforge/neural/network.hpp"

namespace mlaforge::neural {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 4;
  int max_epochs = 200;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate >= 0.0)) throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (max_epochs < 0) throw std::invalid_argument("TrainConfig: max_epochs must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: beta1 and beta2 must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size}, {"max_epochs", c.max_epochs},
          {"beta1", c.beta1},                 {"beta2", c.beta2},           {"epsilon", c.epsilon},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "batch_size") c.batch_size = value.get<int>();
    else if (key == "max_epochs") c.max_epochs = value.get<int>();
    else if (key == "beta1") c.beta1 = value.get<double>();
    else if (key == "beta2") c.beta2 = value.get<double>();
    else if (key == "epsilon") c.epsilon = value.get<double>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else throw std::invalid_argument("TrainConfig: unknown key " + key);
  }
  c.validate();
  return c;
}

template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  long step = 0;
};

/// One bias-corrected Adam update; moments kept in double.
template <typename T>
void adam_step(NetParams<T>& params, const NetParams<T>& grads, AdamState<T>& state, const TrainConfig& cfg) {
  std::vector<Tensor<T>*> ps;
  std::vector<const Tensor<T>*> gs;
  params.for_each([&](const std::string&, Tensor<T>& t) { ps.push_back(&t); });
  grads.for_each([&](const std::string&, const Tensor<T>& t) { gs.push_back(&t); });
  if (ps.size() != gs.size()) throw std::invalid_argument("adam_step: parameter/gradient structure mismatch");
  if (state.m.empty()) {
    for (auto* p : ps) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (ps[k]->shape() != gs[k]->shape()) throw std::invalid_argument("adam_step: shape mismatch");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < ps[k]->size(); ++i) {
      const double g = static_cast<double>((*gs[k])[i]);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
      (*ps[k])[i] = static_cast<T>(static_cast<double>((*ps[k])[i]) - update);
    }
  }
}

template <typename T>
void accumulate(NetParams<T>& into, const NetParams<T>& g) {
  std::vector<const Tensor<T>*> gs;
  g.for_each([&](const std::string&, const Tensor<T>& t) { gs.push_back(&t); });
  std::size_t k = 0;
  into.for_each([&](const std::string&, Tensor<T>& t) { t += *gs[k++]; });
}

template <typename T>
void scale(NetParams<T>& p, T s) {
  p.for_each([&](const std::string&, Tensor<T>& t) {
    for (auto& v : t.values()) v *= s;
  });
}

/// One training pair: cube (2E, D, L) and SLA target (2, D, L).
template <typename T>
struct Sample {
  Tensor<T> cube;
  Tensor<T> target;
};

template <typename T>
Tensor<T> batch_of(const Tensor<T>& t) {
  Tensor<T> out = t;
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  out.reshape(s);
  return out;
}

/// L1 loss of the network on one sample and, if requested, its gradients.
template <typename T>
double sample_loss(const Sample<T>& s, const NetParams<T>& p, const NetConfig& cfg, NetParams<T>* grads = nullptr) {
  const auto x = batch_of(s.cube);
  const auto y = batch_of(s.target);
  if (!grads) return l1_loss(model_forward(x, p, cfg), y).value;
  ForwardCache<T> cache;
  const auto out = model_forward(x, p, cfg, &cache);
  auto loss = l1_loss(out, y);
  *grads = model_backward(x, p, cfg, cache, loss.grad);
  return loss.value;
}

template <typename T>
double mean_loss(const std::vector<Sample<T>>& set, const NetParams<T>& p, const NetConfig& cfg) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (const auto& x : set) s += sample_loss(x, p, cfg);
  return s / static_cast<double>(set.size());
}

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

template <typename T>
struct TrainResult {
  NetParams<T> best;
  NetParams<T> last;
  double initial_val_loss = 0.0;
  int best_epoch = 0;  // 0 means the initial parameters were never improved on
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Mini-batch Adam on the L1 loss. Samples are visited in a seeded shuffle
/// and gradients are summed in a fixed order, so runs are reproducible. The
/// returned `best` parameters minimise validation loss (training loss when
/// no validation set is given).
template <typename T>
TrainResult<T> train(const std::vector<Sample<T>>& train_set, const std::vector<Sample<T>>& val_set, const NetConfig& net_cfg,
                     const TrainConfig& cfg, NetParams<T> init, const TrainHooks& hooks = {}) {
  cfg.validate();
  net_cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  TrainResult<T> r;
  r.last = std::move(init);
  r.best = r.last;
  const bool has_val = !val_set.empty();
  r.initial_val_loss = has_val ? mean_loss(val_set, r.last, net_cfg) : mean_loss(train_set, r.last, net_cfg);
  double best = r.initial_val_loss;

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  AdamState<T> state;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      NetParams<T> sum = zero_params<T>(net_cfg);
      for (std::size_t k = start; k < stop; ++k) {
        NetParams<T> g;
        epoch_loss += sample_loss(train_set[order[k]], r.last, net_cfg, &g);
        accumulate(sum, g);
      }
      scale(sum, static_cast<T>(1.0 / static_cast<double>(stop - start)));
      adam_step(r.last, sum, state, cfg);
    }
    if (!r.last.all_finite()) throw std::runtime_error("train: parameters became non-finite");
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
    rec.val_loss = has_val ? mean_loss(val_set, r.last, net_cfg) : rec.train_loss;
    r.history.push_back(rec);
    if (rec.val_loss < best) {
      best = rec.val_loss;
      r.best = r.last;
      r.best_epoch = epoch;
    }
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return r;
}

}  // namespace mlaforge::neural
