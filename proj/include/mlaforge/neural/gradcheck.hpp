#pragma once

// Central finite-difference verification of the network gradient in double
// precision. With relu activations and the L1 loss the loss is piecewise
// linear in any single parameter, so away from kinks the central difference
// is exact up to rounding. Coordinates whose stencil straddles a kink are
// detected from the second difference and retried with a smaller step.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "mlaforge/neural/train.hpp"

namespace mlaforge::neural {

enum class GradCheckLoss { l1, projection };

struct GradCheckOptions {
  std::size_t coordinates = 200;
  std::uint64_t seed = 0;
  double step = 1e-5;  // scaled by max(1, |theta|)
  GradCheckLoss loss = GradCheckLoss::l1;
  double abs_floor = 1e-6;  // denominator floor, scaled by max(1, |loss|)
  // test hook: tamper with the analytic gradient before comparison
  std::function<void(NetParams<double>&)> corrupt;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::string worst_parameter;
  double loss = 0.0;
};

inline std::size_t grads_size(const NetConfig& cfg) { return parameter_count(cfg); }

inline GradCheckReport grad_check(const NetConfig& cfg, NetParams<double> params, const Sample<double>& sample,
                                  const GradCheckOptions& opt = {}) {
  const auto x = batch_of(sample.cube);
  const auto y = batch_of(sample.target);
  Tensor<double> projection;
  if (opt.loss == GradCheckLoss::projection) {
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> g;
    projection = Tensor<double>(y.shape());
    for (auto& v : projection.values()) v = g(rng);
  }
  auto loss_of = [&](const Tensor<double>& out) {
    return opt.loss == GradCheckLoss::l1 ? l1_loss(out, y).value : dot(out, projection);
  };

  ForwardCache<double> cache;
  const auto out = model_forward(x, params, cfg, &cache);
  const double f0 = loss_of(out);
  auto grads = model_backward(x, params, cfg, cache,
                              opt.loss == GradCheckLoss::l1 ? l1_loss(out, y).grad : projection);
  if (opt.corrupt) opt.corrupt(grads);

  struct Coord {
    Tensor<double>* value;
    const Tensor<double>* grad;
    std::size_t index;
    std::string name;
  };
  std::vector<Tensor<double>*> values;
  std::vector<std::string> names;
  std::vector<const Tensor<double>*> gvalues;
  params.for_each([&](const std::string& n, Tensor<double>& t) {
    values.push_back(&t);
    names.push_back(n);
  });
  grads.for_each([&](const std::string&, const Tensor<double>& t) { gvalues.push_back(&t); });
  std::vector<Coord> coords;
  for (std::size_t k = 0; k < values.size(); ++k)
    for (std::size_t i = 0; i < values[k]->size(); ++i) coords.push_back({values[k], gvalues[k], i, names[k]});
  if (opt.coordinates < coords.size()) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
  }

  GradCheckReport report;
  report.loss = f0;
  const double scale = std::max(1.0, std::abs(f0));
  const double kink_threshold = 1e-13 * scale;
  for (const auto& c : coords) {
    if (report.checked >= opt.coordinates) break;
    double& theta = (*c.value)[c.index];
    const double saved = theta;
    double numeric = 0.0;
    bool smooth = false;
    for (double h : {opt.step, opt.step / 10.0}) {
      const double step = h * std::max(1.0, std::abs(saved));
      theta = saved + step;
      const double fp = loss_of(model_forward(x, params, cfg));
      theta = saved - step;
      const double fm = loss_of(model_forward(x, params, cfg));
      theta = saved;
      if (std::abs(fp - 2.0 * f0 + fm) <= kink_threshold) {
        numeric = (fp - fm) / (2.0 * step);
        smooth = true;
        break;
      }
    }
    if (!smooth) {
      ++report.skipped_kinks;
      continue;
    }
    const double analytic = (*c.grad)[c.index];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor * scale});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.checked;
    if (rel > report.max_rel_error || report.worst_parameter.empty()) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      report.worst_parameter = c.name + "[" + std::to_string(c.index) + "]";
    }
  }
  return report;
}

}  // namespace mlaforge::neural
