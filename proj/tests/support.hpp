#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "tinyseq/tensor.hpp"

namespace tinyseq::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                            double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

// Weighted sum with fixed random weights, so every output element carries a
// distinct upstream gradient.
inline Tensor probe_sum(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto w = random_tensor(out.shape(), rng, false);
  return sum_all(mul(out, w));
}

struct GradCheck {
  double worst_rel = 0.0;
  double worst_abs = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
  std::string first_failure;

  bool ok() const { return failures == 0 && checked > 0; }
};

// Central differences (step h) against tape gradients for every element of
// every input that requires gradients. An element passes when the relative
// error is within rel_tol, or both values are below abs_floor in difference
// (gradients that are zero up to rounding).
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                 double h = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-8) {
  for (auto& t : inputs) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.size(), 0.0);
    }
  }
  GradCheck r;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = loss_fn().item();
      values[i] = saved - h;
      const double fm = loss_fn().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[k][i];
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale > 0.0 ? diff / scale : 0.0;
      ++r.checked;
      r.worst_abs = std::max(r.worst_abs, diff);
      if (diff > abs_floor) r.worst_rel = std::max(r.worst_rel, rel);
      if (diff > abs_floor && rel > rel_tol) {
        if (r.failures++ == 0) {
          r.first_failure = "input " + std::to_string(k) + " element " + std::to_string(i) +
                            ": tape " + std::to_string(a) + " vs numeric " + std::to_string(numeric);
        }
      }
    }
  }
  return r;
}

}  // namespace tinyseq::testing
