#pragma once

// Central finite-difference oracle for double-precision graphs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "rdl/autograd.hpp"

namespace rdl::testing {

struct GradCheckResult {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;  // entries re-estimated at h / 10
};

/// rel = |analytic - numeric| / max(|analytic|, |numeric|, floor), with
/// step h = 1e-5 * max(1, |x|). `stride` > 1 checks every stride-th element.
///
/// With `refine_nonsmooth`, an entry whose rel exceeds 1e-4 is re-estimated
/// at h / 10; when the two estimates themselves differ by more than 1e-4 the
/// loss has a kink (a ReLU input crossing zero) within h, and the h / 10
/// estimate replaces the first. Agreeing estimates keep the mismatch.
inline GradCheckResult grad_check(std::vector<std::pair<std::string, tg::Var<double>>> leaves,
                                  const std::function<tg::Var<double>()> &loss_fn, double floor = 1e-6,
                                  std::size_t stride = 1, bool refine_nonsmooth = false) {
  for (auto &[name, v] : leaves) v.zero_grad();
  tg::backward(loss_fn());
  std::vector<tg::Tensor<double>> analytic;
  for (auto &[name, v] : leaves) {
    analytic.push_back(v.has_grad() ? v.grad() : tg::Tensor<double>(v.shape()));
  }

  tg::NoGradGuard guard;
  GradCheckResult result;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto &var = leaves[l].second;
    auto &value = var.mutable_value();
    for (std::size_t i = 0; i < value.numel(); i += stride) {
      const double x = value[i];
      auto central = [&](double h) {
        value[i] = x + h;
        const double up = loss_fn().value()[0];
        value[i] = x - h;
        const double down = loss_fn().value()[0];
        value[i] = x;
        return (up - down) / (2 * h);
      };
      auto relative = [floor](double p, double q) {
        return std::abs(p - q) / std::max({std::abs(p), std::abs(q), floor});
      };
      const double h = 1e-5 * std::max(1.0, std::abs(x));
      const double a = analytic[l][i];
      double numeric = central(h);
      double rel = relative(a, numeric);
      if (refine_nonsmooth && rel > 1e-4) {
        const double fine = central(h / 10);
        if (relative(numeric, fine) > 1e-4) {
          numeric = fine;
          rel = relative(a, numeric);
          ++result.nonsmooth;
        }
      }
      ++result.checked;
      if (rel > result.max_rel) {
        result.max_rel = rel;
        result.worst = leaves[l].first + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return result;
}

}  // namespace rdl::testing
