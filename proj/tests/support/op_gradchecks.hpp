#pragma once

// One finite-difference check per differentiable operator, shared by the
// unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "rdl/ops.hpp"
#include "support/gradcheck.hpp"

namespace rdl::testing {

struct NamedGradCheck {
  std::string name;
  std::function<GradCheckResult()> run;
};

inline tg::Var<double> fd_leaf(tg::Shape s, std::uint64_t seed, double scale = 1.0) {
  tg::Rng rng(seed);
  return tg::Var<double>::leaf(tg::randn<double>(std::move(s), rng, scale));
}

inline tg::Var<double> fd_const(tg::Shape s, std::uint64_t seed) {
  tg::Rng rng(seed);
  return tg::Var<double>::constant(tg::randn<double>(std::move(s), rng));
}

inline std::vector<NamedGradCheck> operator_gradchecks() {
  using namespace tg;
  std::vector<NamedGradCheck> out;
  out.push_back({"conv2d grouped strided", [] {
                   auto x = fd_leaf({2, 4, 5, 5}, 1), w = fd_leaf({6, 2, 3, 3}, 2);
                   return grad_check({{"x", x}, {"w", w}}, [&] {
                     auto y = conv2d(x, w, {2, 1, 2});
                     return sum(mul(y, y));
                   });
                 }});
  out.push_back({"conv2d depthwise", [] {
                   auto x = fd_leaf({2, 3, 4, 4}, 21), w = fd_leaf({3, 1, 3, 3}, 22);
                   auto t = fd_const({2, 3, 4, 4}, 23);
                   return grad_check({{"x", x}, {"w", w}}, [&] { return sum(mul(conv2d(x, w, {1, 1, 3}), t)); });
                 }});
  out.push_back({"conv2d pointwise", [] {
                   auto x = fd_leaf({2, 4, 3, 3}, 3), w = fd_leaf({2, 4, 1, 1}, 4);
                   auto t = fd_const({2, 2, 3, 3}, 5);
                   return grad_check({{"x", x}, {"w", w}}, [&] { return sum(mul(conv2d(x, w, {}), t)); });
                 }});
  for (Mode mode : {Mode::Train, Mode::Eval}) {
    out.push_back({mode == Mode::Train ? "batch_norm train" : "batch_norm eval", [mode] {
                     auto x = fd_leaf({2, 3, 4, 4}, 6), g = fd_leaf({3}, 7), b = fd_leaf({3}, 8);
                     auto t = fd_const({2, 3, 4, 4}, 9);
                     RunningStats<double> rs(3);
                     rs.var = Tensor<double>({3}, std::vector<double>{0.5, 1.5, 2.0});
                     return grad_check({{"x", x}, {"gamma", g}, {"beta", b}}, [&] {
                       RunningStats<double> local = rs;
                       return sum(mul(batch_norm(x, g, b, local, mode), t));
                     });
                   }});
  }
  out.push_back({"relu, global_avg_pool, linear, scale, add", [] {
                   auto x = fd_leaf({3, 2, 3, 3}, 10), w = fd_leaf({4, 2}, 11), b = fd_leaf({4}, 12);
                   return grad_check({{"x", x}, {"w", w}, {"b", b}}, [&] {
                     auto h = global_avg_pool(relu(add(x, scale(x, 0.5))));
                     auto y = linear(h, w, b);
                     return sum(mul(y, y));
                   });
                 }});
  out.push_back({"dropout with a fixed mask", [] {
                   auto x = fd_leaf({4, 5}, 13);
                   return grad_check({{"x", x}}, [&] {
                     Rng rng(77);
                     auto y = dropout(x, 0.3, rng, Mode::Train);
                     return sum(mul(y, y));
                   });
                 }});
  out.push_back({"softmax_t, kl_div, cross_entropy", [] {
                   auto s = fd_leaf({3, 4}, 14), t = fd_leaf({3, 4}, 15);
                   return grad_check({{"s", s}, {"t", t}}, [&] {
                     auto p = softmax_t(t, 2.0), q = softmax_t(s, 2.0);
                     return add(kl_div(p, q), cross_entropy(s, {0, 3, 1}));
                   });
                 }});
  return out;
}

}  // namespace rdl::testing
