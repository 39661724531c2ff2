#pragma once

#include <vector>

#include "rdl/autograd.hpp"

namespace rdl::tg {

struct ConvParams {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Grouped 2-D convolution, NCHW input, weight [n, m/t, k, k], zero padding.
/// Output group b reads only input group b. Throws ShapeMismatch.
template <typename T>
Var<T> conv2d(const Var<T> &input, const Var<T> &weight, const ConvParams &p);

template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit RunningStats(int channels = 0)
      : mean(Shape{channels}, T(0)), var(Shape{channels}, T(1)) {}
};

enum class Mode { Train, Eval };

/// Per-channel batch normalization over (N, H, W). In train mode normalizes
/// with the biased batch variance and folds the unbiased one into `stats`.
template <typename T>
Var<T> batch_norm(const Var<T> &input, const Var<T> &gamma, const Var<T> &beta,
                  RunningStats<T> &stats, Mode mode, double momentum = 0.1, double eps = 1e-5);

template <typename T>
Var<T> relu(const Var<T> &x);

/// [N, C, H, W] -> [N, C]
template <typename T>
Var<T> global_avg_pool(const Var<T> &x);

/// x [N, in], weight [out, in], bias [out] -> [N, out]
template <typename T>
Var<T> linear(const Var<T> &x, const Var<T> &weight, const Var<T> &bias);

/// Inverted dropout: zeroes with probability p and scales survivors by
/// 1/(1-p) in train mode; identity in eval mode or when p == 0.
template <typename T>
Var<T> dropout(const Var<T> &x, double p, Rng &rng, Mode mode);

template <typename T>
Var<T> add(const Var<T> &a, const Var<T> &b);

template <typename T>
Var<T> mul(const Var<T> &a, const Var<T> &b);

template <typename T>
Var<T> scale(const Var<T> &x, double s);

template <typename T>
Var<T> sum(const Var<T> &x);

/// Row-wise softmax of logits / T over the last axis of a [N, K] tensor,
/// computed in max-subtracted form. Throws DomainError on T <= 0 or
/// non-finite logits.
template <typename T>
Var<T> softmax_t(const Var<T> &logits, double temperature);

/// Mean over rows of -log softmax(logits)[label].
template <typename T>
Var<T> cross_entropy(const Var<T> &logits, const std::vector<int> &labels);

/// Mean over rows of sum_k p ln(p / q), with 0 ln 0 = 0. Throws DomainError
/// when q has a zero where p > 0.
template <typename T>
Var<T> kl_div(const Var<T> &p, const Var<T> &q);

}  // namespace rdl::tg
