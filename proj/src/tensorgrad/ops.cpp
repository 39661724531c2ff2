#include "rdl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "rdl/parallel.hpp"

namespace rdl::tg {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string &what) {
  if (!ok) throw ShapeMismatch(what);
}

struct ConvGeometry {
  int N, C, H, W;  // input
  int n, k, stride, pad, groups;
  int Ho, Wo;
  int cg, ng;      // input / output channels per group
  int K, P;        // patch length, output pixels
  bool direct;     // 1x1, stride 1, no padding: the input slice is the patch matrix
};

ConvGeometry conv_geometry(const Shape &x, const Shape &w, const ConvParams &p) {
  require(x.size() == 4, "conv2d input must be NCHW, got " + shape_str(x));
  require(w.size() == 4, "conv2d weight must be [n, m/t, k, k], got " + shape_str(w));
  require(p.groups >= 1 && p.stride >= 1 && p.padding >= 0, "conv2d needs groups>=1, stride>=1, padding>=0");
  ConvGeometry g{};
  g.N = x[0], g.C = x[1], g.H = x[2], g.W = x[3];
  g.n = w[0], g.k = w[2];
  g.stride = p.stride, g.pad = p.padding, g.groups = p.groups;
  require(w[2] == w[3], "conv2d kernel must be square, got " + shape_str(w));
  require(g.C % g.groups == 0,
          "conv2d groups=" + std::to_string(g.groups) + " does not divide input channels m=" + std::to_string(g.C));
  require(g.n % g.groups == 0,
          "conv2d groups=" + std::to_string(g.groups) + " does not divide output channels n=" + std::to_string(g.n));
  g.cg = g.C / g.groups;
  g.ng = g.n / g.groups;
  require(w[1] == g.cg, "conv2d weight has " + std::to_string(w[1]) + " input channels per group, input provides m/t=" +
                            std::to_string(g.cg));
  g.Ho = (g.H + 2 * g.pad - g.k) / g.stride + 1;
  g.Wo = (g.W + 2 * g.pad - g.k) / g.stride + 1;
  require(g.H + 2 * g.pad >= g.k && g.W + 2 * g.pad >= g.k, "conv2d kernel larger than padded input " + shape_str(x));
  g.K = g.cg * g.k * g.k;
  g.P = g.Ho * g.Wo;
  g.direct = g.k == 1 && g.stride == 1 && g.pad == 0;
  return g;
}

// Patch matrix [K, P] for one (sample, group) slice of cg input planes.
template <typename T>
void im2col(const T *x, T *col, const ConvGeometry &g) {
  for (int c = 0; c < g.cg; ++c) {
    const T *plane = x + static_cast<std::size_t>(c) * g.H * g.W;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T *row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.P;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T *dst = row + oy * g.Wo;
          if (iy < 0 || iy >= g.H) {
            std::fill(dst, dst + g.Wo, T(0));
            continue;
          }
          const T *src = plane + iy * g.W;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T *col, T *x, const ConvGeometry &g) {
  for (int c = 0; c < g.cg; ++c) {
    T *plane = x + static_cast<std::size_t>(c) * g.H * g.W;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T *row = col + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * g.P;
        for (int oy = 0; oy < g.Ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.H) continue;
          const T *src = row + oy * g.Wo;
          T *dst = plane + iy * g.W;
          for (int ox = 0; ox < g.Wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_finite(const Tensor<T> &t, const char *what) {
  for (T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) throw DomainError(std::string(what) + ": non-finite input");
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T> &input, const Var<T> &weight, const ConvParams &p) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), p);
  Tensor<T> out(Shape{g.N, g.n, g.Ho, g.Wo});
  const T *x = input.value().data();
  const T *w = weight.value().data();
  T *y = out.data();
  const std::size_t in_plane = static_cast<std::size_t>(g.H) * g.W;

  parallel_chunks(g.N, thread_count(), [&](int, int begin, int end) {
    std::vector<T> col(g.direct ? 0 : static_cast<std::size_t>(g.K) * g.P);
    for (int i = begin; i < end; ++i) {
      for (int b = 0; b < g.groups; ++b) {
        const T *xg = x + (static_cast<std::size_t>(i) * g.C + static_cast<std::size_t>(b) * g.cg) * in_plane;
        const T *patches = xg;
        if (!g.direct) {
          im2col(xg, col.data(), g);
          patches = col.data();
        }
        ConstMatMap<T> wg(w + static_cast<std::size_t>(b) * g.ng * g.K, g.ng, g.K);
        ConstMatMap<T> cm(patches, g.K, g.P);
        MatMap<T> yg(y + (static_cast<std::size_t>(i) * g.n + static_cast<std::size_t>(b) * g.ng) * g.P, g.ng, g.P);
        yg.noalias() = wg * cm;
      }
    }
  });

  return Var<T>::from_op(std::move(out), {input, weight}, [g, in_plane](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    Node<T> &wn = *node.parents[1];
    const T *dy = node.grad.data();
    const T *x = xn.value.data();
    const T *w = wn.value.data();

    if (xn.requires_grad) {
      T *dx = xn.grad_buffer().data();
      parallel_chunks(g.N, thread_count(), [&](int, int begin, int end) {
        std::vector<T> dcol(static_cast<std::size_t>(g.K) * g.P);
        for (int i = begin; i < end; ++i) {
          for (int b = 0; b < g.groups; ++b) {
            ConstMatMap<T> wg(w + static_cast<std::size_t>(b) * g.ng * g.K, g.ng, g.K);
            ConstMatMap<T> dyg(dy + (static_cast<std::size_t>(i) * g.n + static_cast<std::size_t>(b) * g.ng) * g.P,
                               g.ng, g.P);
            T *dxg = dx + (static_cast<std::size_t>(i) * g.C + static_cast<std::size_t>(b) * g.cg) * in_plane;
            if (g.direct) {
              MatMap<T>(dxg, g.K, g.P).noalias() += wg.transpose() * dyg;
            } else {
              MatMap<T>(dcol.data(), g.K, g.P).noalias() = wg.transpose() * dyg;
              col2im(dcol.data(), dxg, g);
            }
          }
        }
      });
    }

    if (wn.requires_grad) {
      const int chunks = reduction_chunks(g.N);
      std::vector<Tensor<T>> partial(chunks, Tensor<T>(wn.value.shape()));
      parallel_chunks(g.N, chunks, [&](int c, int begin, int end) {
        std::vector<T> col(g.direct ? 0 : static_cast<std::size_t>(g.K) * g.P);
        T *dw = partial[c].data();
        for (int i = begin; i < end; ++i) {
          for (int b = 0; b < g.groups; ++b) {
            const T *xg = x + (static_cast<std::size_t>(i) * g.C + static_cast<std::size_t>(b) * g.cg) * in_plane;
            const T *patches = xg;
            if (!g.direct) {
              im2col(xg, col.data(), g);
              patches = col.data();
            }
            ConstMatMap<T> cm(patches, g.K, g.P);
            ConstMatMap<T> dyg(dy + (static_cast<std::size_t>(i) * g.n + static_cast<std::size_t>(b) * g.ng) * g.P,
                               g.ng, g.P);
            MatMap<T>(dw + static_cast<std::size_t>(b) * g.ng * g.K, g.ng, g.K).noalias() += dyg * cm.transpose();
          }
        }
      });
      for (int c = 1; c < chunks; ++c) {
        T *dst = partial[0].data();
        const T *src = partial[c].data();
        for (std::size_t j = 0; j < partial[0].numel(); ++j) dst[j] += src[j];
      }
      accumulate(wn, partial[0]);
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T> &input, const Var<T> &gamma, const Var<T> &beta, RunningStats<T> &stats,
                  Mode mode, double momentum, double eps) {
  const Shape &s = input.shape();
  require(s.size() == 4 || s.size() == 2, "batch_norm input must be NCHW or NC, got " + shape_str(s));
  const int N = s[0], C = s[1];
  const int HW = s.size() == 4 ? s[2] * s[3] : 1;
  require(gamma.value().numel() == static_cast<std::size_t>(C) && beta.value().numel() == static_cast<std::size_t>(C),
          "batch_norm gamma/beta length must equal channel count " + std::to_string(C));
  require(stats.mean.numel() == static_cast<std::size_t>(C) && stats.var.numel() == static_cast<std::size_t>(C),
          "batch_norm running statistics length must equal channel count " + std::to_string(C));
  const bool train = mode == Mode::Train;
  const double M = static_cast<double>(N) * HW;
  if (train && M < 2) throw ShapeMismatch("batch_norm in train mode needs more than one value per channel");

  std::vector<double> mean(C), invstd(C);
  const T *x = input.value().data();
  const T *gm = gamma.value().data();
  const T *bt = beta.value().data();
  Tensor<T> out(s);
  T *y = out.data();

  parallel_for(C, [&](int c) {
    double mu, var;
    if (train) {
      double acc = 0;
      for (int i = 0; i < N; ++i) {
        const T *p = x + (static_cast<std::size_t>(i) * C + c) * HW;
        for (int j = 0; j < HW; ++j) acc += p[j];
      }
      mu = acc / M;
      double sq = 0;
      for (int i = 0; i < N; ++i) {
        const T *p = x + (static_cast<std::size_t>(i) * C + c) * HW;
        for (int j = 0; j < HW; ++j) sq += (p[j] - mu) * (p[j] - mu);
      }
      var = sq / M;
      stats.mean[c] = static_cast<T>((1 - momentum) * stats.mean[c] + momentum * mu);
      stats.var[c] = static_cast<T>((1 - momentum) * stats.var[c] + momentum * var * M / (M - 1));
    } else {
      mu = stats.mean[c];
      var = stats.var[c];
    }
    mean[c] = mu;
    invstd[c] = 1.0 / std::sqrt(var + eps);
    const double a = gm[c] * invstd[c];
    const double b = bt[c] - a * mu;
    for (int i = 0; i < N; ++i) {
      const std::size_t off = (static_cast<std::size_t>(i) * C + c) * HW;
      for (int j = 0; j < HW; ++j) y[off + j] = static_cast<T>(a * x[off + j] + b);
    }
  });

  return Var<T>::from_op(std::move(out), {input, gamma, beta},
                         [N, C, HW, M, train, mean = std::move(mean), invstd = std::move(invstd)](Node<T> &node) {
                           Node<T> &xn = *node.parents[0];
                           Node<T> &gn = *node.parents[1];
                           Node<T> &bn = *node.parents[2];
                           const T *dy = node.grad.data();
                           const T *x = xn.value.data();
                           const T *gm = gn.value.data();
                           T *dx = xn.requires_grad ? xn.grad_buffer().data() : nullptr;
                           T *dg = gn.requires_grad ? gn.grad_buffer().data() : nullptr;
                           T *db = bn.requires_grad ? bn.grad_buffer().data() : nullptr;
                           parallel_for(C, [&](int c) {
                             double sum_dy = 0, sum_dy_xhat = 0;
                             for (int i = 0; i < N; ++i) {
                               const std::size_t off = (static_cast<std::size_t>(i) * C + c) * HW;
                               for (int j = 0; j < HW; ++j) {
                                 const double xhat = (x[off + j] - mean[c]) * invstd[c];
                                 sum_dy += dy[off + j];
                                 sum_dy_xhat += dy[off + j] * xhat;
                               }
                             }
                             if (dg) dg[c] += static_cast<T>(sum_dy_xhat);
                             if (db) db[c] += static_cast<T>(sum_dy);
                             if (!dx) return;
                             const double k = gm[c] * invstd[c];
                             for (int i = 0; i < N; ++i) {
                               const std::size_t off = (static_cast<std::size_t>(i) * C + c) * HW;
                               for (int j = 0; j < HW; ++j) {
                                 double v;
                                 if (train) {
                                   const double xhat = (x[off + j] - mean[c]) * invstd[c];
                                   v = k / M * (M * dy[off + j] - sum_dy - xhat * sum_dy_xhat);
                                 } else {
                                   v = k * dy[off + j];
                                 }
                                 dx[off + j] += static_cast<T>(v);
                               }
                             }
                           });
                         });
}

template <typename T>
Var<T> relu(const Var<T> &x) {
  Tensor<T> out = x.value();
  for (auto &v : out.values()) v = v > T(0) ? v : T(0);
  return Var<T>::from_op(std::move(out), {x}, [](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    T *dx = xn.grad_buffer().data();
    const T *xv = xn.value.data();
    const T *dy = node.grad.data();
    for (std::size_t i = 0; i < xn.value.numel(); ++i) {
      if (xv[i] > T(0)) dx[i] += dy[i];
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T> &x) {
  const Shape &s = x.shape();
  require(s.size() == 4, "global_avg_pool input must be NCHW, got " + shape_str(s));
  const int N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor<T> out(Shape{N, C});
  const T *xv = x.value().data();
  for (int i = 0; i < N * C; ++i) {
    double acc = 0;
    for (int j = 0; j < HW; ++j) acc += xv[static_cast<std::size_t>(i) * HW + j];
    out[i] = static_cast<T>(acc / HW);
  }
  return Var<T>::from_op(std::move(out), {x}, [N, C, HW](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    T *dx = xn.grad_buffer().data();
    const T *dy = node.grad.data();
    for (int i = 0; i < N * C; ++i) {
      const T g = static_cast<T>(dy[i] / HW);
      for (int j = 0; j < HW; ++j) dx[static_cast<std::size_t>(i) * HW + j] += g;
    }
  });
}

template <typename T>
Var<T> linear(const Var<T> &x, const Var<T> &weight, const Var<T> &bias) {
  const Shape &xs = x.shape();
  const Shape &ws = weight.shape();
  require(xs.size() == 2 && ws.size() == 2 && xs[1] == ws[1],
          "linear expects x [N, in] and weight [out, in], got " + shape_str(xs) + " and " + shape_str(ws));
  require(bias.value().numel() == static_cast<std::size_t>(ws[0]), "linear bias length must equal out features");
  const int N = xs[0], in = xs[1], out_f = ws[0];
  Tensor<T> out(Shape{N, out_f});
  MatMap<T> y(out.data(), N, out_f);
  y.noalias() = ConstMatMap<T>(x.value().data(), N, in) * ConstMatMap<T>(weight.value().data(), out_f, in).transpose();
  for (int i = 0; i < N; ++i) {
    for (int o = 0; o < out_f; ++o) y(i, o) += bias.value()[o];
  }
  return Var<T>::from_op(std::move(out), {x, weight, bias}, [N, in, out_f](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    Node<T> &wn = *node.parents[1];
    Node<T> &bn = *node.parents[2];
    ConstMatMap<T> dy(node.grad.data(), N, out_f);
    if (xn.requires_grad) {
      MatMap<T>(xn.grad_buffer().data(), N, in).noalias() += dy * ConstMatMap<T>(wn.value.data(), out_f, in);
    }
    if (wn.requires_grad) {
      MatMap<T>(wn.grad_buffer().data(), out_f, in).noalias() +=
          dy.transpose() * ConstMatMap<T>(xn.value.data(), N, in);
    }
    if (bn.requires_grad) {
      T *db = bn.grad_buffer().data();
      for (int o = 0; o < out_f; ++o) {
        double acc = 0;
        for (int i = 0; i < N; ++i) acc += dy(i, o);
        db[o] += static_cast<T>(acc);
      }
    }
  });
}

template <typename T>
Var<T> dropout(const Var<T> &x, double p, Rng &rng, Mode mode) {
  if (!(p >= 0.0 && p < 1.0)) throw DomainError("dropout probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  Tensor<T> mask(x.shape());
  for (auto &m : mask.values()) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= mask[i];
  return Var<T>::from_op(std::move(out), {x}, [mask = std::move(mask)](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    T *dx = xn.grad_buffer().data();
    const T *dy = node.grad.data();
    for (std::size_t i = 0; i < mask.numel(); ++i) dx[i] += dy[i] * mask[i];
  });
}

template <typename T>
Var<T> add(const Var<T> &a, const Var<T> &b) {
  require(a.shape() == b.shape(), "add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> out = a.value();
  const T *bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  return Var<T>::from_op(std::move(out), {a, b}, [](Node<T> &node) {
    accumulate(*node.parents[0], node.grad);
    accumulate(*node.parents[1], node.grad);
  });
}

template <typename T>
Var<T> mul(const Var<T> &a, const Var<T> &b) {
  require(a.shape() == b.shape(), "mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  Tensor<T> out = a.value();
  const T *bv = b.value().data();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  return Var<T>::from_op(std::move(out), {a, b}, [](Node<T> &node) {
    Node<T> &an = *node.parents[0];
    Node<T> &bn = *node.parents[1];
    const T *dy = node.grad.data();
    if (an.requires_grad) {
      T *da = an.grad_buffer().data();
      for (std::size_t i = 0; i < an.value.numel(); ++i) da[i] += dy[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      T *db = bn.grad_buffer().data();
      for (std::size_t i = 0; i < bn.value.numel(); ++i) db[i] += dy[i] * an.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T> &x, double s) {
  Tensor<T> out = x.value();
  for (auto &v : out.values()) v = static_cast<T>(v * s);
  return Var<T>::from_op(std::move(out), {x}, [s](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    T *dx = xn.grad_buffer().data();
    const T *dy = node.grad.data();
    for (std::size_t i = 0; i < xn.value.numel(); ++i) dx[i] += static_cast<T>(dy[i] * s);
  });
}

template <typename T>
Var<T> sum(const Var<T> &x) {
  double acc = 0;
  for (T v : x.value().values()) acc += v;
  Tensor<T> out(Shape{}, static_cast<T>(acc));
  return Var<T>::from_op(std::move(out), {x}, [](Node<T> &node) {
    Node<T> &xn = *node.parents[0];
    T *dx = xn.grad_buffer().data();
    const T g = node.grad[0];
    for (std::size_t i = 0; i < xn.value.numel(); ++i) dx[i] += g;
  });
}

template <typename T>
Var<T> softmax_t(const Var<T> &logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("softmax temperature must be > 0");
  const Shape &s = logits.shape();
  require(s.size() == 2, "softmax expects [N, K] logits, got " + shape_str(s));
  check_finite(logits.value(), "softmax");
  const int N = s[0], K = s[1];
  Tensor<T> out(s);
  const T *z = logits.value().data();
  for (int i = 0; i < N; ++i) {
    const T *row = z + static_cast<std::size_t>(i) * K;
    const double mx = *std::max_element(row, row + K);
    double denom = 0;
    for (int k = 0; k < K; ++k) denom += std::exp((row[k] - mx) / temperature);
    for (int k = 0; k < K; ++k) {
      out[static_cast<std::size_t>(i) * K + k] = static_cast<T>(std::exp((row[k] - mx) / temperature) / denom);
    }
  }
  return Var<T>::from_op(out, {logits}, [N, K, temperature, y = out](Node<T> &node) {
    Node<T> &zn = *node.parents[0];
    T *dz = zn.grad_buffer().data();
    const T *dy = node.grad.data();
    for (int i = 0; i < N; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * K;
      double dot = 0;
      for (int k = 0; k < K; ++k) dot += dy[off + k] * y[off + k];
      for (int k = 0; k < K; ++k) dz[off + k] += static_cast<T>(y[off + k] * (dy[off + k] - dot) / temperature);
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T> &logits, const std::vector<int> &labels) {
  const Shape &s = logits.shape();
  require(s.size() == 2, "cross_entropy expects [N, K] logits, got " + shape_str(s));
  const int N = s[0], K = s[1];
  require(static_cast<int>(labels.size()) == N, "cross_entropy: " + std::to_string(labels.size()) +
                                                    " labels for " + std::to_string(N) + " rows");
  check_finite(logits.value(), "cross_entropy");
  Tensor<T> probs(s);
  double loss = 0;
  const T *z = logits.value().data();
  for (int i = 0; i < N; ++i) {
    if (labels[i] < 0 || labels[i] >= K) throw DomainError("cross_entropy: label out of range");
    const T *row = z + static_cast<std::size_t>(i) * K;
    const double mx = *std::max_element(row, row + K);
    double denom = 0;
    for (int k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    const double lse = mx + std::log(denom);
    loss += lse - row[labels[i]];
    for (int k = 0; k < K; ++k) probs[static_cast<std::size_t>(i) * K + k] = static_cast<T>(std::exp(row[k] - lse));
  }
  Tensor<T> out(Shape{}, static_cast<T>(loss / N));
  return Var<T>::from_op(std::move(out), {logits},
                         [N, K, labels, probs = std::move(probs)](Node<T> &node) {
                           Node<T> &zn = *node.parents[0];
                           T *dz = zn.grad_buffer().data();
                           const double g = static_cast<double>(node.grad[0]) / N;
                           for (int i = 0; i < N; ++i) {
                             for (int k = 0; k < K; ++k) {
                               const std::size_t idx = static_cast<std::size_t>(i) * K + k;
                               const double target = k == labels[i] ? 1.0 : 0.0;
                               dz[idx] += static_cast<T>(g * (probs[idx] - target));
                             }
                           }
                         });
}

template <typename T>
Var<T> kl_div(const Var<T> &p, const Var<T> &q) {
  require(p.shape() == q.shape() && p.shape().size() == 2,
          "kl_div expects equal [N, K] shapes, got " + shape_str(p.shape()) + " and " + shape_str(q.shape()));
  const int N = p.shape()[0];
  const std::size_t total = p.value().numel();
  double acc = 0;
  for (std::size_t i = 0; i < total; ++i) {
    const double pi = p.value()[i], qi = q.value()[i];
    if (pi < 0 || qi < 0) throw DomainError("kl_div: negative probability");
    if (pi == 0) continue;
    if (qi == 0) throw DomainError("kl_div: q has a zero where p > 0");
    acc += pi * std::log(pi / qi);
  }
  Tensor<T> out(Shape{}, static_cast<T>(acc / N));
  return Var<T>::from_op(std::move(out), {p, q}, [N, total](Node<T> &node) {
    Node<T> &pn = *node.parents[0];
    Node<T> &qn = *node.parents[1];
    const double g = static_cast<double>(node.grad[0]) / N;
    if (pn.requires_grad) {
      T *dp = pn.grad_buffer().data();
      for (std::size_t i = 0; i < total; ++i) {
        const double pi = pn.value[i];
        if (pi > 0) dp[i] += static_cast<T>(g * (std::log(pi / qn.value[i]) + 1.0));
      }
    }
    if (qn.requires_grad) {
      T *dq = qn.grad_buffer().data();
      for (std::size_t i = 0; i < total; ++i) {
        const double pi = pn.value[i];
        if (pi > 0) dq[i] += static_cast<T>(-g * pi / qn.value[i]);
      }
    }
  });
}

#define RDL_INSTANTIATE(T)                                                                                 \
  template Var<T> conv2d<T>(const Var<T> &, const Var<T> &, const ConvParams &);                           \
  template Var<T> batch_norm<T>(const Var<T> &, const Var<T> &, const Var<T> &, RunningStats<T> &, Mode,   \
                                double, double);                                                           \
  template Var<T> relu<T>(const Var<T> &);                                                                 \
  template Var<T> global_avg_pool<T>(const Var<T> &);                                                      \
  template Var<T> linear<T>(const Var<T> &, const Var<T> &, const Var<T> &);                               \
  template Var<T> dropout<T>(const Var<T> &, double, Rng &, Mode);                                         \
  template Var<T> add<T>(const Var<T> &, const Var<T> &);                                                  \
  template Var<T> mul<T>(const Var<T> &, const Var<T> &);                                                  \
  template Var<T> scale<T>(const Var<T> &, double);                                                        \
  template Var<T> sum<T>(const Var<T> &);                                                                  \
  template Var<T> softmax_t<T>(const Var<T> &, double);                                                    \
  template Var<T> cross_entropy<T>(const Var<T> &, const std::vector<int> &);                              \
  template Var<T> kl_div<T>(const Var<T> &, const Var<T> &);

RDL_INSTANTIATE(float)
RDL_INSTANTIATE(double)

}  // namespace rdl::tg
