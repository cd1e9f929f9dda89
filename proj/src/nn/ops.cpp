#include "skdnet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include <fmt/format.h>

#include "skdnet/errors.hpp"

namespace skd::nn::ops {

namespace {

template <typename T>
using Mat = RowMatrix<T>;

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ValidationError(fmt::format("{}: {}", op, what));
}

template <typename T>
Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> row_vec(const Tensor<T>& v) {
  return {v.data.data(), static_cast<Eigen::Index>(v.size())};
}

template <typename T>
std::vector<int> with_last(const Tensor<T>& x, int last) {
  std::vector<int> s = x.shape;
  s.back() = last;
  return s;
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& t, Var x, Var w) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  require(wv.ndim() == 2 && xv.cols() == wv.dim(0), "matmul",
          fmt::format("shapes {} x {} do not conform", xv.shape_string(), wv.shape_string()));
  Tensor<T> out(with_last(xv, wv.dim(1)));
  out.mat().noalias() = xv.mat() * wv.mat();
  return t.record("matmul", std::move(out), {x, w}, [x, w](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(x)) tp.grad(x).mat().noalias() += g.mat() * tp.value(w).mat().transpose();
    if (tp.needs_grad(w)) tp.grad(w).mat().noalias() += tp.value(x).mat().transpose() * g.mat();
  });
}

template <typename T>
Var linear(Tape<T>& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  const auto& bv = t.value(b);
  require(wv.ndim() == 2 && xv.cols() == wv.dim(0), "linear",
          fmt::format("shapes {} x {} do not conform", xv.shape_string(), wv.shape_string()));
  require(static_cast<int>(bv.size()) == wv.dim(1), "linear", "bias length must match output width");
  Tensor<T> out(with_last(xv, wv.dim(1)));
  auto om = out.mat();
  om.noalias() = xv.mat() * wv.mat();
  om.rowwise() += row_vec(bv);
  return t.record("linear", std::move(out), {x, w, b}, [x, w, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(x)) tp.grad(x).mat().noalias() += g.mat() * tp.value(w).mat().transpose();
    if (tp.needs_grad(w)) tp.grad(w).mat().noalias() += tp.value(x).mat().transpose() * g.mat();
    if (tp.needs_grad(b)) tp.grad(b).mat(1, g.cols()) += g.mat().colwise().sum();
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  require(av.shape == bv.shape, "add", fmt::format("shape mismatch {} vs {}", av.shape_string(), bv.shape_string()));
  Tensor<T> out = av;
  out.mat() += bv.mat();
  return t.record("add", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(a)) tp.grad(a).mat() += g.mat();
    if (tp.needs_grad(b)) tp.grad(b).mat() += g.mat();
  });
}

template <typename T>
Var relu(Tape<T>& t, Var x) {
  Tensor<T> out = t.value(x);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return t.record("relu", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xv = tp.value(x);
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
  }
  return t.record("gelu", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const auto& xv = tp.value(x);
    auto& gx = tp.grad(x);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double d = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
      gx[i] += static_cast<T>(g[i] * d);
    }
  });
}

template <typename T>
Var conv3x3(Tape<T>& t, Var x, Var w, Var b) {
  const auto& xv = t.value(x);
  const auto& wv = t.value(w);
  require(xv.ndim() == 4, "conv3x3", "input must be [B, H, W, C]");
  const int B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  require(wv.ndim() == 2 && wv.dim(0) == 9 * C, "conv3x3",
          fmt::format("weight {} does not match {} input channels", wv.shape_string(), C));
  const int Co = wv.dim(1);
  require(static_cast<int>(t.value(b).size()) == Co, "conv3x3", "bias length must match output channels");

  auto col = std::make_shared<Tensor<T>>(std::vector<int>{B * H * W, 9 * C}, T(0));
  for (int bi = 0; bi < B; ++bi)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j) {
        T* row = col->data.data() + (static_cast<std::size_t>((bi * H + i) * W + j)) * 9 * C;
        for (int di = 0; di < 3; ++di) {
          const int si = i + di - 1;
          if (si < 0 || si >= H) continue;
          for (int dj = 0; dj < 3; ++dj) {
            const int sj = j + dj - 1;
            if (sj < 0 || sj >= W) continue;
            const T* src = xv.data.data() + (static_cast<std::size_t>((bi * H + si) * W + sj)) * C;
            std::copy(src, src + C, row + (di * 3 + dj) * C);
          }
        }
      }
  Tensor<T> out({B, H, W, Co});
  auto om = out.mat();
  om.noalias() = col->mat() * wv.mat();
  om.rowwise() += row_vec(t.value(b));
  return t.record("conv3x3", std::move(out), {x, w, b}, [x, w, b, col, B, H, W, C](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(w)) tp.grad(w).mat().noalias() += col->mat().transpose() * g.mat();
    if (tp.needs_grad(b)) tp.grad(b).mat(1, g.cols()) += g.mat().colwise().sum();
    if (!tp.needs_grad(x)) return;
    Tensor<T> dcol(col->shape);
    dcol.mat().noalias() = g.mat() * tp.value(w).mat().transpose();
    auto& gx = tp.grad(x);
    for (int bi = 0; bi < B; ++bi)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const T* row = dcol.data.data() + (static_cast<std::size_t>((bi * H + i) * W + j)) * 9 * C;
          for (int di = 0; di < 3; ++di) {
            const int si = i + di - 1;
            if (si < 0 || si >= H) continue;
            for (int dj = 0; dj < 3; ++dj) {
              const int sj = j + dj - 1;
              if (sj < 0 || sj >= W) continue;
              T* dst = gx.data.data() + (static_cast<std::size_t>((bi * H + si) * W + sj)) * C;
              const T* src = row + (di * 3 + dj) * C;
              for (int c = 0; c < C; ++c) dst[c] += src[c];
            }
          }
        }
  });
}

template <typename T>
Var batch_norm(Tape<T>& t, Var x, Var gamma, Var beta, BatchNormState<T>& state, bool training) {
  const auto& xv = t.value(x);
  const int C = xv.cols();
  const int n = xv.rows();
  require(static_cast<int>(t.value(gamma).size()) == C && static_cast<int>(t.value(beta).size()) == C, "batch_norm",
          "scale/shift length must match channels");
  require(static_cast<int>(state.running_mean.size()) == C, "batch_norm", "running statistics have wrong length");
  const auto xm = xv.mat();
  std::vector<double> mean(C, 0.0), inv_std(C, 0.0);
  if (training) {
    require(n > 1, "batch_norm", "training mode needs more than one value per channel");
    std::vector<double> var(C, 0.0);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < C; ++c) mean[c] += xm(r, c);
    for (int c = 0; c < C; ++c) mean[c] /= n;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < C; ++c) {
        const double d = xm(r, c) - mean[c];
        var[c] += d * d;
      }
    for (int c = 0; c < C; ++c) {
      var[c] /= n;
      inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);
      const double m = state.momentum;
      state.running_mean[c] = static_cast<T>((1.0 - m) * state.running_mean[c] + m * mean[c]);
      state.running_var[c] = static_cast<T>((1.0 - m) * state.running_var[c] + m * var[c] * n / (n - 1.0));
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(static_cast<double>(state.running_var[c]) + state.eps);
    }
  }
  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  Tensor<T> out(xv.shape);
  const auto& gv = t.value(gamma);
  const auto& bv = t.value(beta);
  auto hm = xhat->mat();
  auto om = out.mat();
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < C; ++c) {
      const double h = (xm(r, c) - mean[c]) * inv_std[c];
      hm(r, c) = static_cast<T>(h);
      om(r, c) = static_cast<T>(gv[c] * h + bv[c]);
    }
  return t.record("batch_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat, inv_std, training](Tape<T>& tp, const Tensor<T>& g) {
                    const int C = g.cols(), n = g.rows();
                    const auto gm = g.mat();
                    const auto hm = xhat->mat();
                    std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
                    for (int r = 0; r < n; ++r)
                      for (int c = 0; c < C; ++c) {
                        sum_g[c] += gm(r, c);
                        sum_gh[c] += static_cast<double>(gm(r, c)) * hm(r, c);
                      }
                    if (tp.needs_grad(gamma)) {
                      auto& gg = tp.grad(gamma);
                      for (int c = 0; c < C; ++c) gg[c] += static_cast<T>(sum_gh[c]);
                    }
                    if (tp.needs_grad(beta)) {
                      auto& gb = tp.grad(beta);
                      for (int c = 0; c < C; ++c) gb[c] += static_cast<T>(sum_g[c]);
                    }
                    if (!tp.needs_grad(x)) return;
                    const auto& gam = tp.value(gamma);
                    auto gx = tp.grad(x).mat();
                    for (int r = 0; r < n; ++r)
                      for (int c = 0; c < C; ++c) {
                        const double s = gam[c] * inv_std[c];
                        if (training)
                          gx(r, c) += static_cast<T>(s * (gm(r, c) - sum_g[c] / n - hm(r, c) * sum_gh[c] / n));
                        else
                          gx(r, c) += static_cast<T>(s * gm(r, c));
                      }
                  });
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta) {
  constexpr double eps = 1e-5;
  const auto& xv = t.value(x);
  const int d = xv.cols(), n = xv.rows();
  require(static_cast<int>(t.value(gamma).size()) == d && static_cast<int>(t.value(beta).size()) == d, "layer_norm",
          "scale/shift length must match width");
  auto xhat = std::make_shared<Tensor<T>>(xv.shape);
  std::vector<double> inv_std(n);
  Tensor<T> out(xv.shape);
  const auto& gv = t.value(gamma);
  const auto& bv = t.value(beta);
  const auto xm = xv.mat();
  auto hm = xhat->mat();
  auto om = out.mat();
  for (int r = 0; r < n; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < d; ++c) mean += xm(r, c);
    mean /= d;
    for (int c = 0; c < d; ++c) var += (xm(r, c) - mean) * (xm(r, c) - mean);
    var /= d;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) {
      const double h = (xm(r, c) - mean) * inv_std[r];
      hm(r, c) = static_cast<T>(h);
      om(r, c) = static_cast<T>(gv[c] * h + bv[c]);
    }
  }
  return t.record("layer_norm", std::move(out), {x, gamma, beta},
                  [x, gamma, beta, xhat, inv_std](Tape<T>& tp, const Tensor<T>& g) {
                    const int d = g.cols(), n = g.rows();
                    const auto gm = g.mat();
                    const auto hm = xhat->mat();
                    if (tp.needs_grad(gamma) || tp.needs_grad(beta)) {
                      auto& gg = tp.grad(gamma);
                      auto& gb = tp.grad(beta);
                      for (int r = 0; r < n; ++r)
                        for (int c = 0; c < d; ++c) {
                          gg[c] += gm(r, c) * hm(r, c);
                          gb[c] += gm(r, c);
                        }
                    }
                    if (!tp.needs_grad(x)) return;
                    const auto& gam = tp.value(gamma);
                    auto gx = tp.grad(x).mat();
                    for (int r = 0; r < n; ++r) {
                      double sum_g = 0.0, sum_gh = 0.0;
                      for (int c = 0; c < d; ++c) {
                        const double gy = static_cast<double>(gm(r, c)) * gam[c];
                        sum_g += gy;
                        sum_gh += gy * hm(r, c);
                      }
                      for (int c = 0; c < d; ++c) {
                        const double gy = static_cast<double>(gm(r, c)) * gam[c];
                        gx(r, c) += static_cast<T>(inv_std[r] * (gy - sum_g / d - hm(r, c) * sum_gh / d));
                      }
                    }
                  });
}

template <typename T>
Var patchify(Tape<T>& t, Var x, int p) {
  const auto& xv = t.value(x);
  require(xv.ndim() == 4 && xv.dim(1) == xv.dim(2), "patchify", "input must be [B, S, S, C]");
  const int B = xv.dim(0), S = xv.dim(1), C = xv.dim(3);
  if (p <= 0 || S % p != 0) throw ConfigError(fmt::format("window size {} is not divisible by patch size {}", S, p));
  const int G = S / p, N = G * G, F = p * p * C;
  // Flat source offset for every output element.
  auto index = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(B) * N * F);
  std::size_t k = 0;
  for (int b = 0; b < B; ++b)
    for (int gi = 0; gi < G; ++gi)
      for (int gj = 0; gj < G; ++gj)
        for (int pi = 0; pi < p; ++pi)
          for (int pj = 0; pj < p; ++pj)
            for (int c = 0; c < C; ++c)
              (*index)[k++] = ((static_cast<std::size_t>(b) * S + gi * p + pi) * S + gj * p + pj) * C + c;
  Tensor<T> out({B, N, F});
  for (std::size_t i = 0; i < k; ++i) out[i] = xv[(*index)[i]];
  return t.record("patchify", std::move(out), {x}, [x, index](Tape<T>& tp, const Tensor<T>& g) {
    auto& gx = tp.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*index)[i]] += g[i];
  });
}

template <typename T>
Var prepend_token(Tape<T>& t, Var x, Var token) {
  const auto& xv = t.value(x);
  const auto& tv = t.value(token);
  require(xv.ndim() == 3 && static_cast<int>(tv.size()) == xv.dim(2), "prepend_token", "expects x[B, N, d] and token[d]");
  const int B = xv.dim(0), N = xv.dim(1), d = xv.dim(2);
  Tensor<T> out({B, N + 1, d});
  for (int b = 0; b < B; ++b) {
    T* dst = out.data.data() + static_cast<std::size_t>(b) * (N + 1) * d;
    std::copy(tv.data.begin(), tv.data.end(), dst);
    std::copy_n(xv.data.data() + static_cast<std::size_t>(b) * N * d, static_cast<std::size_t>(N) * d, dst + d);
  }
  return t.record("prepend_token", std::move(out), {x, token}, [x, token, B, N, d](Tape<T>& tp, const Tensor<T>& g) {
    for (int b = 0; b < B; ++b) {
      const T* src = g.data.data() + static_cast<std::size_t>(b) * (N + 1) * d;
      if (tp.needs_grad(token)) {
        auto& gt = tp.grad(token);
        for (int c = 0; c < d; ++c) gt[c] += src[c];
      }
      if (tp.needs_grad(x)) {
        T* dst = tp.grad(x).data.data() + static_cast<std::size_t>(b) * N * d;
        for (int i = 0; i < N * d; ++i) dst[i] += src[d + i];
      }
    }
  });
}

template <typename T>
Var add_positional(Tape<T>& t, Var x, Var pos) {
  const auto& xv = t.value(x);
  const auto& pv = t.value(pos);
  require(xv.ndim() == 3 && pv.ndim() == 2 && pv.dim(0) == xv.dim(1) && pv.dim(1) == xv.dim(2), "add_positional",
          fmt::format("cannot add {} to {}", pv.shape_string(), xv.shape_string()));
  const int B = xv.dim(0);
  const std::size_t block = pv.size();
  Tensor<T> out = xv;
  for (int b = 0; b < B; ++b)
    for (std::size_t i = 0; i < block; ++i) out[b * block + i] += pv[i];
  return t.record("add_positional", std::move(out), {x, pos}, [x, pos, B, block](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(x)) tp.grad(x).mat() += g.mat();
    if (tp.needs_grad(pos)) {
      auto& gp = tp.grad(pos);
      for (int b = 0; b < B; ++b)
        for (std::size_t i = 0; i < block; ++i) gp[i] += g[b * block + i];
    }
  });
}

template <typename T>
Var attention(Tape<T>& t, Var q, Var k, Var v) {
  const auto& qv = t.value(q);
  const auto& kv = t.value(k);
  const auto& vv = t.value(v);
  require(qv.ndim() == 3 && qv.shape == kv.shape && qv.shape == vv.shape, "attention", "q, k, v must share shape [B, T, d]");
  const int B = qv.dim(0), T_ = qv.dim(1), d = qv.dim(2);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto weights = std::make_shared<Tensor<T>>(std::vector<int>{B, T_, T_});
  Tensor<T> out(qv.shape);
  const std::size_t blk = static_cast<std::size_t>(T_) * d;
  const std::size_t ablk = static_cast<std::size_t>(T_) * T_;
  for (int b = 0; b < B; ++b) {
    Eigen::Map<const Mat<T>> Q(qv.data.data() + b * blk, T_, d), K(kv.data.data() + b * blk, T_, d),
        V(vv.data.data() + b * blk, T_, d);
    Eigen::Map<Mat<T>> A(weights->data.data() + b * ablk, T_, T_);
    A.noalias() = Q * K.transpose();
    for (int r = 0; r < T_; ++r) {
      const double mx = static_cast<double>(A.row(r).maxCoeff()) * scale;
      double sum = 0.0;
      for (int c = 0; c < T_; ++c) {
        const double e = std::exp(static_cast<double>(A(r, c)) * scale - mx);
        A(r, c) = static_cast<T>(e);
        sum += e;
      }
      for (int c = 0; c < T_; ++c) A(r, c) = static_cast<T>(A(r, c) / sum);
    }
    Eigen::Map<Mat<T>>(out.data.data() + b * blk, T_, d).noalias() = A * V;
  }
  return t.record("attention", std::move(out), {q, k, v},
                  [q, k, v, weights, B, T_, d, scale, blk, ablk](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& qv = tp.value(q);
                    const auto& kv = tp.value(k);
                    const auto& vv = tp.value(v);
                    Mat<T> dA(T_, T_), dS(T_, T_);
                    for (int b = 0; b < B; ++b) {
                      Eigen::Map<const Mat<T>> Q(qv.data.data() + b * blk, T_, d), K(kv.data.data() + b * blk, T_, d),
                          V(vv.data.data() + b * blk, T_, d), G(g.data.data() + b * blk, T_, d),
                          A(weights->data.data() + b * ablk, T_, T_);
                      if (tp.needs_grad(v))
                        Eigen::Map<Mat<T>>(tp.grad(v).data.data() + b * blk, T_, d).noalias() += A.transpose() * G;
                      dA.noalias() = G * V.transpose();
                      for (int r = 0; r < T_; ++r) {
                        double dot = 0.0;
                        for (int c = 0; c < T_; ++c) dot += static_cast<double>(dA(r, c)) * A(r, c);
                        for (int c = 0; c < T_; ++c) dS(r, c) = static_cast<T>(A(r, c) * (dA(r, c) - dot) * scale);
                      }
                      if (tp.needs_grad(q))
                        Eigen::Map<Mat<T>>(tp.grad(q).data.data() + b * blk, T_, d).noalias() += dS * K;
                      if (tp.needs_grad(k))
                        Eigen::Map<Mat<T>>(tp.grad(k).data.data() + b * blk, T_, d).noalias() += dS.transpose() * Q;
                    }
                  });
}

template <typename T>
Var slice_tokens(Tape<T>& t, Var x, int begin, int end) {
  const auto& xv = t.value(x);
  require(xv.ndim() == 3 && begin >= 0 && begin < end && end <= xv.dim(1), "slice_tokens", "token range out of bounds");
  const int B = xv.dim(0), T_ = xv.dim(1), d = xv.dim(2), n = end - begin;
  Tensor<T> out(n == 1 ? std::vector<int>{B, d} : std::vector<int>{B, n, d});
  for (int b = 0; b < B; ++b)
    std::copy_n(xv.data.data() + (static_cast<std::size_t>(b) * T_ + begin) * d, static_cast<std::size_t>(n) * d,
                out.data.data() + static_cast<std::size_t>(b) * n * d);
  return t.record("slice_tokens", std::move(out), {x}, [x, B, T_, d, n, begin](Tape<T>& tp, const Tensor<T>& g) {
    auto& gx = tp.grad(x);
    for (int b = 0; b < B; ++b) {
      T* dst = gx.data.data() + (static_cast<std::size_t>(b) * T_ + begin) * d;
      const T* src = g.data.data() + static_cast<std::size_t>(b) * n * d;
      for (int i = 0; i < n * d; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var softmax(Tape<T>& t, Var x) {
  const auto& xv = t.value(x);
  Tensor<T> out(xv.shape);
  const int n = xv.rows(), m = xv.cols();
  for (int r = 0; r < n; ++r) {
    const T* src = xv.data.data() + static_cast<std::size_t>(r) * m;
    T* dst = out.data.data() + static_cast<std::size_t>(r) * m;
    const double mx = *std::max_element(src, src + m);
    double sum = 0.0;
    for (int c = 0; c < m; ++c) sum += std::exp(static_cast<double>(src[c]) - mx);
    for (int c = 0; c < m; ++c) dst[c] = static_cast<T>(std::exp(static_cast<double>(src[c]) - mx) / sum);
  }
  auto y = std::make_shared<Tensor<T>>(out);
  return t.record("softmax", std::move(out), {x}, [x, y, n, m](Tape<T>& tp, const Tensor<T>& g) {
    auto& gx = tp.grad(x);
    for (int r = 0; r < n; ++r) {
      const std::size_t o = static_cast<std::size_t>(r) * m;
      double dot = 0.0;
      for (int c = 0; c < m; ++c) dot += static_cast<double>(g[o + c]) * (*y)[o + c];
      for (int c = 0; c < m; ++c) gx[o + c] += static_cast<T>((*y)[o + c] * (g[o + c] - dot));
    }
  });
}

template <typename T>
Var ce_loss(Tape<T>& t, Var probs, std::span<const int> labels) {
  const auto& pv = t.value(probs);
  const int B = pv.rows(), M = pv.cols();
  require(static_cast<int>(labels.size()) == B, "ce_loss", "one label per row required");
  std::vector<int> y(labels.begin(), labels.end());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    require(y[b] >= 0 && y[b] < M, "ce_loss", fmt::format("label {} out of range", y[b]));
    loss -= std::log(std::max(static_cast<double>(pv[static_cast<std::size_t>(b) * M + y[b]]), kProbFloor)) / M;
  }
  Tensor<T> out(std::vector<int>{}, static_cast<T>(loss / B));
  return t.record("ce_loss", std::move(out), {probs}, [probs, y, B, M](Tape<T>& tp, const Tensor<T>& g) {
    const auto& pv = tp.value(probs);
    auto& gp = tp.grad(probs);
    for (int b = 0; b < B; ++b) {
      const std::size_t i = static_cast<std::size_t>(b) * M + y[b];
      const double p = pv[i];
      if (p > kProbFloor) gp[i] += static_cast<T>(-g[0] / (static_cast<double>(B) * M * p));
    }
  });
}

template <typename T>
Var kl_loss(Tape<T>& t, Var probs, const Tensor<T>& targets) {
  const auto& pv = t.value(probs);
  require(pv.shape == targets.shape, "kl_loss", "targets must match probabilities in shape");
  const int B = pv.rows();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double q = targets[i];
    if (q <= 0.0) continue;
    loss += q * (std::log(std::max(q, kProbFloor)) - std::log(std::max(static_cast<double>(pv[i]), kProbFloor)));
  }
  Tensor<T> out(std::vector<int>{}, static_cast<T>(loss / B));
  auto q = std::make_shared<Tensor<T>>(targets);
  return t.record("kl_loss", std::move(out), {probs}, [probs, q, B](Tape<T>& tp, const Tensor<T>& g) {
    const auto& pv = tp.value(probs);
    auto& gp = tp.grad(probs);
    for (std::size_t i = 0; i < pv.size(); ++i) {
      const double p = pv[i];
      if ((*q)[i] > 0 && p > kProbFloor) gp[i] += static_cast<T>(-g[0] * (*q)[i] / (static_cast<double>(B) * p));
    }
  });
}

template <typename T>
Var weighted_sum(Tape<T>& t, Var a, T wa, Var b, T wb) {
  require(t.value(a).size() == 1 && t.value(b).size() == 1, "weighted_sum", "operands must be scalars");
  Tensor<T> out(std::vector<int>{}, wa * t.value(a)[0] + wb * t.value(b)[0]);
  return t.record("weighted_sum", std::move(out), {a, b}, [a, wa, b, wb](Tape<T>& tp, const Tensor<T>& g) {
    if (tp.needs_grad(a)) tp.grad(a)[0] += wa * g[0];
    if (tp.needs_grad(b)) tp.grad(b)[0] += wb * g[0];
  });
}

template <typename T>
Var dot_constant(Tape<T>& t, Var x, const Tensor<T>& w) {
  const auto& xv = t.value(x);
  require(xv.size() == w.size(), "dot_constant", "weight size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += static_cast<double>(xv[i]) * w[i];
  auto wp = std::make_shared<Tensor<T>>(w);
  return t.record("dot_constant", Tensor<T>(std::vector<int>{}, static_cast<T>(s)), {x},
                  [x, wp](Tape<T>& tp, const Tensor<T>& g) {
                    auto& gx = tp.grad(x);
                    for (std::size_t i = 0; i < wp->size(); ++i) gx[i] += g[0] * (*wp)[i];
                  });
}

#define SKD_INSTANTIATE_OPS(T)                                                              \
  template Var matmul<T>(Tape<T>&, Var, Var);                                               \
  template Var linear<T>(Tape<T>&, Var, Var, Var);                                          \
  template Var add<T>(Tape<T>&, Var, Var);                                                  \
  template Var relu<T>(Tape<T>&, Var);                                                      \
  template Var gelu<T>(Tape<T>&, Var);                                                      \
  template Var conv3x3<T>(Tape<T>&, Var, Var, Var);                                         \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, BatchNormState<T>&, bool);            \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var);                                      \
  template Var patchify<T>(Tape<T>&, Var, int);                                             \
  template Var prepend_token<T>(Tape<T>&, Var, Var);                                        \
  template Var add_positional<T>(Tape<T>&, Var, Var);                                       \
  template Var attention<T>(Tape<T>&, Var, Var, Var);                                       \
  template Var slice_tokens<T>(Tape<T>&, Var, int, int);                                    \
  template Var softmax<T>(Tape<T>&, Var);                                                   \
  template Var ce_loss<T>(Tape<T>&, Var, std::span<const int>);                             \
  template Var kl_loss<T>(Tape<T>&, Var, const Tensor<T>&);                                 \
  template Var weighted_sum<T>(Tape<T>&, Var, T, Var, T);                                   \
  template Var dot_constant<T>(Tape<T>&, Var, const Tensor<T>&);

SKD_INSTANTIATE_OPS(float)
SKD_INSTANTIATE_OPS(double)

}  // namespace skd::nn::ops
