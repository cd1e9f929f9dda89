#pragma once

#include <span>
#include <vector>

#include "skdnet/nn/tape.hpp"

namespace skd::nn {

/// Running statistics of one batch-norm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(int channels = 0)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

/// Probability floor applied before every log.
inline constexpr double kProbFloor = 1e-12;

namespace ops {

/// x[.., k] * w[k, m] (+ b[m])
template <typename T> Var matmul(Tape<T>& t, Var x, Var w);
template <typename T> Var linear(Tape<T>& t, Var x, Var w, Var b);
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var relu(Tape<T>& t, Var x);
/// Exact (erf) GELU.
template <typename T> Var gelu(Tape<T>& t, Var x);

/// 3x3 convolution, stride 1, zero padding 1, on x[B, H, W, C] with
/// w[9*C, Co] (row index (di*3 + dj)*C + c) and bias b[Co].
template <typename T> Var conv3x3(Tape<T>& t, Var x, Var w, Var b);

/// Batch norm over every axis but the last. Training mode normalizes with
/// the biased batch variance and updates the running statistics (unbiased
/// variance); eval mode uses the running statistics.
template <typename T>
Var batch_norm(Tape<T>& t, Var x, Var gamma, Var beta, BatchNormState<T>& state, bool training);

/// Per-row layer norm over the last axis (eps 1e-5).
template <typename T> Var layer_norm(Tape<T>& t, Var x, Var gamma, Var beta);

/// x[B, S, S, C] -> [B, N, p*p*C], N = (S/p)^2; patches in row-major grid
/// order, each flattened as (pi, pj, c).
template <typename T> Var patchify(Tape<T>& t, Var x, int p);
/// x[B, N, d], token[d] -> [B, N+1, d] with the token first.
template <typename T> Var prepend_token(Tape<T>& t, Var x, Var token);
/// x[B, T, d] + pos[T, d]
template <typename T> Var add_positional(Tape<T>& t, Var x, Var pos);
/// Single-head scaled dot-product attention on q, k, v [B, T, d]:
/// softmax(q k^T / sqrt(d)) v, softmax over keys.
template <typename T> Var attention(Tape<T>& t, Var q, Var k, Var v);
/// Tokens [begin, end) of x[B, T, d] -> [B, end-begin, d]; a single
/// token (end = begin + 1) yields [B, d].
template <typename T> Var slice_tokens(Tape<T>& t, Var x, int begin, int end);

/// Softmax over the last axis (max-shifted, double accumulation).
template <typename T> Var softmax(Tape<T>& t, Var x);

/// Batch mean of -(1/M) log(clamp(p[b, y_b])) on probabilities p[B, M].
template <typename T> Var ce_loss(Tape<T>& t, Var probs, std::span<const int> labels);
/// Batch mean of sum_i q_i log(q_i / clamp(p_i)) with fixed targets q[B, M];
/// 0 log 0 := 0.
template <typename T> Var kl_loss(Tape<T>& t, Var probs, const Tensor<T>& targets);
/// wa * a + wb * b for scalars a, b.
template <typename T> Var weighted_sum(Tape<T>& t, Var a, T wa, Var b, T wb);
/// sum(x * w) with fixed weights; used to reduce to a scalar in gradient checks.
template <typename T> Var dot_constant(Tape<T>& t, Var x, const Tensor<T>& w);

}  // namespace ops
}  // namespace skd::nn
