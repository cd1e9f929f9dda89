#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skdnet/core.hpp"
#include "skdnet/nn/model.hpp"
#include "skdnet/rng.hpp"
#include "skdnet/wishart.hpp"

namespace skd::sdsr {

/// Sample purity from one forward pass.
struct PurityReport {
  double purity = 1.0;         // agreeing patches / N
  int top_k = 0;               // clamp(round(purity * s^2), 1, s^2)
  std::vector<bool> agreeing;  // per patch: argmax == cls argmax
};

PurityReport assess_purity(const nn::ForwardOutput& fwd, int window);

/// Indices (ascending) of the top_k pixels closest to the band centers.
/// With several bands the distance is the sum of per-band Wishart
/// distances, i.e. the distance under a block-diagonal joint covariance.
/// Ties are broken by the lower pixel index.
std::vector<int> select_pixels(const Sample& sample, std::span<const HermitianCov3> centers, int top_k);
std::vector<int> select_pixels(const Sample& sample, const HermitianCov3& center, int top_k);

/// Per-pixel summed Wishart distances used by select_pixels.
std::vector<double> pixel_distances(const Sample& sample, std::span<const HermitianCov3> centers);

struct RectifiedSample {
  Sample sample;               // same shape as the input
  std::vector<bool> retained;  // s*s
  int generated = 0;           // s*s - top_k
};

/// Keeps the top_k pixels nearest to each band's sample center and
/// overwrites every other position with a multilook Wishart draw around
/// that center. Retained pixels are left bit-identical.
RectifiedSample rectify(const Sample& sample, const PurityReport& report, int looks, CounterRng& rng);
/// Same with caller-supplied centers (one per band).
RectifiedSample rectify(const Sample& sample, const PurityReport& report, std::span<const HermitianCov3> centers,
                        int looks, CounterRng& rng);

/// Stacks normalized samples into a [B, s, s, C] network input.
template <typename T>
nn::Tensor<T> batch_input(std::span<const Sample> samples, const ChannelStats& stats);

/// Deterministic generator for inference-time rectification of the window
/// at `origin`.
CounterRng inference_rng(Origin origin, std::uint64_t seed = 0);

struct PassOne {
  std::vector<nn::ForwardOutput> outputs;
  std::vector<PurityReport> reports;
  std::vector<Sample> rectified;
};

/// First SDSR pass over a batch: eval-mode forward per sample (no
/// gradient, no statistics update), purity assessment, then rectification
/// of the raw samples with rngs[i]. Samples are processed independently on
/// up to `threads` workers; results do not depend on the thread count.
template <typename T>
PassOne first_pass(const nn::Model<T>& model, const ChannelStats& stats, std::span<const Sample> samples,
                   std::span<CounterRng> rngs, int looks, int threads);

/// Single-sample two-pass protocol. Pass 1 runs in eval mode; pass 2 runs
/// on the rectified, re-normalized sample, in training mode (updating the
/// model's batch-norm statistics) when `training` is set.
template <typename T>
nn::ForwardOutput sdsr_forward(nn::Model<T>& model, const ChannelStats& stats, const Sample& sample, int looks,
                               CounterRng& rng, bool training);

/// Eval-mode prediction with SDSR (inference_rng per origin) or without.
template <typename T>
std::vector<nn::ForwardOutput> predict(const nn::Model<T>& model, const ChannelStats& stats, std::span<const Sample> samples,
                                       bool use_sdsr, int looks, int threads, std::uint64_t seed = 0);

}  // namespace skd::sdsr
