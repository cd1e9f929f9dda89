#include "skdnet/sdsr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/parallel.hpp"

namespace skd::sdsr {

PurityReport assess_purity(const nn::ForwardOutput& fwd, int window) {
  if (fwd.num_patches <= 0) throw ValidationError("purity assessment needs at least one patch");
  if (static_cast<int>(fwd.patch_logits.size()) != fwd.num_patches * fwd.num_classes)
    throw ValidationError("patch logits do not match N x M");
  PurityReport r;
  const int cls = fwd.cls_argmax();
  int agree = 0;
  r.agreeing.resize(static_cast<std::size_t>(fwd.num_patches));
  for (int n = 0; n < fwd.num_patches; ++n) {
    const bool same = fwd.patch_argmax(n) == cls;
    r.agreeing[static_cast<std::size_t>(n)] = same;
    agree += same ? 1 : 0;
  }
  r.purity = static_cast<double>(agree) / fwd.num_patches;
  const int pixels = window * window;
  r.top_k = std::clamp(static_cast<int>(std::lround(r.purity * pixels)), 1, pixels);
  return r;
}

std::vector<double> pixel_distances(const Sample& sample, std::span<const HermitianCov3> centers) {
  if (static_cast<int>(centers.size()) != sample.bands)
    throw ValidationError(fmt::format("{} centers given for a {}-band sample", centers.size(), sample.bands));
  std::vector<double> dist(static_cast<std::size_t>(sample.pixel_count()), 0.0);
  for (int b = 0; b < sample.bands; ++b) {
    const wishart::CenterFactor f(centers[static_cast<std::size_t>(b)]);
    for (int i = 0; i < sample.pixel_count(); ++i) dist[static_cast<std::size_t>(i)] += f.trace_term(sample.pixel(i, b)) + f.log_det();
  }
  return dist;
}

std::vector<int> select_pixels(const Sample& sample, std::span<const HermitianCov3> centers, int top_k) {
  const int n = sample.pixel_count();
  if (top_k < 1 || top_k > n) throw ValidationError(fmt::format("top_k {} outside [1, {}]", top_k, n));
  const std::vector<double> dist = pixel_distances(sample, centers);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const auto closer = [&](int a, int b) {
    const double da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    return da < db || (da == db && a < b);
  };
  std::nth_element(order.begin(), order.begin() + (top_k - 1), order.end(), closer);
  order.resize(static_cast<std::size_t>(top_k));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<int> select_pixels(const Sample& sample, const HermitianCov3& center, int top_k) {
  return select_pixels(sample, std::span<const HermitianCov3>(&center, 1), top_k);
}

RectifiedSample rectify(const Sample& sample, const PurityReport& report, std::span<const HermitianCov3> centers,
                        int looks, CounterRng& rng) {
  const int n = sample.pixel_count();
  RectifiedSample out{sample, std::vector<bool>(static_cast<std::size_t>(n), false), 0};
  if (report.top_k >= n) {
    out.retained.assign(static_cast<std::size_t>(n), true);
    return out;
  }
  for (int i : select_pixels(sample, centers, report.top_k)) out.retained[static_cast<std::size_t>(i)] = true;
  std::vector<wishart::CenterFactor> factors;
  for (const auto& c : centers) factors.emplace_back(c);
  for (int i = 0; i < n; ++i) {
    if (out.retained[static_cast<std::size_t>(i)]) continue;
    ++out.generated;
    for (int b = 0; b < sample.bands; ++b) {
      const Feature9 v = vectorize_covariance(wishart::sample_wishart(factors[static_cast<std::size_t>(b)], looks, rng));
      auto px = out.sample.pixel(i, b);
      for (int k = 0; k < kFeatureDim; ++k) px[k] = static_cast<float>(v[k]);
    }
  }
  return out;
}

RectifiedSample rectify(const Sample& sample, const PurityReport& report, int looks, CounterRng& rng) {
  std::vector<HermitianCov3> centers;
  for (int b = 0; b < sample.bands; ++b) centers.push_back(wishart::sample_center(sample, b));
  return rectify(sample, report, centers, looks, rng);
}

template <typename T>
nn::Tensor<T> batch_input(std::span<const Sample> samples, const ChannelStats& stats) {
  if (samples.empty()) throw ValidationError("empty batch");
  const int s = samples.front().size, c = samples.front().channels();
  nn::Tensor<T> out({static_cast<int>(samples.size()), s, s, c});
  const std::size_t block = static_cast<std::size_t>(s) * s * c;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].size != s || samples[i].channels() != c) throw ValidationError("batch samples differ in shape");
    const std::vector<float> norm = stats.normalize(samples[i]);
    std::copy(norm.begin(), norm.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * block));
  }
  return out;
}

CounterRng inference_rng(Origin origin, std::uint64_t seed) {
  return CounterRng(split_seed(seed, 0x5D5A), (static_cast<std::uint64_t>(origin.row) << 32) | static_cast<std::uint32_t>(origin.col));
}

template <typename T>
PassOne first_pass(const nn::Model<T>& model, const ChannelStats& stats, std::span<const Sample> samples,
                   std::span<CounterRng> rngs, int looks, int threads) {
  if (rngs.size() != samples.size()) throw ValidationError("one generator per sample required");
  PassOne out;
  out.outputs.resize(samples.size());
  out.reports.resize(samples.size());
  out.rectified.resize(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const nn::Tensor<T> x = batch_input<T>(samples.subspan(i, 1), stats);
    out.outputs[i] = std::move(model.infer(x).front());
    out.reports[i] = assess_purity(out.outputs[i], samples[i].size);
    out.rectified[i] = rectify(samples[i], out.reports[i], looks, rngs[i]).sample;
  });
  return out;
}

template <typename T>
nn::ForwardOutput sdsr_forward(nn::Model<T>& model, const ChannelStats& stats, const Sample& sample, int looks,
                               CounterRng& rng, bool training) {
  PassOne one = first_pass(model, stats, std::span<const Sample>(&sample, 1), std::span<CounterRng>(&rng, 1), looks, 1);
  const nn::Tensor<T> x = batch_input<T>(one.rectified, stats);
  if (!training) return model.infer(x).front();
  nn::Tape<T> tape;
  const auto g = model.build_training(tape, x);
  nn::ForwardOutput out;
  out.num_classes = model.config().num_classes;
  out.num_patches = model.config().num_patches();
  const auto& cls = tape.value(g.cls_logits);
  const auto& patches = tape.value(g.patch_logits);
  out.cls_logits.assign(cls.data.begin(), cls.data.end());
  out.patch_logits.assign(patches.data.begin(), patches.data.end());
  return out;
}

template <typename T>
std::vector<nn::ForwardOutput> predict(const nn::Model<T>& model, const ChannelStats& stats, std::span<const Sample> samples,
                                       bool use_sdsr, int looks, int threads, std::uint64_t seed) {
  std::vector<nn::ForwardOutput> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const nn::Tensor<T> x = batch_input<T>(samples.subspan(i, 1), stats);
    nn::ForwardOutput first = std::move(model.infer(x).front());
    if (!use_sdsr) {
      out[i] = std::move(first);
      return;
    }
    const PurityReport report = assess_purity(first, samples[i].size);
    if (report.top_k >= samples[i].pixel_count()) {
      out[i] = std::move(first);
      return;
    }
    CounterRng rng = inference_rng(samples[i].origin, seed);
    const RectifiedSample r = rectify(samples[i], report, looks, rng);
    out[i] = std::move(model.infer(batch_input<T>(std::span<const Sample>(&r.sample, 1), stats)).front());
  });
  return out;
}

#define SKD_INSTANTIATE_SDSR(T)                                                                                        \
  template nn::Tensor<T> batch_input<T>(std::span<const Sample>, const ChannelStats&);                                 \
  template PassOne first_pass<T>(const nn::Model<T>&, const ChannelStats&, std::span<const Sample>,                    \
                                 std::span<CounterRng>, int, int);                                                     \
  template nn::ForwardOutput sdsr_forward<T>(nn::Model<T>&, const ChannelStats&, const Sample&, int, CounterRng&, bool); \
  template std::vector<nn::ForwardOutput> predict<T>(const nn::Model<T>&, const ChannelStats&, std::span<const Sample>, \
                                                     bool, int, int, std::uint64_t);

SKD_INSTANTIATE_SDSR(float)
SKD_INSTANTIATE_SDSR(double)

}  // namespace skd::sdsr
