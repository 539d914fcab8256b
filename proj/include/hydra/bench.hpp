#pragma once

// Wall-clock and instrumented-cost scaling sweeps for the attention variants.
// Timing runs use single precision; counting runs are exact and cheap.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hydra/attention.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hydra::bench {

using attention::Variant;

struct BenchSample {
  std::string op;
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t reps = 0;
  double median_seconds = 0;
  std::uint64_t macs = 0;
};

inline constexpr std::size_t kMinReps = 10;
inline constexpr std::size_t kMinWarmup = 3;
inline constexpr std::size_t kColdBytes = std::size_t{32} << 20;

inline double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// One attention call on float inputs, instrumented.
inline TensorF run_variant(Variant variant, const TensorF& q, const TensorF& k, const TensorF& v, std::size_t heads,
                           attention::OpStats* stats) {
  const auto cos = kernels::KernelPair::symmetric(kernels::FeatureMap::CosineL2);
  switch (variant) {
    case Variant::MSA: return attention::msa(q, k, v, heads, stats);
    case Variant::MLA: return attention::mla(q, k, v, heads, cos, stats);
    case Variant::Hydra: return attention::hydra(q, k, v, cos, stats);
    case Variant::AFTSimple: return attention::aft_simple(q, k, v, stats);
    case Variant::PolyNL: break;
  }
  throw SpecError("bench: polynl is not benchmarked (it needs weight matrices)");
}

// glibc adapts its mmap/trim thresholds to past frees, so whether a call's buffers are
// recycled or freshly faulted in depends on what the process did earlier and on T.
// Pinning both makes every T run from recycled heap memory. Process-wide and not undone.
inline void pin_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

// Median wall time per T after `warmup` discarded runs.
inline std::vector<BenchSample> time_op(Variant variant, std::span<const std::size_t> token_counts, std::size_t dim,
                                        std::size_t heads, std::size_t reps, std::size_t warmup = kMinWarmup,
                                        std::uint64_t seed = 0) {
  if (reps < kMinReps) throw PreconditionError("time_op: need at least 10 timed repetitions");
  if (warmup < kMinWarmup) throw PreconditionError("time_op: need at least 3 warm-up repetitions");
  if (token_counts.size() < 4) throw PreconditionError("time_op: need at least 4 token counts");
  for (std::size_t i = 1; i < token_counts.size(); ++i)
    if (token_counts[i] <= token_counts[i - 1]) throw PreconditionError("time_op: token counts must increase");
  if (token_counts.back() < 8 * token_counts.front()) throw PreconditionError("time_op: sweep must span at least 8x");

  pin_allocator();
  std::vector<BenchSample> out;
  for (std::size_t t : token_counts) {
    // Enough independent input sets that consecutive calls never find their inputs in
    // the private caches; otherwise small T runs from L2 and large T does not.
    const std::size_t set_bytes = 3 * t * dim * sizeof(float);
    const std::size_t copies = std::max<std::size_t>(1, (kColdBytes + set_bytes - 1) / set_bytes);
    std::vector<std::array<TensorF, 3>> inputs;
    for (std::size_t c = 0; c < copies; ++c)
      inputs.push_back({random_uniform<float>({t, dim}, seed + 3 * c + 1), random_uniform<float>({t, dim}, seed + 3 * c + 2),
                        random_uniform<float>({t, dim}, seed + 3 * c + 3)});
    auto call = [&](std::size_t i, attention::OpStats* stats) {
      const auto& [q, k, v] = inputs[i % copies];
      return run_variant(variant, q, k, v, heads, stats);
    };
    attention::OpStats stats;
    volatile float sink = 0;
    for (std::size_t i = 0; i < warmup; ++i) sink = sink + call(i, nullptr)[0];
    call(0, &stats);
    std::vector<double> times;
    for (std::size_t i = 0; i < reps; ++i) {
      const auto start = std::chrono::steady_clock::now();
      const auto r = call(warmup + i, nullptr);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      sink = sink + r[0];
    }
    out.push_back({std::string(attention::name(variant)), t, dim, heads, reps, median(times), stats.macs});
  }
  return out;
}

// Least-squares slope of log(y) against log(x).
inline double fit_loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw PreconditionError("fit_loglog_slope: need matching samples");
  double mx = 0, my = 0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0) || !(ys[i] > 0)) throw DataError("fit_loglog_slope: values must be positive");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
    mx += lx.back();
    my += ly.back();
  }
  mx /= static_cast<double>(lx.size());
  my /= static_cast<double>(ly.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0) throw DataError("fit_loglog_slope: x values are all equal");
  return sxy / sxx;
}

// Slope of median time against T.
inline double fit_loglog_slope(std::span<const BenchSample> samples) {
  if (samples.size() < 4) throw PreconditionError("fit_loglog_slope: need at least 4 samples");
  std::vector<double> xs, ys;
  for (const auto& s : samples) {
    if (!(s.median_seconds > 0)) throw DataError("fit_loglog_slope: non-positive time");
    xs.push_back(static_cast<double>(s.tokens));
    ys.push_back(s.median_seconds);
  }
  return fit_loglog_slope(xs, ys);
}

// Instrumented counts from one call at T x D with H heads.
inline attention::OpStats measure(Variant variant, std::size_t tokens, std::size_t dim, std::size_t heads,
                                  std::uint64_t seed = 0) {
  const auto q = random_uniform<float>({tokens, dim}, seed + 1), k = random_uniform<float>({tokens, dim}, seed + 2),
             v = random_uniform<float>({tokens, dim}, seed + 3);
  attention::OpStats stats;
  run_variant(variant, q, k, v, heads, &stats);
  return stats;
}

enum class SweepAxis { tokens, dim, heads };

// Log-log slope of instrumented attention MACs along one axis, others held fixed.
inline double mac_slope(Variant variant, SweepAxis axis, std::span<const std::size_t> values, std::size_t tokens,
                        std::size_t dim, std::size_t heads) {
  std::vector<double> xs, ys;
  for (std::size_t x : values) {
    const std::size_t t = axis == SweepAxis::tokens ? x : tokens;
    const std::size_t d = axis == SweepAxis::dim ? x : dim;
    const std::size_t h = axis == SweepAxis::heads ? x : (variant == Variant::Hydra ? d : heads);
    xs.push_back(static_cast<double>(x));
    ys.push_back(static_cast<double>(measure(variant, t, d, h).macs));
  }
  return fit_loglog_slope(xs, ys);
}

inline void write_csv(std::ostream& out, std::span<const BenchSample> samples) {
  out << "variant,T,D,H,median_s,macs\n";
  for (const auto& s : samples)
    out << s.op << ',' << s.tokens << ',' << s.dim << ',' << s.heads << ',' << s.median_seconds << ',' << s.macs << '\n';
}

}  // namespace hydra::bench
