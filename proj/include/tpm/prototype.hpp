#pragma once

// Prototype extraction: masked average pooling for a single prototype and a
// fixed-variance Gaussian-mixture EM for several weighted prototypes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "tpm/core.hpp"
#include "tpm/detail/random.hpp"

namespace tpm {

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : xs) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - hi);
  return hi + std::log(s);
}

}  // namespace detail

/// Masked average pooling of the pixels labelled `class_id`, projected back to
/// the unit sphere. The mask must already be at feature resolution.
inline Vector map_pool(const FeatureGrid& features, const GridMask& mask, int class_id = 1) {
  detail::require(mask.height() == features.height() && mask.width() == features.width(),
                  ErrorCode::DimensionMismatch, "mask and features differ in size; resample first");
  Vector sum(features.dims(), 0.0);
  std::size_t n = 0;
  for (std::size_t r = 0; r < features.pixels(); ++r) {
    if (mask[r] != class_id) continue;
    auto f = features[r];
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += f[j];
    ++n;
  }
  detail::require(n > 0, ErrorCode::EmptyMask, "no pixels carry the requested class");
  for (double& x : sum) x /= static_cast<double>(n);
  return normalize(sum);
}

/// Pooling at mask resolution: features are bilinearly upsampled to the mask
/// size first, then averaged over the class region and renormalized.
inline Vector map_pool_upsampled(const FeatureGrid& features, const GridMask& mask, int class_id = 1) {
  RawGrid up = upsample_features(features, mask.height(), mask.width());
  Vector sum(features.dims(), 0.0);
  std::size_t n = 0;
  for (std::size_t r = 0; r < mask.pixels(); ++r) {
    if (mask[r] != class_id) continue;
    auto f = up.vectors[r];
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += f[j];
    ++n;
  }
  detail::require(n > 0, ErrorCode::EmptyMask, "no pixels carry the requested class");
  for (double& x : sum) x /= static_cast<double>(n);
  return normalize(sum);
}

/// Collects the feature vectors labelled `class_id` (any foreground when
/// class_id < 0).
inline VectorArray gather_class(const FeatureGrid& features, const GridMask& mask, int class_id = -1) {
  detail::require(mask.height() == features.height() && mask.width() == features.width(),
                  ErrorCode::DimensionMismatch, "mask and features differ in size");
  std::vector<double> data;
  std::size_t n = 0;
  for (std::size_t r = 0; r < features.pixels(); ++r) {
    bool hit = class_id < 0 ? mask[r] != 0 : mask[r] == class_id;
    if (!hit) continue;
    auto f = features[r];
    data.insert(data.end(), f.begin(), f.end());
    ++n;
  }
  return {n, features.dims(), std::move(data)};
}

struct EmConfig {
  int k = 5;
  int max_iters = 10;
  double tol = 1e-6;  // relative change of the log-likelihood
  std::uint64_t seed = 0;
  double sigma_f = 0.31606977062050695;
  // Reproject means onto the sphere after every M-step. Off gives plain
  // fixed-variance EM, whose likelihood is monotone.
  bool project_to_sphere = true;

  void validate() const {
    detail::require(k >= 1 && max_iters >= 1 && tol > 0.0 && sigma_f > 0.0, ErrorCode::InvalidArgument,
                    "em config fields must be positive");
  }
};

/// Full EM output, including the per-iteration log-likelihood trace
/// (entry 0 is the initialization).
struct EmTrace {
  VectorArray means;
  std::vector<double> weights;
  std::vector<double> log_likelihood;
  int iterations = 0;
  int restarts = 0;
};

namespace detail {

// Per-point log joint ln w_m − ‖x − p_m‖²/(2σ²); shared constants dropped.
inline void log_joint_row(std::span<const double> x, const VectorArray& means, std::span<const double> log_w,
                          double inv_two_var, std::span<double> out) {
  for (std::size_t m = 0; m < means.size(); ++m)
    out[m] = log_w[m] - squared_distance(x, means[m]) * inv_two_var;
}

inline std::vector<double> responsibilities_impl(const VectorArray& points, const VectorArray& means,
                                                 std::span<const double> weights, double sigma, double* loglik) {
  const std::size_t n = points.size(), k = means.size();
  std::vector<double> log_w(k);
  for (std::size_t m = 0; m < k; ++m) log_w[m] = std::log(weights[m]);
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> gamma(n * k);
  double ll = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> row(gamma.data() + i * k, k);
    log_joint_row(points[i], means, log_w, inv_two_var, row);
    double lse = log_sum_exp(row);
    ll += lse;
    for (double& g : row) g = std::exp(g - lse);
  }
  if (loglik) {
    double dims = static_cast<double>(points.dims());
    *loglik = ll - static_cast<double>(n) * 0.5 * dims * std::log(2.0 * std::numbers::pi * sigma * sigma);
  }
  return gamma;
}

// Farthest-point initialization. The first centre is the point with the
// largest projection on a seed-drawn direction; ties go to the
// lexicographically smaller vector so input order never matters.
inline VectorArray farthest_point_init(const VectorArray& points, int k, std::uint64_t seed) {
  Rng rng(seed);
  Vector dir = rng.unit_vector(points.dims());
  auto lex_less = [&](std::size_t a, std::size_t b) {
    auto pa = points[a], pb = points[b];
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  };
  std::size_t first = 0;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < points.size(); ++i) {
    double s = dot(points[i], dir);
    if (s > best || (s == best && lex_less(i, first))) {
      best = s;
      first = i;
    }
  }
  VectorArray centres(static_cast<std::size_t>(k), points.dims());
  std::vector<double> nearest(points.size(), std::numeric_limits<double>::infinity());
  std::size_t pick = first;
  for (int c = 0; c < k; ++c) {
    std::copy(points[pick].begin(), points[pick].end(), centres.row(c).begin());
    for (std::size_t i = 0; i < points.size(); ++i)
      nearest[i] = std::min(nearest[i], squared_distance(points[i], points[pick]));
    std::size_t next = 0;
    double far = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (nearest[i] > far || (nearest[i] == far && lex_less(i, next))) {
        far = nearest[i];
        next = i;
      }
    }
    pick = next;
  }
  return centres;
}

}  // namespace detail

/// Posterior component memberships γ(n, m), rows summing to one, computed in
/// log space so tiny σ does not underflow. Returned row-major N×M.
inline std::vector<double> em_responsibilities(const VectorArray& points, const PrototypeSet& protos, double sigma_f) {
  detail::require(!points.empty(), ErrorCode::InvalidArgument, "no points");
  detail::require(points.dims() == protos.dims(), ErrorCode::DimensionMismatch, "point dims != prototype dims");
  detail::require(sigma_f > 0.0, ErrorCode::InvalidArgument, "sigma must be positive");
  return detail::responsibilities_impl(points, protos.vectors(), protos.weights(), sigma_f, nullptr);
}

/// Mixture log-likelihood of `points` under isotropic components of std `sigma`.
inline double mixture_log_likelihood(const VectorArray& points, const VectorArray& means,
                                     std::span<const double> weights, double sigma) {
  double ll = 0.0;
  detail::responsibilities_impl(points, means, weights, sigma, &ll);
  return ll;
}

inline EmTrace em_fit_trace(const VectorArray& points, const EmConfig& cfg) {
  cfg.validate();
  detail::require(points.size() >= static_cast<std::size_t>(cfg.k), ErrorCode::TooFewPoints,
                  "fewer points than requested prototypes");
  const std::size_t n = points.size(), k = static_cast<std::size_t>(cfg.k), dims = points.dims();

  EmTrace out;
  out.means = detail::farthest_point_init(points, cfg.k, cfg.seed);
  out.weights.assign(k, 1.0 / static_cast<double>(k));

  double ll = 0.0;
  auto gamma = detail::responsibilities_impl(points, out.means, out.weights, cfg.sigma_f, &ll);
  out.log_likelihood.push_back(ll);

  for (int it = 0; it < cfg.max_iters; ++it) {
    // M-step
    std::vector<double> mass(k, 0.0);
    VectorArray sums(k, dims);
    for (std::size_t i = 0; i < n; ++i) {
      auto x = points[i];
      for (std::size_t m = 0; m < k; ++m) {
        double g = gamma[i * k + m];
        mass[m] += g;
        auto s = sums.row(m);
        for (std::size_t j = 0; j < dims; ++j) s[j] += g * x[j];
      }
    }
    for (std::size_t m = 0; m < k; ++m) {
      auto dst = out.means.row(m);
      if (mass[m] < 1e-12) {
        // Degenerate component: restart it at the worst-explained point.
        std::size_t worst = 0;
        double worst_max = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
          double mx = *std::max_element(gamma.begin() + i * k, gamma.begin() + (i + 1) * k);
          if (mx < worst_max) {
            worst_max = mx;
            worst = i;
          }
        }
        std::copy(points[worst].begin(), points[worst].end(), dst.begin());
        mass[m] = 1.0;
        ++out.restarts;
        continue;
      }
      auto s = sums[m];
      for (std::size_t j = 0; j < dims; ++j) dst[j] = s[j] / mass[m];
      if (cfg.project_to_sphere) {
        double nm = norm(dst);
        // A mean at the origin has no direction; keep the previous one.
        if (nm >= kZeroNormTol)
          for (double& v : dst) v /= nm;
      }
    }
    double total = std::accumulate(mass.begin(), mass.end(), 0.0);
    for (std::size_t m = 0; m < k; ++m) out.weights[m] = mass[m] / total;

    // E-step
    double prev = ll;
    gamma = detail::responsibilities_impl(points, out.means, out.weights, cfg.sigma_f, &ll);
    out.log_likelihood.push_back(ll);
    out.iterations = it + 1;
    if (std::abs(ll - prev) <= cfg.tol * std::abs(prev)) break;
  }
  return out;
}

/// Fits `cfg.k` weighted unit prototypes to unit points. Deterministic given
/// the seed and independent of the order of `points`.
inline PrototypeSet em_fit(const VectorArray& points, const EmConfig& cfg) {
  detail::require(cfg.project_to_sphere, ErrorCode::InvalidArgument,
                  "prototype sets need sphere-projected means; use em_fit_trace for the unconstrained variant");
  EmTrace t = em_fit_trace(points, cfg);
  // Renormalize away rounding so the PrototypeSet invariants hold exactly.
  double total = std::accumulate(t.weights.begin(), t.weights.end(), 0.0);
  for (double& w : t.weights) w /= total;
  return {normalize_rows(t.means), std::move(t.weights)};
}

}  // namespace tpm
