#pragma once

// Class posteriors: the ADNet anomaly-score model, the tied prototype model
// (single prototype, Gaussian mixture, multi-class), the parameter mapping that
// makes the first two coincide, and label prediction from probability maps.
//
// Densities are handled in log space. The (2π)^(-d/2) factor cancels in every
// ratio and is never formed; σ^(-d) is kept as −d·ln σ.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "tpm/core.hpp"
#include "tpm/prototype.hpp"

namespace tpm {

struct AdnetParams {
  double alpha = 20.0;
  double t_s = 0.0;
  double kappa = 0.5;
};

/// Logistic with steepness κ: 1 / (1 + e^(−κx)).
inline double sigmoid(double x, double kappa = 0.5) { return 1.0 / (1.0 + std::exp(-kappa * x)); }

namespace detail {

inline void require_binary_priors(const ClassPriors& priors) {
  priors.validate();
  require(priors.k() == 1, ErrorCode::DimensionMismatch, "binary posterior needs exactly one foreground prior");
  double pf = priors.foreground[0], pb = priors.background;
  require(pf > 0.0 && pf < 1.0 && pb > 0.0 && pb < 1.0, ErrorCode::DegeneratePriors,
          "binary priors must lie strictly inside (0, 1)");
}

template <class Fn>
ScalarMap map_values(const ScalarMap& in, Fn&& fn) {
  std::vector<double> out(in.pixels());
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) out[r] = fn(in[r]);
  });
  return {in.height(), in.width(), std::move(out)};
}

}  // namespace detail

/// S(r) = −α·cos(F(r), p).
inline ScalarMap anomaly_score_map(const FeatureGrid& features, std::span<const double> proto, double alpha) {
  detail::require(alpha > 0.0, ErrorCode::InvalidArgument, "alpha must be positive");
  return detail::map_values(cosine_map(features, proto), [alpha](double c) { return -alpha * c; });
}

/// p(F | r) = 1 − sig_κ(S(r) − T_S), evaluated as 1 / (1 + e^(κ(S − T_S))).
inline ScalarMap adnet_posterior(const ScalarMap& score, const AdnetParams& params) {
  detail::require(params.alpha > 0.0 && params.kappa > 0.0, ErrorCode::InvalidArgument,
                  "adnet alpha and kappa must be positive");
  return detail::map_values(score, [&](double s) { return 1.0 / (1.0 + std::exp(params.kappa * (s - params.t_s))); });
}

/// ADNet parameters under which adnet_posterior reproduces tpm_sp_posterior on
/// the unit sphere: α = Δ/κ and T_S = (ln(p_F/p_B) − d·ln(σ_F/σ_B))/κ − α.
/// At κ = 0.5 these are α = 2Δ and T_S = 2 ln(p_F/p_B) − 2d ln(σ_F/σ_B) − α.
inline AdnetParams tied_to_adnet(const TpmParams& params, const ClassPriors& priors) {
  params.validate();
  detail::require_binary_priors(priors);
  const double inv_kappa = 1.0 / params.kappa;
  AdnetParams out;
  out.kappa = params.kappa;
  out.alpha = params.alpha();
  out.t_s = inv_kappa * std::log(priors.foreground[0] / priors.background) -
            inv_kappa * params.dim * std::log(params.sigma_f / params.sigma_b) - out.alpha;
  return out;
}

/// Single-prototype tied posterior from chord distances:
/// 1 / (1 + exp(½D²Δ + d·ln(σ_F/σ_B) + ln(p_B/p_F))).
inline ScalarMap tpm_sp_posterior_from_distance(const ScalarMap& distances, const TpmParams& params,
                                                const ClassPriors& priors) {
  params.validate();
  detail::require_binary_priors(priors);
  const double half_delta = 0.5 * params.delta();
  const double offset = params.log_norm_ratio() + std::log(priors.background / priors.foreground[0]);
  return detail::map_values(distances, [=](double d) { return 1.0 / (1.0 + std::exp(half_delta * d * d + offset)); });
}

inline ScalarMap tpm_sp_posterior(const FeatureGrid& features, std::span<const double> proto, const TpmParams& params,
                                  const ClassPriors& priors) {
  return tpm_sp_posterior_from_distance(distance_map(features, proto), params, priors);
}

/// Mixture posterior from one distance map per prototype. Foreground and
/// background mixtures share centres and weights and differ only in σ.
inline ScalarMap tpm_mp_posterior_from_distances(const std::vector<ScalarMap>& distances,
                                                 std::span<const double> weights, const TpmParams& params,
                                                 const ClassPriors& priors) {
  params.validate();
  detail::require_binary_priors(priors);
  detail::require(!distances.empty() && distances.size() == weights.size(), ErrorCode::DimensionMismatch,
                  "one distance map per mixture weight required");
  const std::size_t m_count = distances.size();
  const std::size_t h = distances.front().height(), w = distances.front().width();
  for (const auto& d : distances)
    detail::require(d.height() == h && d.width() == w, ErrorCode::DimensionMismatch, "distance maps differ in size");

  std::vector<double> log_w(m_count);
  for (std::size_t m = 0; m < m_count; ++m) log_w[m] = std::log(weights[m]);
  const double inv2f = 1.0 / (2.0 * params.sigma_f * params.sigma_f);
  const double inv2b = 1.0 / (2.0 * params.sigma_b * params.sigma_b);
  const double fg_const = std::log(priors.foreground[0]) - params.dim * std::log(params.sigma_f);
  const double bg_const = std::log(priors.background) - params.dim * std::log(params.sigma_b);

  std::vector<double> out(h * w);
  detail::parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::vector<double> lf(m_count), lb(m_count);
    for (std::size_t r = b; r < e; ++r) {
      for (std::size_t m = 0; m < m_count; ++m) {
        double d2 = distances[m][r] * distances[m][r];
        lf[m] = log_w[m] - d2 * inv2f;
        lb[m] = log_w[m] - d2 * inv2b;
      }
      double log_fg = fg_const + detail::log_sum_exp(lf);
      double log_bg = bg_const + detail::log_sum_exp(lb);
      out[r] = 1.0 / (1.0 + std::exp(log_bg - log_fg));
    }
  });
  return {h, w, std::move(out)};
}

inline ScalarMap tpm_mp_posterior(const FeatureGrid& features, const PrototypeSet& protos, const TpmParams& params,
                                  const ClassPriors& priors) {
  return tpm_mp_posterior_from_distances(distance_maps(features, protos.vectors()), protos.weights(), params, priors);
}

/// Per-pixel ln p(r|F) − ln p(r|B) of the tied mixture; the posterior is
/// logistic(ratio + ln(p_F/p_B)).
inline ScalarMap tpm_mp_log_likelihood_ratio(const std::vector<ScalarMap>& distances, std::span<const double> weights,
                                             const TpmParams& params) {
  params.validate();
  detail::require(!distances.empty() && distances.size() == weights.size(), ErrorCode::DimensionMismatch,
                  "one distance map per mixture weight required");
  const std::size_t m_count = distances.size();
  const std::size_t h = distances.front().height(), w = distances.front().width();
  for (const auto& d : distances)
    detail::require(d.height() == h && d.width() == w, ErrorCode::DimensionMismatch, "distance maps differ in size");

  std::vector<double> log_w(m_count);
  for (std::size_t m = 0; m < m_count; ++m) log_w[m] = std::log(weights[m]);
  const double inv2f = 1.0 / (2.0 * params.sigma_f * params.sigma_f);
  const double inv2b = 1.0 / (2.0 * params.sigma_b * params.sigma_b);
  std::vector<double> out(h * w);
  detail::parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::vector<double> lf(m_count), lb(m_count);
    for (std::size_t r = b; r < e; ++r) {
      for (std::size_t m = 0; m < m_count; ++m) {
        double d2 = distances[m][r] * distances[m][r];
        lf[m] = log_w[m] - d2 * inv2f;
        lb[m] = log_w[m] - d2 * inv2b;
      }
      out[r] = detail::log_sum_exp(lf) - detail::log_sum_exp(lb) - params.log_norm_ratio();
    }
  });
  return {h, w, std::move(out)};
}

/// Multi-class posterior from one distance map per foreground prototype.
/// Returns k+1 maps: index 0 is background, index i the class F_i. Every
/// foreground prototype also anchors a broad background component.
inline std::vector<ScalarMap> tpm_mc_posterior_from_distances(const std::vector<ScalarMap>& distances,
                                                              const TpmParams& params, const ClassPriors& priors) {
  params.validate();
  priors.validate();
  const std::size_t k = distances.size();
  detail::require(k >= 1 && priors.k() == k, ErrorCode::DimensionMismatch,
                  "need one foreground prior per class prototype");
  detail::require(priors.foreground_total() > 0.0, ErrorCode::DegeneratePriors, "all foreground priors are zero");
  const std::size_t h = distances.front().height(), w = distances.front().width();
  for (const auto& d : distances)
    detail::require(d.height() == h && d.width() == w, ErrorCode::DimensionMismatch, "distance maps differ in size");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  auto safe_log = [](double p) { return p > 0.0 ? std::log(p) : kNegInf; };
  std::vector<double> log_pf(k);
  for (std::size_t i = 0; i < k; ++i) log_pf[i] = safe_log(priors.foreground[i]);
  const double log_pb = safe_log(priors.background);
  const double inv2f = 1.0 / (2.0 * params.sigma_f * params.sigma_f);
  const double inv2b = 1.0 / (2.0 * params.sigma_b * params.sigma_b);
  const double norm_f = params.dim * std::log(params.sigma_f);
  const double norm_b = params.dim * std::log(params.sigma_b);

  std::vector<std::vector<double>> out(k + 1, std::vector<double>(h * w));
  detail::parallel_for(h * w, [&](std::size_t b, std::size_t e) {
    std::vector<double> terms(2 * k);
    std::span<double> fg(terms.data(), k), bg(terms.data() + k, k);
    for (std::size_t r = b; r < e; ++r) {
      for (std::size_t i = 0; i < k; ++i) {
        double d2 = distances[i][r] * distances[i][r];
        fg[i] = log_pf[i] - d2 * inv2f - norm_f;
        bg[i] = log_pb - d2 * inv2b - norm_b;
      }
      double log_z = detail::log_sum_exp(terms);
      for (std::size_t i = 0; i < k; ++i) out[i + 1][r] = std::exp(fg[i] - log_z);
      // Equal to 1 − Σ_i p(F_i | r), evaluated without cancellation.
      out[0][r] = std::exp(detail::log_sum_exp(bg) - log_z);
    }
  });
  std::vector<ScalarMap> maps;
  maps.reserve(k + 1);
  for (auto& v : out) maps.emplace_back(h, w, std::move(v));
  return maps;
}

/// Log-ratio of the best foreground class to background when the total
/// foreground prior is split evenly over the k classes: a pixel is labelled
/// foreground by argmax exactly when ratio + ln(P/(1 − P)) > 0.
inline ScalarMap tpm_mc_foreground_log_ratio(const std::vector<ScalarMap>& distances, const TpmParams& params) {
  params.validate();
  const std::size_t k = distances.size();
  detail::require(k >= 1, ErrorCode::DimensionMismatch, "no class distance maps");
  const std::size_t h = distances.front().height(), w = distances.front().width();
  for (const auto& d : distances)
    detail::require(d.height() == h && d.width() == w, ErrorCode::DimensionMismatch, "distance maps differ in size");
  const double inv2f = 1.0 / (2.0 * params.sigma_f * params.sigma_f);
  const double inv2b = 1.0 / (2.0 * params.sigma_b * params.sigma_b);
  const double shift = -params.log_norm_ratio() - std::log(static_cast<double>(k));
  std::vector<double> out(h * w);
  detail::parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    std::vector<double> lb(k);
    for (std::size_t r = b; r < e; ++r) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) {
        double d2 = distances[i][r] * distances[i][r];
        best = std::max(best, -d2 * inv2f);
        lb[i] = -d2 * inv2b;
      }
      out[r] = best - detail::log_sum_exp(lb) + shift;
    }
  });
  return {h, w, std::move(out)};
}

inline std::vector<ScalarMap> tpm_mc_posterior(const FeatureGrid& features, const VectorArray& class_protos,
                                               const TpmParams& params, const ClassPriors& priors) {
  return tpm_mc_posterior_from_distances(distance_maps(features, class_protos), params, priors);
}

/// Binary: label 1 where p >= 0.5.
inline GridMask predict_mask(const ScalarMap& prob) {
  std::vector<int> labels(prob.pixels());
  for (std::size_t r = 0; r < labels.size(); ++r) labels[r] = prob[r] >= 0.5 ? 1 : 0;
  return {prob.height(), prob.width(), 1, std::move(labels)};
}

/// One map: binary threshold. Several maps (background first): per-pixel
/// argmax, ties to the lowest index.
inline GridMask predict_mask(std::span<const ScalarMap> maps) {
  detail::require(!maps.empty(), ErrorCode::InvalidArgument, "no probability maps");
  if (maps.size() == 1) return predict_mask(maps.front());
  const std::size_t h = maps.front().height(), w = maps.front().width();
  for (const auto& m : maps)
    detail::require(m.height() == h && m.width() == w, ErrorCode::DimensionMismatch, "probability maps differ in size");
  std::vector<int> labels(h * w, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    double best = maps[0][r];
    for (std::size_t c = 1; c < maps.size(); ++c) {
      if (maps[c][r] > best) {
        best = maps[c][r];
        labels[r] = static_cast<int>(c);
      }
    }
  }
  return {h, w, static_cast<int>(maps.size() - 1), std::move(labels)};
}

}  // namespace tpm
