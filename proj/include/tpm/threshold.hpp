#pragma once

// Threshold machinery: the count-matching distance threshold, its conversion to
// a foreground prior and back, prior estimators built from training episodes,
// and CE/Dice sweeps over thresholds or priors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tpm/core.hpp"
#include "tpm/metrics.hpp"
#include "tpm/posterior.hpp"

namespace tpm {

struct IdtResult {
  double threshold = 0.0;
  // Pixels with distance strictly below the threshold.
  std::size_t predicted = 0;
  // True when `predicted` differs from the requested count (tied distances).
  bool tie = false;
};

/// Midpoint of the |F|-th and (|F|+1)-th smallest distances, so that strict
/// thresholding selects exactly |F| pixels whenever those two differ.
/// |F| = 0 gives half the smallest distance; |F| = N gives the largest
/// distance plus half the gap to the next distinct value below it.
inline IdtResult ideal_distance_threshold(const ScalarMap& distances, std::size_t fg_count) {
  const std::size_t n = distances.pixels();
  detail::require(fg_count <= n, ErrorCode::CountOutOfRange, "foreground count exceeds pixel count");
  std::vector<double> sorted = distances.values();
  std::sort(sorted.begin(), sorted.end());

  IdtResult out;
  if (fg_count == 0) {
    out.threshold = sorted.front() / 2.0;
  } else if (fg_count == n) {
    double top = sorted.back();
    auto below = std::lower_bound(sorted.begin(), sorted.end(), top);
    out.threshold = below == sorted.begin() ? top * 1.0001 : top + (top - *std::prev(below)) / 2.0;
  } else {
    out.threshold = (sorted[fg_count - 1] + sorted[fg_count]) / 2.0;
  }
  out.predicted = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), out.threshold) - sorted.begin());
  out.tie = out.predicted != fg_count;
  return out;
}

/// Log-odds ln(p_F/p_B) that puts the tied model's 0.5 boundary at chord
/// distance t: ½t²Δ + d·ln(σ_F/σ_B).
inline double boundary_log_odds(double t, const TpmParams& params) {
  return 0.5 * t * t * params.delta() + params.log_norm_ratio();
}

/// Ideal class prior p_F* = 1 − sig(−t²Δ − 2d·ln(σ_F/σ_B)) with the κ = 0.5
/// sigmoid, as a complete prior pair (p_B computed directly, not as 1 − p_F).
inline ClassPriors icp_priors(double t, const TpmParams& params) {
  params.validate();
  detail::require(t >= 0.0 && std::isfinite(t), ErrorCode::InvalidArgument, "distance threshold must be >= 0");
  double z = boundary_log_odds(t, params);
  return {{1.0 / (1.0 + std::exp(-z))}, 1.0 / (1.0 + std::exp(z))};
}

inline double icp_from_idt(double t, const TpmParams& params) { return icp_priors(t, params).foreground[0]; }

/// Chord distance at which the single-prototype posterior equals 0.5.
inline double boundary_distance(const TpmParams& params, const ClassPriors& priors) {
  params.validate();
  detail::require_binary_priors(priors);
  double d2 = (2.0 * std::log(priors.foreground[0] / priors.background) - 2.0 * params.log_norm_ratio()) / params.delta();
  detail::require(d2 >= 0.0, ErrorCode::NoBoundary, "prior too small: background wins everywhere");
  return std::sqrt(d2);
}

// ---------------------------------------------------------------------------
// Prior estimators

struct EpisodeRecord {
  std::size_t support_fg_count = 0;
  double slice_loc = 0.5;
  double icp = 0.5;

  void validate() const {
    detail::require(icp > 0.0 && icp < 1.0, ErrorCode::InvalidArgument, "record icp must be in (0, 1)");
    detail::require(slice_loc >= 0.0 && slice_loc <= 1.0, ErrorCode::InvalidArgument,
                    "record slice_loc must be in [0, 1]");
  }
};

/// icp ≈ intercept + coef_fg_count·|F| + coef_slice_loc·slice_loc, clamped.
struct LinEstModel {
  double intercept = 0.5;
  double coef_fg_count = 0.0;
  double coef_slice_loc = 0.0;
  double clamp_eps = 1e-4;
};

inline double avg_est(const std::vector<EpisodeRecord>& records) {
  detail::require(!records.empty(), ErrorCode::EmptyRecords, "no records");
  double s = 0.0;
  for (const auto& r : records) {
    r.validate();
    s += r.icp;
  }
  return s / static_cast<double>(records.size());
}

/// Least squares through the normal equations (ridge 1e-9 on the diagonal).
/// Columns are scaled to unit RMS before solving so |F| in the thousands and
/// slice_loc in [0, 1] are conditioned alike; coefficients are unscaled after.
/// Fewer than three records fall back to an intercept-only mean.
inline LinEstModel lin_est_fit(const std::vector<EpisodeRecord>& records) {
  LinEstModel model;
  model.intercept = avg_est(records);
  if (records.size() < 3) return model;

  const std::size_t n = records.size();
  auto column = [&](std::size_t i, std::size_t j) {
    const auto& r = records[i];
    return j == 0 ? 1.0 : j == 1 ? static_cast<double>(r.support_fg_count) : r.slice_loc;
  };
  std::array<double, 3> scale{};
  for (std::size_t j = 0; j < 3; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += column(i, j) * column(i, j);
    scale[j] = ss > 0.0 ? std::sqrt(ss / static_cast<double>(n)) : 1.0;
  }

  std::array<std::array<double, 4>, 3> a{};  // augmented [XᵀX | Xᵀy]
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double xj = column(i, j) / scale[j];
      for (std::size_t l = 0; l < 3; ++l) a[j][l] += xj * column(i, l) / scale[l];
      a[j][3] += xj * records[i].icp;
    }
  }
  for (std::size_t j = 0; j < 3; ++j) a[j][j] += 1e-9;

  // Gaussian elimination with partial pivoting.
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < 3; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    for (std::size_t r = c + 1; r < 3; ++r) {
      double f = a[r][c] / a[c][c];
      for (std::size_t l = c; l < 4; ++l) a[r][l] -= f * a[c][l];
    }
  }
  std::array<double, 3> beta{};
  for (std::size_t c = 3; c-- > 0;) {
    double s = a[c][3];
    for (std::size_t l = c + 1; l < 3; ++l) s -= a[c][l] * beta[l];
    beta[c] = s / a[c][c];
  }
  model.intercept = beta[0] / scale[0];
  model.coef_fg_count = beta[1] / scale[1];
  model.coef_slice_loc = beta[2] / scale[2];
  return model;
}

inline double lin_est_predict(const LinEstModel& model, std::size_t support_fg_count, double slice_loc) {
  detail::require(slice_loc >= 0.0 && slice_loc <= 1.0, ErrorCode::InvalidArgument, "slice_loc must be in [0, 1]");
  detail::require(model.clamp_eps > 0.0 && model.clamp_eps < 0.5, ErrorCode::InvalidArgument,
                  "clamp_eps must be in (0, 0.5)");
  double p = model.intercept + model.coef_fg_count * static_cast<double>(support_fg_count) +
             model.coef_slice_loc * slice_loc;
  return std::clamp(p, model.clamp_eps, 1.0 - model.clamp_eps);
}

/// Oracle prior: the ideal class prior of the labelled query itself.
inline ClassPriors ocp_priors(const ScalarMap& distances, const GridMask& truth, const TpmParams& params) {
  detail::require(distances.height() == truth.height() && distances.width() == truth.width(),
                  ErrorCode::DimensionMismatch, "distance map and mask differ in size");
  return icp_priors(ideal_distance_threshold(distances, truth.foreground_count()).threshold, params);
}

inline double ocp_prior(const ScalarMap& distances, const GridMask& truth, const TpmParams& params) {
  return ocp_priors(distances, truth, params).foreground[0];
}

/// Count-matching priors for a general log-likelihood-ratio map (mixture
/// posteriors): the prior log-odds is minus the midpoint of the |F|-th and
/// (|F|+1)-th largest ratios, so exactly |F| pixels reach posterior 0.5 when
/// those differ. Past either end the boundary sits one nat beyond the extreme.
inline ClassPriors ideal_priors_from_llr(const ScalarMap& llr, std::size_t fg_count) {
  const std::size_t n = llr.pixels();
  detail::require(fg_count <= n, ErrorCode::CountOutOfRange, "foreground count exceeds pixel count");
  std::vector<double> sorted = llr.values();
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double b;
  if (fg_count == 0)
    b = sorted.front() + 1.0;
  else if (fg_count == n)
    b = sorted.back() - 1.0;
  else
    b = (sorted[fg_count - 1] + sorted[fg_count]) / 2.0;
  return {{1.0 / (1.0 + std::exp(b))}, 1.0 / (1.0 + std::exp(-b))};
}

/// Oracle prior for the multi-prototype posterior.
inline ClassPriors ocp_priors_mp(const std::vector<ScalarMap>& distances, std::span<const double> weights,
                                 const GridMask& truth, const TpmParams& params) {
  ScalarMap llr = tpm_mp_log_likelihood_ratio(distances, weights, params);
  detail::require(llr.height() == truth.height() && llr.width() == truth.width(), ErrorCode::DimensionMismatch,
                  "distance map and mask differ in size");
  return ideal_priors_from_llr(llr, truth.foreground_count());
}

// ---------------------------------------------------------------------------
// CE / Dice sweeps

struct SweepResult {
  std::string axis;  // "t_d" or "p_f"
  std::vector<double> grid;
  std::vector<double> ce;
  std::vector<double> dice;
  double argmin_ce = 0.0;
  double argmax_dice = 0.0;
  // Count-matching point on the same axis (T_D* or p_F*); independent of the grid.
  double ideal = 0.0;
  double ideal_ce = 0.0;
  double ideal_dice = 0.0;
};

namespace detail {

struct SweepPoint {
  double ce, dice;
};

inline SweepPoint evaluate_prior(const ScalarMap& distances, const GridMask& truth_bin, const TpmParams& params,
                                 const ClassPriors& priors) {
  ScalarMap post = tpm_sp_posterior_from_distance(distances, params, priors);
  return {cross_entropy(post, truth_bin), dice(predict_mask(post), truth_bin, 1)};
}

inline void finish_sweep(SweepResult& res) {
  if (res.grid.empty()) return;
  auto ce_it = std::min_element(res.ce.begin(), res.ce.end());
  auto dice_it = std::max_element(res.dice.begin(), res.dice.end());
  res.argmin_ce = res.grid[static_cast<std::size_t>(ce_it - res.ce.begin())];
  res.argmax_dice = res.grid[static_cast<std::size_t>(dice_it - res.dice.begin())];
}

}  // namespace detail

/// CE and Dice of the tied posterior as the decision boundary moves through
/// `grid` (chord distances). Each T is turned into priors with icp_priors. The
/// argmin-CE point stands in for a CE-trained threshold.
inline SweepResult threshold_sweep(const ScalarMap& distances, const GridMask& truth, const TpmParams& params,
                                   const std::vector<double>& grid) {
  detail::require(!grid.empty(), ErrorCode::InvalidArgument, "empty sweep grid");
  detail::require(distances.height() == truth.height() && distances.width() == truth.width(),
                  ErrorCode::DimensionMismatch, "distance map and mask differ in size");
  GridMask bin = binarize(truth);
  SweepResult res;
  res.axis = "t_d";
  res.grid = grid;
  for (double t : grid) {
    auto pt = detail::evaluate_prior(distances, bin, params, icp_priors(t, params));
    res.ce.push_back(pt.ce);
    res.dice.push_back(pt.dice);
  }
  detail::finish_sweep(res);
  res.ideal = ideal_distance_threshold(distances, bin.count(1)).threshold;
  auto ideal = detail::evaluate_prior(distances, bin, params, icp_priors(res.ideal, params));
  res.ideal_ce = ideal.ce;
  res.ideal_dice = ideal.dice;
  return res;
}

/// Same curves driven by foreground priors p_F in (0, 1).
inline SweepResult prior_sweep(const ScalarMap& distances, const GridMask& truth, const TpmParams& params,
                               const std::vector<double>& pf_grid) {
  detail::require(!pf_grid.empty(), ErrorCode::InvalidArgument, "empty sweep grid");
  detail::require(distances.height() == truth.height() && distances.width() == truth.width(),
                  ErrorCode::DimensionMismatch, "distance map and mask differ in size");
  GridMask bin = binarize(truth);
  SweepResult res;
  res.axis = "p_f";
  res.grid = pf_grid;
  for (double pf : pf_grid) {
    detail::require(pf > 0.0 && pf < 1.0, ErrorCode::DegeneratePriors, "swept p_F must be in (0, 1)");
    auto pt = detail::evaluate_prior(distances, bin, params, ClassPriors{{pf}, 1.0 - pf});
    res.ce.push_back(pt.ce);
    res.dice.push_back(pt.dice);
  }
  detail::finish_sweep(res);
  ClassPriors ideal_priors = ocp_priors(distances, bin, params);
  res.ideal = ideal_priors.foreground[0];
  auto ideal = detail::evaluate_prior(distances, bin, params, ideal_priors);
  res.ideal_ce = ideal.ce;
  res.ideal_dice = ideal.dice;
  return res;
}

/// `n` evenly spaced points on [lo, hi].
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

}  // namespace tpm
