#pragma once

// One support/query episode end to end: prototypes from the support, distance
// maps on the query, a foreground prior from the chosen source, posterior,
// predicted mask and metrics.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpm/core.hpp"
#include "tpm/metrics.hpp"
#include "tpm/posterior.hpp"
#include "tpm/prototype.hpp"
#include "tpm/synth.hpp"
#include "tpm/threshold.hpp"

namespace tpm {

enum class PriorSource { AdnetFixed, AvgEst, LinEst, Ocp };
enum class ProtoMode { Single, Multi };

inline std::string_view to_string(PriorSource s) {
  switch (s) {
    case PriorSource::AdnetFixed: return "fixed";
    case PriorSource::AvgEst: return "avgest";
    case PriorSource::LinEst: return "linest";
    case PriorSource::Ocp: return "ocp";
  }
  return "?";
}

inline PriorSource parse_prior_source(std::string_view s) {
  if (s == "fixed" || s == "adnet_fixed") return PriorSource::AdnetFixed;
  if (s == "avgest") return PriorSource::AvgEst;
  if (s == "linest") return PriorSource::LinEst;
  if (s == "ocp") return PriorSource::Ocp;
  throw Error(ErrorCode::InvalidArgument, "unknown prior source: " + std::string(s));
}

struct EpisodeMethod {
  PriorSource prior = PriorSource::Ocp;
  ProtoMode protos = ProtoMode::Single;
  int k = 5;  // prototypes for ProtoMode::Multi
  std::uint64_t em_seed = 0;
  // Pool at mask resolution by upsampling support features instead of
  // downsampling the support mask.
  bool pool_upsampled = false;

  std::string name() const {
    std::string p = protos == ProtoMode::Single ? "sp" : "mp(" + std::to_string(k) + ")";
    return std::string(to_string(prior)) + "/" + p;
  }
};

/// A labelled image at feature resolution (truth may be at a higher one).
struct Frame {
  FeatureGrid features;
  GridMask truth;
  double slice_loc = 0.5;

  static Frame from(const Scene& s) { return {s.features, s.truth, s.meta.slice_loc}; }
};

/// Estimator inputs: records feed AvgEst (and LinEst when no model is given).
struct EstimatorInputs {
  std::vector<EpisodeRecord> records;
  std::optional<LinEstModel> linest;
};

struct EpisodeReport {
  std::string method;
  std::vector<double> dice;  // per foreground class, class 1 first
  double mean_dice = 0.0;
  double ce = 0.0;
  double prior = 0.5;  // total foreground prior used
  // Boundary chord distance implied by the prior; NaN when no boundary exists.
  double boundary = std::numeric_limits<double>::quiet_NaN();
  std::size_t num_prototypes = 1;
  GridMask prediction;
};

// ---------------------------------------------------------------------------

/// Support mask at feature resolution (nearest-neighbour when sizes differ).
inline GridMask mask_at_features(const FeatureGrid& features, const GridMask& mask) {
  if (mask.height() == features.height() && mask.width() == features.width()) return mask;
  return downsample_mask(mask, features.height(), features.width());
}

/// Binary-task prototypes from all foreground pixels of the support.
inline PrototypeSet extract_prototypes(const Frame& support, const EpisodeMethod& method, const TpmParams& params) {
  GridMask bin = binarize(support.truth);
  if (method.protos == ProtoMode::Single) {
    Vector p = method.pool_upsampled ? map_pool_upsampled(support.features, bin, 1)
                                     : map_pool(support.features, mask_at_features(support.features, bin), 1);
    return PrototypeSet::single(p);
  }
  GridMask low = mask_at_features(support.features, bin);
  VectorArray pts = gather_class(support.features, low, 1);
  detail::require(!pts.empty(), ErrorCode::EmptyMask, "support has no foreground");
  EmConfig cfg;
  cfg.k = method.k;
  cfg.seed = method.em_seed;
  cfg.sigma_f = params.sigma_f;
  return em_fit(pts, cfg);
}

/// One MAP prototype per foreground class 1..k of the support.
inline VectorArray extract_class_prototypes(const Frame& support, const EpisodeMethod& method) {
  const int k = support.truth.num_classes();
  std::vector<Vector> rows;
  GridMask low = mask_at_features(support.features, support.truth);
  for (int c = 1; c <= k; ++c)
    rows.push_back(method.pool_upsampled ? map_pool_upsampled(support.features, support.truth, c)
                                         : map_pool(support.features, low, c));
  return VectorArray::from_rows(rows);
}

/// Per-prototype chord distance maps at the truth resolution: computed on
/// the feature grid, then bilinearly upsampled when the truth is larger.
inline std::vector<ScalarMap> query_distances(const FeatureGrid& features, const VectorArray& protos,
                                              std::size_t out_h, std::size_t out_w) {
  auto maps = distance_maps(features, protos);
  if (out_h != features.height() || out_w != features.width())
    for (auto& m : maps) m = bilinear_upsample(m, out_h, out_w);
  return maps;
}

/// Oracle priors for the query: the ideal class prior of the single-prototype
/// model, or count-matching on the mixture's likelihood ratio when M > 1.
inline ClassPriors oracle_priors(const std::vector<ScalarMap>& maps, const PrototypeSet& protos, const GridMask& truth,
                                 const TpmParams& params) {
  if (protos.size() == 1) return ocp_priors(maps.front(), truth, params);
  return ocp_priors_mp(maps, protos.weights(), truth, params);
}

/// Training record for prior estimators: the query's ideal class prior under
/// prototypes from the support, keyed by support size and query slice.
inline EpisodeRecord make_record(const Frame& support, const Frame& query, const EpisodeMethod& method,
                                 const TpmParams& params) {
  PrototypeSet protos = extract_prototypes(support, method, params);
  auto maps = query_distances(query.features, protos.vectors(), query.truth.height(), query.truth.width());
  EpisodeRecord rec;
  rec.support_fg_count = support.truth.foreground_count();
  rec.slice_loc = query.slice_loc;
  rec.icp = oracle_priors(maps, protos, binarize(query.truth), params).foreground[0];
  return rec;
}

namespace detail {

inline double choose_prior(PriorSource source, const Frame& support, const Frame& query, const ScalarMap& min_dist,
                           const TpmParams& params, const EstimatorInputs& est) {
  switch (source) {
    case PriorSource::AdnetFixed:
      return 0.5;
    case PriorSource::AvgEst:
      return avg_est(est.records);
    case PriorSource::LinEst: {
      LinEstModel model = est.linest ? *est.linest : lin_est_fit(est.records);
      return lin_est_predict(model, support.truth.foreground_count(), query.slice_loc);
    }
    case PriorSource::Ocp:
      return ocp_prior(min_dist, binarize(query.truth), params);
  }
  return 0.5;
}

inline double boundary_or_nan(const TpmParams& params, double pf) {
  try {
    return boundary_distance(params, ClassPriors{{pf}, 1.0 - pf});
  } catch (const Error&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace detail

/// Runs one episode. Binary when the support truth has one foreground class,
/// multi-class (single MAP prototype per class, total prior split evenly)
/// otherwise.
inline EpisodeReport run_episode(const Frame& support, const Frame& query, const EpisodeMethod& method,
                                 const TpmParams& params, const EstimatorInputs& est = {}) {
  params.validate();
  detail::require(support.features.dims() == query.features.dims(), ErrorCode::DimensionMismatch,
                  "support and query feature dims differ");
  const std::size_t out_h = query.truth.height(), out_w = query.truth.width();
  const int k_classes = support.truth.num_classes();

  EpisodeReport rep;
  rep.method = method.name();

  if (k_classes == 1) {
    PrototypeSet protos = extract_prototypes(support, method, params);
    rep.num_prototypes = protos.size();
    auto maps = query_distances(query.features, protos.vectors(), out_h, out_w);
    ScalarMap dmin = min_map(maps);
    GridMask bin = binarize(query.truth);
    ClassPriors priors;
    if (method.prior == PriorSource::Ocp) {
      priors = oracle_priors(maps, protos, bin, params);
    } else {
      double pf = detail::choose_prior(method.prior, support, query, dmin, params, est);
      priors = ClassPriors{{pf}, 1.0 - pf};
    }
    rep.prior = priors.foreground[0];
    ScalarMap post;
    if (method.prior == PriorSource::AdnetFixed && protos.size() == 1) {
      AdnetParams ap = tied_to_adnet(params, priors);
      ScalarMap score = anomaly_score_map(query.features, protos[0], ap.alpha);
      if (score.height() != out_h || score.width() != out_w) score = bilinear_upsample(score, out_h, out_w);
      post = adnet_posterior(score, ap);
    } else {
      post = tpm_mp_posterior_from_distances(maps, protos.weights(), params, priors);
    }
    rep.prediction = predict_mask(post);
    rep.dice = {dice(rep.prediction, bin, 1)};
    rep.ce = cross_entropy(post, bin);
  } else {
    detail::require(method.protos == ProtoMode::Single, ErrorCode::InvalidArgument,
                    "multi-class episodes use one prototype per class");
    detail::require(query.truth.num_classes() == k_classes, ErrorCode::DimensionMismatch,
                    "support and query class counts differ");
    VectorArray protos = extract_class_prototypes(support, method);
    rep.num_prototypes = protos.size();
    auto maps = query_distances(query.features, protos, out_h, out_w);
    if (method.prior == PriorSource::Ocp) {
      ClassPriors ideal = ideal_priors_from_llr(tpm_mc_foreground_log_ratio(maps, params), query.truth.foreground_count());
      rep.prior = ideal.foreground[0];
    } else {
      rep.prior = detail::choose_prior(method.prior, support, query, min_map(maps), params, est);
    }
    ClassPriors priors;
    priors.foreground.assign(static_cast<std::size_t>(k_classes), rep.prior / k_classes);
    priors.background = 1.0 - rep.prior;
    auto post = tpm_mc_posterior_from_distances(maps, params, priors);
    rep.prediction = predict_mask(post);
    for (int c = 1; c <= k_classes; ++c) rep.dice.push_back(dice(rep.prediction, query.truth, c));
    std::vector<double> fg(post[0].pixels());
    for (std::size_t r = 0; r < fg.size(); ++r) fg[r] = std::clamp(1.0 - post[0][r], 0.0, 1.0);
    rep.ce = cross_entropy(ScalarMap(out_h, out_w, std::move(fg)), query.truth);
  }
  rep.boundary = detail::boundary_or_nan(params, rep.prior);
  double s = 0.0;
  for (double d : rep.dice) s += d;
  rep.mean_dice = s / static_cast<double>(rep.dice.size());
  return rep;
}

inline EpisodeReport run_episode(const Scene& support, const Scene& query, const EpisodeMethod& method,
                                 const TpmParams& params, const EstimatorInputs& est = {}) {
  return run_episode(Frame::from(support), Frame::from(query), method, params, est);
}

}  // namespace tpm
