#pragma once

// Domain types and grid geometry shared by every other header: unit feature
// grids, label masks, scalar maps, tied-model parameters, and the resampling
// helpers used to move between feature and image resolution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "tpm/detail/parallel.hpp"
#include "tpm/error.hpp"

namespace tpm {

/// Tolerance on |‖v‖ − 1| for anything claiming to live on the unit sphere.
inline constexpr double kUnitNormTol = 1e-6;
/// Tolerance on the sum of priors / mixture weights.
inline constexpr double kSumTol = 1e-9;

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline bool is_unit(std::span<const double> a, double tol = kUnitNormTol) {
  return std::abs(norm(a) - 1.0) <= tol;
}

/// Row-major block of `size()` vectors, each of length `dims()`.
class VectorArray {
 public:
  VectorArray() = default;
  VectorArray(std::size_t count, std::size_t dims) : count_(count), dims_(dims), data_(count * dims, 0.0) {}
  VectorArray(std::size_t count, std::size_t dims, std::vector<double> data)
      : count_(count), dims_(dims), data_(std::move(data)) {
    detail::require(data_.size() == count_ * dims_, ErrorCode::DimensionMismatch,
                    "vector array payload length != count * dims");
  }

  static VectorArray from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    VectorArray out(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      detail::require(rows[i].size() == out.dims_, ErrorCode::DimensionMismatch, "ragged rows");
      std::copy(rows[i].begin(), rows[i].end(), out.row(i).begin());
    }
    return out;
  }
  static VectorArray from_rows(std::initializer_list<Vector> rows) { return from_rows(std::vector<Vector>(rows)); }

  std::size_t size() const noexcept { return count_; }
  std::size_t dims() const noexcept { return dims_; }
  bool empty() const noexcept { return count_ == 0; }

  std::span<const double> operator[](std::size_t i) const { return {data_.data() + i * dims_, dims_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * dims_, dims_}; }

  const std::vector<double>& data() const noexcept { return data_; }

  Vector copy_row(std::size_t i) const {
    auto r = (*this)[i];
    return {r.begin(), r.end()};
  }

  friend bool operator==(const VectorArray&, const VectorArray&) = default;

 private:
  std::size_t count_ = 0;
  std::size_t dims_ = 0;
  std::vector<double> data_;
};

/// H'×W' grid of feature vectors before sphere projection.
struct RawGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  VectorArray vectors;
};

/// H'×W' grid of unit feature vectors. Construction validates the sphere
/// invariant, so every FeatureGrid in flight is a valid spherical embedding.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, VectorArray vectors)
      : height_(height), width_(width), vectors_(std::move(vectors)) {
    detail::require(height_ > 0 && width_ > 0 && vectors_.dims() > 0, ErrorCode::InvalidArgument,
                    "feature grid needs positive height, width and dims");
    detail::require(vectors_.size() == height_ * width_, ErrorCode::DimensionMismatch,
                    "feature grid vector count != height * width");
    for (std::size_t i = 0; i < vectors_.size(); ++i)
      detail::require(is_unit(vectors_[i]), ErrorCode::NormViolation, "feature vector is not unit-norm");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t dims() const noexcept { return vectors_.dims(); }
  std::size_t pixels() const noexcept { return vectors_.size(); }

  std::span<const double> operator[](std::size_t r) const { return vectors_[r]; }
  std::span<const double> at(std::size_t y, std::size_t x) const { return vectors_[y * width_ + x]; }
  const VectorArray& vectors() const noexcept { return vectors_; }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  VectorArray vectors_;
};

/// Integer label grid: 0 is background, 1..k are foreground classes.
class GridMask {
 public:
  GridMask() = default;
  GridMask(std::size_t height, std::size_t width, int num_classes, std::vector<int> labels)
      : height_(height), width_(width), num_classes_(num_classes), labels_(std::move(labels)) {
    detail::require(height_ > 0 && width_ > 0, ErrorCode::InvalidArgument, "mask needs positive dims");
    detail::require(num_classes_ >= 1, ErrorCode::InvalidArgument, "mask class count must be >= 1");
    detail::require(labels_.size() == height_ * width_, ErrorCode::DimensionMismatch,
                    "mask label count != height * width");
    for (int l : labels_)
      detail::require(l >= 0 && l <= num_classes_, ErrorCode::InvalidArgument, "mask label out of [0, k]");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return labels_.size(); }
  int num_classes() const noexcept { return num_classes_; }

  int operator[](std::size_t r) const { return labels_[r]; }
  int at(std::size_t y, std::size_t x) const { return labels_[y * width_ + x]; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), label));
  }
  /// Pixels carrying any foreground label.
  std::size_t foreground_count() const { return pixels() - count(0); }

  friend bool operator==(const GridMask&, const GridMask&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  int num_classes_ = 1;
  std::vector<int> labels_;
};

/// Row-major grid of finite doubles: distance maps, anomaly scores, posteriors.
class ScalarMap {
 public:
  ScalarMap() = default;
  ScalarMap(std::size_t height, std::size_t width, std::vector<double> values)
      : height_(height), width_(width), values_(std::move(values)) {
    detail::require(height_ > 0 && width_ > 0, ErrorCode::InvalidArgument, "map needs positive dims");
    detail::require(values_.size() == height_ * width_, ErrorCode::DimensionMismatch,
                    "map value count != height * width");
    for (double v : values_) detail::require(std::isfinite(v), ErrorCode::InvalidArgument, "map value not finite");
  }
  ScalarMap(std::size_t height, std::size_t width, double fill)
      : ScalarMap(height, width, std::vector<double>(height * width, fill)) {}

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return values_.size(); }

  double operator[](std::size_t r) const { return values_[r]; }
  double at(std::size_t y, std::size_t x) const { return values_[y * width_ + x]; }
  const std::vector<double>& values() const noexcept { return values_; }

  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double max() const { return *std::max_element(values_.begin(), values_.end()); }

  bool is_probability() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const ScalarMap&, const ScalarMap&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

/// Tied-model dispersion: foreground and background share a centre and differ
/// only in spread, sigma_f < sigma_b. `dim` is the effective dimension d in the
/// density normalizer, decoupled from the feature vector length.
struct TpmParams {
  double sigma_f = 0.31606977062050695;  // 1/sqrt(10.01): with sigma_b = 10, delta = 10
  double sigma_b = 10.0;
  double dim = 1.0;
  double kappa = 0.5;

  void validate() const {
    detail::require(sigma_f > 0.0 && sigma_b > 0.0 && dim > 0.0 && kappa > 0.0, ErrorCode::InvalidArgument,
                    "tpm params must be positive");
    detail::require(std::isfinite(sigma_f) && std::isfinite(sigma_b) && std::isfinite(dim) && std::isfinite(kappa),
                    ErrorCode::InvalidArgument, "tpm params must be finite");
    detail::require(sigma_f < sigma_b, ErrorCode::InvalidArgument, "tied model requires sigma_f < sigma_b");
  }

  /// Δ = 1/σ_F² − 1/σ_B².
  double delta() const { return 1.0 / (sigma_f * sigma_f) - 1.0 / (sigma_b * sigma_b); }
  /// ADNet scale matching this model: Δ/κ, i.e. 2Δ at the default κ = 0.5.
  double alpha() const { return delta() / kappa; }
  /// d·ln(σ_F/σ_B), the normalizer term of the density ratio (always < 0).
  double log_norm_ratio() const { return dim * std::log(sigma_f / sigma_b); }
};

/// Priors (p_F1..p_Fk, p_B).
struct ClassPriors {
  std::vector<double> foreground;
  double background = 0.5;

  static ClassPriors binary(double p_f) { return {{p_f}, 1.0 - p_f}; }

  std::size_t k() const noexcept { return foreground.size(); }
  double foreground_total() const { return std::accumulate(foreground.begin(), foreground.end(), 0.0); }

  void validate() const {
    detail::require(!foreground.empty(), ErrorCode::InvalidArgument, "priors need at least one foreground class");
    auto in_unit = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    detail::require(in_unit(background) && std::all_of(foreground.begin(), foreground.end(), in_unit),
                    ErrorCode::DegeneratePriors, "prior outside [0, 1]");
    detail::require(std::abs(foreground_total() + background - 1.0) <= kSumTol, ErrorCode::DegeneratePriors,
                    "priors do not sum to 1");
  }
};

/// M unit prototypes with mixture weights summing to one.
class PrototypeSet {
 public:
  PrototypeSet() = default;
  PrototypeSet(VectorArray vectors, std::vector<double> weights)
      : vectors_(std::move(vectors)), weights_(std::move(weights)) {
    detail::require(!vectors_.empty(), ErrorCode::InvalidArgument, "prototype set is empty");
    detail::require(weights_.size() == vectors_.size(), ErrorCode::DimensionMismatch,
                    "one weight per prototype required");
    for (std::size_t m = 0; m < vectors_.size(); ++m)
      detail::require(is_unit(vectors_[m]), ErrorCode::NormViolation, "prototype is not unit-norm");
    for (double w : weights_)
      detail::require(std::isfinite(w) && w > 0.0, ErrorCode::InvalidArgument, "prototype weights must be positive");
    detail::require(std::abs(std::accumulate(weights_.begin(), weights_.end(), 0.0) - 1.0) <= kSumTol,
                    ErrorCode::InvalidArgument, "prototype weights do not sum to 1");
  }

  static PrototypeSet single(const Vector& proto) { return {VectorArray::from_rows({proto}), {1.0}}; }

  std::size_t size() const noexcept { return vectors_.size(); }
  std::size_t dims() const noexcept { return vectors_.dims(); }
  std::span<const double> operator[](std::size_t m) const { return vectors_[m]; }
  double weight(std::size_t m) const { return weights_[m]; }
  const VectorArray& vectors() const noexcept { return vectors_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

 private:
  VectorArray vectors_;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Sphere projection and distance/cosine maps

inline constexpr double kZeroNormTol = 1e-12;

inline Vector normalize(std::span<const double> v) {
  double n = norm(v);
  detail::require(n >= kZeroNormTol, ErrorCode::ZeroVector, "cannot normalize a (near) zero vector");
  Vector out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

inline VectorArray normalize_rows(const VectorArray& raw) {
  VectorArray out(raw.size(), raw.dims());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto src = raw[i];
    double n = norm(src);
    detail::require(n >= kZeroNormTol, ErrorCode::ZeroVector, "cannot normalize a (near) zero vector");
    auto dst = out.row(i);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = src[j] / n;
  }
  return out;
}

inline FeatureGrid normalize_to_sphere(const RawGrid& raw) {
  return FeatureGrid(raw.height, raw.width, normalize_rows(raw.vectors));
}

/// Chord distance to the nearest prototype, per pixel.
inline ScalarMap distance_map(const FeatureGrid& features, const PrototypeSet& protos) {
  detail::require(protos.size() > 0, ErrorCode::InvalidArgument, "no prototypes");
  detail::require(features.dims() == protos.dims(), ErrorCode::DimensionMismatch,
                  "feature dims != prototype dims");
  std::vector<double> out(features.pixels());
  detail::parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t r = b; r < e; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t m = 0; m < protos.size(); ++m) best = std::min(best, squared_distance(features[r], protos[m]));
      out[r] = std::sqrt(best);
    }
  });
  return {features.height(), features.width(), std::move(out)};
}

inline ScalarMap distance_map(const FeatureGrid& features, std::span<const double> proto) {
  detail::require(features.dims() == proto.size(), ErrorCode::DimensionMismatch, "feature dims != prototype dims");
  std::vector<double> out(features.pixels());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::sqrt(squared_distance(features[r], proto));
  return {features.height(), features.width(), std::move(out)};
}

/// One distance map per prototype, in prototype order.
inline std::vector<ScalarMap> distance_maps(const FeatureGrid& features, const VectorArray& protos) {
  detail::require(features.dims() == protos.dims(), ErrorCode::DimensionMismatch, "feature dims != prototype dims");
  std::vector<ScalarMap> maps;
  maps.reserve(protos.size());
  for (std::size_t m = 0; m < protos.size(); ++m) maps.push_back(distance_map(features, protos[m]));
  return maps;
}

/// Pointwise minimum over maps of equal shape.
inline ScalarMap min_map(const std::vector<ScalarMap>& maps) {
  detail::require(!maps.empty(), ErrorCode::InvalidArgument, "no maps");
  std::vector<double> out = maps.front().values();
  for (const auto& m : maps) {
    detail::require(m.height() == maps.front().height() && m.width() == maps.front().width(),
                    ErrorCode::DimensionMismatch, "map shapes differ");
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = std::min(out[r], m[r]);
  }
  return {maps.front().height(), maps.front().width(), std::move(out)};
}

inline ScalarMap cosine_map(const FeatureGrid& features, std::span<const double> proto) {
  detail::require(features.dims() == proto.size(), ErrorCode::DimensionMismatch, "feature dims != prototype dims");
  std::vector<double> out(features.pixels());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = dot(features[r], proto);
  return {features.height(), features.width(), std::move(out)};
}

// ---------------------------------------------------------------------------
// Resampling. Target pixel i has its centre at source coordinate
// (i + 0.5)·(src/dst) − 0.5.

namespace detail {

struct Tap {
  std::size_t lo, hi;
  double frac;  // weight of hi
};

inline std::vector<Tap> bilinear_taps(std::size_t src, std::size_t dst) {
  std::vector<Tap> taps(dst);
  double scale = static_cast<double>(src) / static_cast<double>(dst);
  double max_coord = static_cast<double>(src - 1);
  for (std::size_t i = 0; i < dst; ++i) {
    double c = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, max_coord);
    double f = std::floor(c);
    auto lo = static_cast<std::size_t>(f);
    taps[i] = {lo, std::min(lo + 1, src - 1), c - f};
  }
  return taps;
}

inline double lerp_exact(double a, double b, double t) {
  // Zero weight returns the sample untouched so same-size resampling is bitwise identity.
  if (t == 0.0) return a;
  return a * (1.0 - t) + b * t;
}

}  // namespace detail

inline ScalarMap bilinear_upsample(const ScalarMap& map, std::size_t target_h, std::size_t target_w) {
  detail::require(target_h >= map.height() && target_w >= map.width(), ErrorCode::InvalidTarget,
                  "upsample target smaller than source");
  auto ty = detail::bilinear_taps(map.height(), target_h);
  auto tx = detail::bilinear_taps(map.width(), target_w);
  std::vector<double> out(target_h * target_w);
  for (std::size_t y = 0; y < target_h; ++y) {
    for (std::size_t x = 0; x < target_w; ++x) {
      double top = detail::lerp_exact(map.at(ty[y].lo, tx[x].lo), map.at(ty[y].lo, tx[x].hi), tx[x].frac);
      double bot = detail::lerp_exact(map.at(ty[y].hi, tx[x].lo), map.at(ty[y].hi, tx[x].hi), tx[x].frac);
      out[y * target_w + x] = detail::lerp_exact(top, bot, ty[y].frac);
    }
  }
  return {target_h, target_w, std::move(out)};
}

/// Channel-wise bilinear upsampling of a feature grid. The result is generally
/// off the sphere, hence a RawGrid.
inline RawGrid upsample_features(const FeatureGrid& features, std::size_t target_h, std::size_t target_w) {
  detail::require(target_h >= features.height() && target_w >= features.width(), ErrorCode::InvalidTarget,
                  "upsample target smaller than source");
  auto ty = detail::bilinear_taps(features.height(), target_h);
  auto tx = detail::bilinear_taps(features.width(), target_w);
  const std::size_t dims = features.dims();
  VectorArray out(target_h * target_w, dims);
  for (std::size_t y = 0; y < target_h; ++y) {
    for (std::size_t x = 0; x < target_w; ++x) {
      auto a = features.at(ty[y].lo, tx[x].lo), b = features.at(ty[y].lo, tx[x].hi);
      auto c = features.at(ty[y].hi, tx[x].lo), d = features.at(ty[y].hi, tx[x].hi);
      auto dst = out.row(y * target_w + x);
      for (std::size_t j = 0; j < dims; ++j) {
        double top = detail::lerp_exact(a[j], b[j], tx[x].frac);
        double bot = detail::lerp_exact(c[j], d[j], tx[x].frac);
        dst[j] = detail::lerp_exact(top, bot, ty[y].frac);
      }
    }
  }
  return {target_h, target_w, std::move(out)};
}

/// Nearest-neighbour label sampling: each target pixel takes the label of the
/// source pixel containing its centre, floor((i + 0.5)·src/dst).
inline GridMask downsample_mask(const GridMask& mask, std::size_t target_h, std::size_t target_w) {
  detail::require(target_h > 0 && target_w > 0 && target_h <= mask.height() && target_w <= mask.width(),
                  ErrorCode::InvalidTarget, "downsample target must be within (0, source]");
  auto pick = [](std::size_t src, std::size_t dst) {
    std::vector<std::size_t> idx(dst);
    double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i)
      idx[i] = std::min(src - 1, static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * scale)));
    return idx;
  };
  auto iy = pick(mask.height(), target_h);
  auto ix = pick(mask.width(), target_w);
  std::vector<int> out(target_h * target_w);
  for (std::size_t y = 0; y < target_h; ++y)
    for (std::size_t x = 0; x < target_w; ++x) out[y * target_w + x] = mask.at(iy[y], ix[x]);
  return {target_h, target_w, mask.num_classes(), std::move(out)};
}

}  // namespace tpm
