#pragma once

// Synthetic spherical-Gaussian scenes: foreground pixels scatter tightly
// around class prototypes, background pixels scatter broadly around the same
// prototypes (tied centres), everything projected onto the unit sphere.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <vector>

#include "tpm/core.hpp"
#include "tpm/detail/random.hpp"

namespace tpm {

struct SceneConfig {
  std::size_t grid_h = 64;
  std::size_t grid_w = 64;
  std::size_t dims = 3;
  int k_fg = 1;
  int clusters_per_class = 1;
  double sigma_fg = 0.2;
  double sigma_bg = 1.0;
  double fg_fraction = 0.2;  // per foreground class
  std::uint64_t seed = 0;
  // Background drawn uniformly on the sphere instead of around the prototypes.
  bool uniform_background = false;
  // Relative slice position carried as metadata for prior estimators.
  double slice_loc = 0.5;
  double min_proto_chord = 0.5;
  // When set, prototypes come from this seed alone, so scenes with different
  // `seed`s share their centres (support/query pairs of one "organ").
  std::optional<std::uint64_t> proto_seed;

  std::size_t pixels() const { return grid_h * grid_w; }
  std::size_t fg_count_per_class() const {
    return static_cast<std::size_t>(std::llround(fg_fraction * static_cast<double>(pixels())));
  }

  void validate() const {
    auto bad = [](const char* what) { throw Error(ErrorCode::ConfigInvalid, what); };
    if (grid_h == 0 || grid_w == 0) bad("grid dims must be positive");
    if (dims < 2) bad("dims must be >= 2");
    if (k_fg < 1 || clusters_per_class < 1) bad("class and cluster counts must be positive");
    if (!(sigma_fg >= 0.0) || !(sigma_bg > 0.0) || !(sigma_fg < sigma_bg)) bad("need 0 <= sigma_fg < sigma_bg");
    if (!(fg_fraction > 0.0 && fg_fraction < 1.0)) bad("fg_fraction must be in (0, 1)");
    if (!(k_fg * fg_fraction < 1.0)) bad("k_fg * fg_fraction must be < 1");
    if (static_cast<std::size_t>(k_fg) * fg_count_per_class() > pixels()) bad("foreground counts exceed pixels");
    if (!(slice_loc >= 0.0 && slice_loc <= 1.0)) bad("slice_loc must be in [0, 1]");
  }
};

struct Scene {
  FeatureGrid features;
  GridMask truth;
  // Class-major: class i (1-based), cluster c sits at (i - 1) * clusters_per_class + c.
  VectorArray prototypes_true;
  SceneConfig meta;
};

namespace detail {

inline VectorArray sample_prototypes(Rng& rng, std::size_t count, std::size_t dims, double min_chord) {
  VectorArray out(count, dims);
  std::size_t have = 0;
  for (int attempt = 0; have < count; ++attempt) {
    if (attempt > 100000) throw Error(ErrorCode::ConfigInvalid, "cannot place prototypes with the requested separation");
    Vector v = rng.unit_vector(dims);
    bool ok = true;
    for (std::size_t j = 0; j < have && ok; ++j) ok = std::sqrt(squared_distance(v, out[j])) >= min_chord;
    if (!ok) continue;
    std::copy(v.begin(), v.end(), out.row(have).begin());
    ++have;
  }
  return out;
}

inline void scatter_on_sphere(Rng& rng, std::span<const double> centre, double sigma, std::span<double> dst) {
  for (;;) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < dst.size(); ++j) {
      dst[j] = centre[j] + sigma * rng.normal();
      n2 += dst[j] * dst[j];
    }
    if (n2 >= 1e-24) {
      double n = std::sqrt(n2);
      for (double& x : dst) x /= n;
      return;
    }
  }
}

}  // namespace detail

/// Deterministic in `cfg` (including the seed). Each foreground class gets
/// exactly round(fg_fraction · pixels) pixels at shuffled positions.
inline Scene gen_scene(const SceneConfig& cfg) {
  cfg.validate();
  detail::Rng rng(cfg.seed);
  const std::size_t n = cfg.pixels();
  const std::size_t clusters = static_cast<std::size_t>(cfg.clusters_per_class);
  const std::size_t n_protos = static_cast<std::size_t>(cfg.k_fg) * clusters;

  Scene scene;
  scene.meta = cfg;
  if (cfg.proto_seed) {
    detail::Rng proto_rng(*cfg.proto_seed);
    scene.prototypes_true = detail::sample_prototypes(proto_rng, n_protos, cfg.dims, cfg.min_proto_chord);
  } else {
    scene.prototypes_true = detail::sample_prototypes(rng, n_protos, cfg.dims, cfg.min_proto_chord);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  std::vector<int> labels(n, 0);
  const std::size_t per_class = cfg.fg_count_per_class();
  for (std::size_t c = 0; c < static_cast<std::size_t>(cfg.k_fg); ++c)
    for (std::size_t i = 0; i < per_class; ++i) labels[order[c * per_class + i]] = static_cast<int>(c + 1);

  VectorArray feats(n, cfg.dims);
  for (std::size_t r = 0; r < n; ++r) {
    auto dst = feats.row(r);
    if (labels[r] != 0) {
      std::size_t proto = static_cast<std::size_t>(labels[r] - 1) * clusters + rng.index(clusters);
      detail::scatter_on_sphere(rng, scene.prototypes_true[proto], cfg.sigma_fg, dst);
    } else if (cfg.uniform_background) {
      Vector v = rng.unit_vector(cfg.dims);
      std::copy(v.begin(), v.end(), dst.begin());
    } else {
      detail::scatter_on_sphere(rng, scene.prototypes_true[rng.index(n_protos)], cfg.sigma_bg, dst);
    }
  }
  scene.features = FeatureGrid(cfg.grid_h, cfg.grid_w, std::move(feats));
  scene.truth = GridMask(cfg.grid_h, cfg.grid_w, cfg.k_fg, std::move(labels));
  return scene;
}

}  // namespace tpm
