// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "tpm/detail/random.hpp"
#include "tpm/episode.hpp"
#include "tpm/io.hpp"
#include "tpm/tpm.hpp"

using namespace tpm;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

FeatureGrid random_grid(detail::Rng& rng, std::size_t n, std::size_t dims) {
  VectorArray v(n, dims);
  for (std::size_t i = 0; i < n; ++i) {
    Vector u = rng.unit_vector(dims);
    std::copy(u.begin(), u.end(), v.row(i).begin());
  }
  return {1, n, std::move(v)};
}

TpmParams random_params(detail::Rng& rng) {
  TpmParams p;
  p.sigma_f = 0.1 + 0.9 * rng.uniform();
  p.sigma_b = p.sigma_f * (1.05 + 4.0 * rng.uniform());
  p.dim = static_cast<double>(1 + rng.index(8));
  return p;
}

double max_abs_diff(const ScalarMap& a, const ScalarMap& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1 ------------------------------------------------------------------------
Outcome adnet_equivalence() {
  auto t0 = std::chrono::steady_clock::now();
  detail::Rng rng(1);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    TpmParams p = random_params(rng);
    ClassPriors pr = ClassPriors::binary(0.01 + 0.98 * rng.uniform());
    const std::size_t dims = 2 + rng.index(62);
    FeatureGrid f = random_grid(rng, 1000, dims);
    Vector proto = rng.unit_vector(dims);
    ScalarMap tpm_post = tpm_sp_posterior(f, proto, p, pr);
    AdnetParams a = tied_to_adnet(p, pr);
    ScalarMap ad_post = adnet_posterior(anomaly_score_map(f, proto, a.alpha), a);
    worst = std::max(worst, max_abs_diff(tpm_post, ad_post));
  }
  double secs = seconds_since(t0);
  return {worst < 1e-12 && secs < 5.0, fmt("max |diff| = %.3g, %.2f s", worst, secs)};
}

// 2 ------------------------------------------------------------------------
Outcome adnet_regime() {
  TpmParams p{1.0 / std::sqrt(10.25), 2.0, 1.0, 0.5};
  while (p.delta() != 10.0) p.sigma_f = std::nextafter(p.sigma_f, p.delta() > 10.0 ? 1.0 : 0.0);
  AdnetParams a = tied_to_adnet(p, ClassPriors::binary(0.5));
  AdnetParams d = tied_to_adnet(TpmParams{}, ClassPriors::binary(0.5));
  bool ok = a.alpha == 20.0 && a.kappa == 0.5 && std::abs(d.alpha - 20.0) < 1e-12 && d.kappa == 0.5;
  return {ok, fmt("alpha = %.17g, kappa = %g; defaults alpha = %.17g", a.alpha, a.kappa, d.alpha)};
}

// 3 ------------------------------------------------------------------------
Outcome normalization() {
  double worst_sum = 0.0, worst_softmax = 0.0;
  detail::Rng rng(3);
  for (std::uint64_t s = 0; s < 50; ++s) {
    SceneConfig cfg;
    cfg.grid_h = cfg.grid_w = 24;
    cfg.k_fg = 1 + static_cast<int>(s % 3);
    cfg.fg_fraction = 0.1;
    cfg.seed = s;
    Scene scene = gen_scene(cfg);
    const std::size_t k = static_cast<std::size_t>(cfg.k_fg);
    TpmParams p = random_params(rng);
    std::vector<double> raw(k + 1);
    double total = 0.0;
    for (double& x : raw) total += (x = 0.05 + rng.uniform());
    ClassPriors pr{{}, raw[k] / total};
    for (std::size_t i = 0; i < k; ++i) pr.foreground.push_back(raw[i] / total);
    auto maps = tpm_mc_posterior(scene.features, scene.prototypes_true, p, pr);
    for (std::size_t r = 0; r < scene.features.pixels(); ++r) {
      double sum = 0.0;
      for (const auto& m : maps) sum += m[r];
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
    }

    // p_B = 0 against a plain softmax over −D²/(2σ_F²) + ln p_Fi.
    ClassPriors zero{pr.foreground, 0.0};
    for (double& x : zero.foreground) x /= pr.foreground_total();
    auto soft = tpm_mc_posterior(scene.features, scene.prototypes_true, p, zero);
    for (std::size_t r = 0; r < scene.features.pixels(); ++r) {
      std::vector<double> logits(k);
      double mx = -1e300;
      for (std::size_t i = 0; i < k; ++i) {
        logits[i] = -squared_distance(scene.features[r], scene.prototypes_true[i]) / (2 * p.sigma_f * p.sigma_f) +
                    std::log(zero.foreground[i]);
        mx = std::max(mx, logits[i]);
      }
      double z = 0.0;
      for (double l : logits) z += std::exp(l - mx);
      for (std::size_t i = 0; i < k; ++i)
        worst_softmax = std::max(worst_softmax, std::abs(soft[i + 1][r] - std::exp(logits[i] - mx) / z));
    }
  }
  return {worst_sum < 1e-9 && worst_softmax < 1e-10,
          fmt("max |sum - 1| = %.3g, max |softmax diff| = %.3g", worst_sum, worst_softmax)};
}

// 4 ------------------------------------------------------------------------
Outcome mixture_collapse() {
  detail::Rng rng(4);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    TpmParams p = random_params(rng);
    ClassPriors pr = ClassPriors::binary(0.05 + 0.9 * rng.uniform());
    const std::size_t dims = 2 + rng.index(16);
    FeatureGrid f = random_grid(rng, 500, dims);
    Vector proto = rng.unit_vector(dims);
    ScalarMap sp = tpm_sp_posterior(f, proto, p, pr);
    worst = std::max(worst, max_abs_diff(sp, tpm_mp_posterior(f, PrototypeSet::single(proto), p, pr)));
    PrototypeSet dup(VectorArray::from_rows({proto, proto, proto}), {0.2, 0.5, 0.3});
    worst = std::max(worst, max_abs_diff(sp, tpm_mp_posterior(f, dup, p, pr)));
  }
  return {worst < 1e-12, fmt("max |diff| = %.3g", worst)};
}

// 5 ------------------------------------------------------------------------
Outcome idt_count_matching() {
  detail::Rng rng(5);
  int ok = 0;
  for (int t = 0; t < 100; ++t) {
    std::size_t n = 1 + rng.index(5000);
    std::vector<double> v(n);
    for (double& x : v) x = 2.0 * rng.uniform();
    std::size_t f = rng.index(n + 1);
    ScalarMap d(1, n, v);
    double thr = ideal_distance_threshold(d, f).threshold;
    std::size_t below = 0;
    for (double x : v) below += x < thr;
    ok += below == f;
  }
  return {ok == 100, fmt("%d/100 maps matched", ok)};
}

// 6 ------------------------------------------------------------------------
Outcome icp_boundary() {
  detail::Rng rng(6);
  double worst_post = 0.0, worst_inv = 0.0;
  for (int t = 0; t < 100; ++t) {
    TpmParams p;
    p.sigma_f = 0.3 + 0.7 * rng.uniform();
    p.sigma_b = p.sigma_f * (1.2 + rng.uniform() * (3.0 / p.sigma_f - 1.2));
    p.dim = static_cast<double>(1 + rng.index(4));
    double td = 0.05 + 1.95 * rng.uniform();
    ClassPriors pr = icp_priors(td, p);
    ScalarMap post = tpm_sp_posterior_from_distance(ScalarMap(1, 1, td), p, pr);
    worst_post = std::max(worst_post, std::abs(post[0] - 0.5));
    worst_inv = std::max(worst_inv, std::abs(boundary_distance(p, pr) - td));
  }
  return {worst_post < 1e-9 && worst_inv < 1e-9,
          fmt("max |post - 0.5| = %.3g, max |D_b - T| = %.3g", worst_post, worst_inv)};
}

// 7 ------------------------------------------------------------------------
// Overlapping, imbalanced scenes; distances to the true prototype.
Outcome fig2_reproduction() {
  auto t0 = std::chrono::steady_clock::now();
  const TpmParams params;
  const std::vector<double> grid = linspace(0.005, 2.0, 400);
  int ideal_ge = 0, differ = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    SceneConfig cfg;
    cfg.fg_fraction = 0.2;
    cfg.sigma_fg = 0.4;
    cfg.sigma_bg = 1.0;
    cfg.seed = 700 + s;
    Scene scene = gen_scene(cfg);
    ScalarMap d = distance_map(scene.features, scene.prototypes_true[0]);
    SweepResult r = threshold_sweep(d, scene.truth, params, grid);
    std::size_t ce_idx = 0;
    while (grid[ce_idx] != r.argmin_ce) ++ce_idx;
    ideal_ge += r.ideal_dice >= r.dice[ce_idx];
    differ += r.argmin_ce != r.argmax_dice;
  }
  double secs = seconds_since(t0);
  return {ideal_ge >= 18 && differ >= 15 && secs < 60.0,
          fmt("Dice(ideal) >= Dice(argmin CE) in %d/20, argmin CE != argmax Dice in %d/20, %.2f s", ideal_ge, differ,
              secs)};
}

// Scenes of one "organ" share prototypes; support and query are different
// draws around them.
SceneConfig organ_scene(std::uint64_t organ, std::uint64_t seed) {
  SceneConfig cfg;
  cfg.grid_h = cfg.grid_w = 32;
  cfg.proto_seed = organ;
  cfg.seed = seed;
  return cfg;
}

// 8 ------------------------------------------------------------------------
Outcome mp_benefit() {
  const TpmParams params{0.2, 1.0, 2.0, 0.5};
  auto clustered = [](std::uint64_t organ, std::uint64_t seed, double frac) {
    SceneConfig cfg = organ_scene(organ, seed);
    cfg.clusters_per_class = 3;
    cfg.sigma_fg = 0.1;
    cfg.min_proto_chord = 1.0;
    cfg.fg_fraction = frac;
    cfg.slice_loc = std::clamp((frac - 0.1) / 0.2, 0.0, 1.0);
    return cfg;
  };
  double sp_sum = 0.0, mp_sum = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const std::uint64_t organ = 800 + s;
    EpisodeMethod sp{PriorSource::LinEst, ProtoMode::Single, 1, 0, false};
    EpisodeMethod mp{PriorSource::LinEst, ProtoMode::Multi, 5, s, false};
    EstimatorInputs sp_est, mp_est;
    for (std::uint64_t j = 0; j < 8; ++j) {
      double frac = 0.1 + 0.2 * static_cast<double>(j) / 7.0;
      Frame sup = Frame::from(gen_scene(clustered(organ, 10000 * s + 2 * j, frac)));
      Frame qry = Frame::from(gen_scene(clustered(organ, 10000 * s + 2 * j + 1, frac)));
      sp_est.records.push_back(make_record(sup, qry, sp, params));
      mp_est.records.push_back(make_record(sup, qry, mp, params));
    }
    double frac = 0.1 + 0.2 * static_cast<double>(s % 5) / 4.0;
    Scene support = gen_scene(clustered(organ, 10000 * s + 100, frac));
    Scene query = gen_scene(clustered(organ, 10000 * s + 101, frac));
    sp_sum += run_episode(support, query, sp, params, sp_est).mean_dice;
    mp_sum += run_episode(support, query, mp, params, mp_est).mean_dice;
  }
  return {mp_sum >= sp_sum, fmt("mean Dice mp(5)/linest = %.4f, sp/linest = %.4f", mp_sum / 20, sp_sum / 20)};
}

// 9 ------------------------------------------------------------------------
// Each scene is a volume: one mid-volume support slice and ten query slices
// along it. The foreground share grows with slice location, scales with a
// per-volume organ size (visible through the support |F|) and carries
// per-slice jitter that only the oracle sees.
Outcome oracle_dominance() {
  const TpmParams params{0.3, 1.0, 2.0, 0.5};
  const std::uint64_t organ = 900;
  auto slice = [&](std::uint64_t seed, double size, double loc, double jitter) {
    SceneConfig cfg = organ_scene(organ, seed);
    cfg.dims = 16;
    cfg.uniform_background = true;
    cfg.sigma_fg = 0.4;
    cfg.slice_loc = loc;
    cfg.fg_fraction = jitter * size * (0.1 + 0.25 * loc * loc);
    return cfg;
  };
  detail::Rng rng(9);
  auto jitter = [&] { return 1.0 + 0.5 * (2.0 * rng.uniform() - 1.0); };

  EstimatorInputs est;
  for (std::uint64_t j = 0; j < 40; ++j) {
    double size = 0.5 + rng.uniform(), loc = rng.uniform();
    Frame sup = Frame::from(gen_scene(slice(2 * j, size, 0.5, 1.0)));
    Frame qry = Frame::from(gen_scene(slice(2 * j + 1, size, loc, jitter())));
    est.records.push_back(make_record(sup, qry, EpisodeMethod{}, params));
  }
  est.linest = lin_est_fit(est.records);

  const PriorSource sources[3] = {PriorSource::Ocp, PriorSource::LinEst, PriorSource::AvgEst};
  const int queries = 10;
  double sum[3] = {0.0, 0.0, 0.0};
  for (std::uint64_t s = 0; s < 20; ++s) {
    double size = 0.5 + rng.uniform();
    Scene support = gen_scene(slice(5000 + 100 * s, size, 0.5, 1.0));
    for (int q = 0; q < queries; ++q) {
      double loc = (q + 0.5) / queries;
      Scene query = gen_scene(slice(5001 + 100 * s + static_cast<std::uint64_t>(q), size, loc, jitter()));
      for (int m = 0; m < 3; ++m) {
        EpisodeMethod method;
        method.prior = sources[m];
        sum[m] += run_episode(support, query, method, params, est).mean_dice / queries;
      }
    }
  }
  return {sum[0] >= sum[1] && sum[1] >= sum[2],
          fmt("mean Dice ocp = %.4f, linest = %.4f, avgest = %.4f", sum[0] / 20, sum[1] / 20, sum[2] / 20)};
}

// 10 -----------------------------------------------------------------------
void add_cluster(detail::Rng& rng, std::vector<Vector>& out, const Vector& centre, double sigma, int n) {
  for (int i = 0; i < n; ++i) {
    Vector v = centre;
    for (double& x : v) x += sigma * rng.normal();
    out.push_back(normalize(v));
  }
}

Outcome em_properties() {
  std::vector<std::string> bad;
  double worst_drop = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    detail::Rng rng(5000 + seed);
    std::vector<Vector> rows;
    for (int c = 0; c < 3; ++c) add_cluster(rng, rows, rng.unit_vector(4), 0.25, 30 + 10 * c);
    EmConfig cfg;
    cfg.k = 4;
    cfg.sigma_f = 0.3;
    cfg.max_iters = 30;
    cfg.tol = 1e-14;
    cfg.seed = seed;
    cfg.project_to_sphere = false;
    EmTrace t = em_fit_trace(VectorArray::from_rows(rows), cfg);
    for (std::size_t i = 1; i < t.log_likelihood.size(); ++i)
      worst_drop = std::max(worst_drop, t.log_likelihood[i - 1] - t.log_likelihood[i]);
  }
  if (worst_drop > 1e-9) bad.push_back(fmt("log-likelihood dropped by %.3g", worst_drop));

  detail::Rng rng(10);
  std::vector<Vector> rows;
  add_cluster(rng, rows, normalize(Vector{1, 1, 0}), 0.3, 64);
  EmConfig one;
  one.k = 1;
  PrototypeSet p1 = em_fit(VectorArray::from_rows(rows), one);
  Vector pooled = map_pool(FeatureGrid(8, 8, VectorArray::from_rows(rows)), GridMask(8, 8, 1, std::vector<int>(64, 1)));
  double k1 = std::sqrt(squared_distance(p1[0], pooled));
  if (k1 > 1e-9) bad.push_back(fmt("k=1 differs from map_pool by %.3g", k1));

  std::vector<Vector> two;
  Vector a = normalize(Vector{1.0, 0.2, 0.1}), b = normalize(Vector{-0.9, 0.3, -0.2});
  add_cluster(rng, two, a, 0.03, 30);
  add_cluster(rng, two, b, 0.03, 70);
  EmConfig cfg;
  cfg.k = 2;
  cfg.sigma_f = 0.1;
  PrototypeSet p2 = em_fit(VectorArray::from_rows(two), cfg);
  std::size_t ia = squared_distance(p2[0], a) < squared_distance(p2[1], a) ? 0 : 1;
  double wa = p2.weight(ia), wb = p2.weight(1 - ia);
  double ca = std::sqrt(squared_distance(p2[ia], a)), cb = std::sqrt(squared_distance(p2[1 - ia], b));
  if (std::abs(wa - 0.3) > 0.05 || std::abs(wb - 0.7) > 0.05 || ca > 0.1 || cb > 0.1)
    bad.push_back(fmt("30/70 recovery off: weights %.3f/%.3f, chords %.3f/%.3f", wa, wb, ca, cb));

  std::string detail = fmt("max log-likelihood drop %.3g, k=1 vs map_pool %.3g, weights %.3f/%.3f", worst_drop, k1, wa, wb);
  for (const auto& s : bad) detail += "; " + s;
  return {bad.empty(), detail};
}

// 11 -----------------------------------------------------------------------
Outcome format_round_trips() {
  std::vector<std::string> bad;
  detail::Rng rng(11);
  VectorArray v(12 * 9, 7);
  for (std::size_t i = 0; i < v.size(); ++i) {
    Vector u = rng.unit_vector(7);
    std::copy(u.begin(), u.end(), v.row(i).begin());
  }
  FeatureGrid g(12, 9, std::move(v));
  std::string bytes = io::encode_feature_grid(g);
  FeatureGrid once = io::decode_feature_grid(bytes);
  if (io::encode_feature_grid(once) != bytes) bad.push_back("feature grid bytes changed on re-encode");
  if (!(io::decode_feature_grid(io::encode_feature_grid(once)).vectors() == once.vectors()))
    bad.push_back("feature grid values changed on round trip");

  std::vector<int> labels(12 * 9);
  for (int& l : labels) l = static_cast<int>(rng.index(4));
  GridMask m(12, 9, 3, labels);
  if (!(io::decode_mask(io::encode_mask(m)) == m)) bad.push_back("mask changed on round trip");

  const std::string dir = TPM_TEST_DATA_DIR;
  try {
    FeatureGrid golden = io::read_feature_grid(dir + "/golden_grid.tpfg");
    const double f6 = static_cast<float>(0.6), f8 = static_cast<float>(0.8);
    std::vector<double> expected{1, 0, 0, 0, 0, 1, 0, 0, 0.5, 0.5, 0.5, 0.5, f6, f8, 0, 0, 0, 0, -f8, f6, -0.5, 0.5, -0.5, 0.5};
    if (golden.height() != 2 || golden.width() != 3 || golden.vectors().data() != expected)
      bad.push_back("golden grid parsed to different values");
    GridMask gm = io::read_mask(dir + "/golden_mask.tpmk");
    if (!(gm == GridMask(2, 3, 2, {0, 1, 2, 2, 1, 0}))) bad.push_back("golden mask parsed to different labels");
  } catch (const Error& e) {
    bad.push_back(std::string("golden parse failed: ") + e.what());
  }
  std::string detail = "grid and mask bit-exact, golden files equal";
  if (!bad.empty()) {
    detail.clear();
    for (const auto& s : bad) detail += (detail.empty() ? "" : "; ") + s;
  }
  return {bad.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"tied sp = adnet", adnet_equivalence},
      {"adnet default regime", adnet_regime},
      {"multi-class normalization", normalization},
      {"mixture collapse", mixture_collapse},
      {"idt count matching", idt_count_matching},
      {"icp boundary", icp_boundary},
      {"ce vs dice threshold curves", fig2_reproduction},
      {"multi-prototype benefit", mp_benefit},
      {"oracle dominance", oracle_dominance},
      {"em properties", em_properties},
      {"format round trips", format_round_trips},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
