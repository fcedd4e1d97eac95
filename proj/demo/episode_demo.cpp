// Compares prior sources on synthetic support/query episodes of one "organ".

#include <cstdio>
#include <vector>

#include "tpm/tpm.hpp"

using namespace tpm;

namespace {

SceneConfig organ_scene(std::uint64_t seed, double loc) {
  SceneConfig c;
  c.grid_h = c.grid_w = 32;
  c.dims = 16;
  c.sigma_fg = 0.4;
  c.uniform_background = true;
  c.proto_seed = 42;
  c.seed = seed;
  c.slice_loc = loc;
  c.fg_fraction = 0.05 + 0.3 * loc * loc;
  return c;
}

}  // namespace

int main() {
  const TpmParams params{0.3, 1.0, 2.0, 0.5};
  detail::Rng rng(1);

  EstimatorInputs est;
  EpisodeMethod rec_method;
  for (std::uint64_t i = 0; i < 30; ++i) {
    Scene s = gen_scene(organ_scene(1000 + 2 * i, 0.5));
    Scene q = gen_scene(organ_scene(1001 + 2 * i, rng.uniform()));
    est.records.push_back(make_record(Frame::from(s), Frame::from(q), rec_method, params));
  }
  est.linest = lin_est_fit(est.records);
  std::printf("LinEst: icp = %.4f + %.3g * fg_count + %.4f * slice_loc\n\n", est.linest->intercept,
              est.linest->coef_fg_count, est.linest->coef_slice_loc);

  const PriorSource sources[] = {PriorSource::AdnetFixed, PriorSource::AvgEst, PriorSource::LinEst, PriorSource::Ocp};
  std::printf("%-14s %8s %8s %8s\n", "method", "dice", "ce", "prior");
  for (ProtoMode pm : {ProtoMode::Single, ProtoMode::Multi}) {
    for (PriorSource src : sources) {
      EpisodeMethod m;
      m.prior = src;
      m.protos = pm;
      m.k = 3;
      double dice = 0.0, ce = 0.0, prior = 0.0;
      const int n = 20;
      for (int i = 0; i < n; ++i) {
        Scene s = gen_scene(organ_scene(5000 + 2 * i, 0.5));
        Scene q = gen_scene(organ_scene(5001 + 2 * i, (i + 0.5) / n));
        EpisodeReport r = run_episode(s, q, m, params, est);
        dice += r.mean_dice;
        ce += r.ce;
        prior += r.prior;
      }
      std::printf("%-14s %8.4f %8.4f %8.4f\n", m.name().c_str(), dice / n, ce / n, prior / n);
    }
  }
  return 0;
}
