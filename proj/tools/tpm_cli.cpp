// tpm: command-line front end for synthetic scenes, prototypes, tied-model
// segmentation, threshold sweeps and prior estimators.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tpm/io.hpp"
#include "tpm/tpm.hpp"

using namespace tpm;
namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitIo = 3;

int exit_code(ErrorCode c) {
  switch (c) {
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::BadVersion:
    case ErrorCode::TruncatedPayload:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

void fail(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

void add_model_flags(CLI::App* cmd, TpmParams& p) {
  cmd->add_option("--sigma-f", p.sigma_f, "foreground std")->capture_default_str();
  cmd->add_option("--sigma-b", p.sigma_b, "background std")->capture_default_str();
  cmd->add_option("--dim", p.dim, "effective dimension d")->capture_default_str();
  cmd->add_option("--kappa", p.kappa, "sigmoid steepness")->capture_default_str();
}

struct ReportOut {
  std::string path;
  std::string format = "json";

  void add(CLI::App* cmd) {
    cmd->add_option("--report", path, "report file (stdout when omitted)");
    cmd->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  }

  template <class R>
  void emit(const R& r) const {
    io::Format f = io::parse_format(format);
    if (path.empty())
      std::fputs(io::render_report(r, f).c_str(), stdout);
    else
      io::emit_report(r, f, path);
  }
};

// ---------------------------------------------------------------------------

struct SynthArgs {
  SceneConfig cfg;
  std::uint64_t proto_seed = 0;
  bool shared_protos = false;
  std::string features, mask, protos;
};

void run_synth(SynthArgs& a) {
  if (a.shared_protos) a.cfg.proto_seed = a.proto_seed;
  Scene s = gen_scene(a.cfg);
  io::write_feature_grid(s.features, a.features);
  io::write_mask(s.truth, a.mask);
  if (!a.protos.empty()) {
    std::size_t n = s.prototypes_true.size();
    io::write_json(io::prototypes_to_json(s.prototypes_true, std::vector<double>(n, 1.0 / static_cast<double>(n))),
                   a.protos);
  }
}

struct ProtosArgs {
  TpmParams params;
  std::string features, mask, out;
  int k = 1;
  std::uint64_t seed = 0;
  bool per_class = false;
  bool upsampled = false;
};

void run_protos(const ProtosArgs& a) {
  Frame f{io::read_feature_grid(a.features), io::read_mask(a.mask), 0.5};
  EpisodeMethod m;
  m.pool_upsampled = a.upsampled;
  m.em_seed = a.seed;
  if (a.per_class) {
    VectorArray v = extract_class_prototypes(f, m);
    io::write_json(io::prototypes_to_json(v, std::vector<double>(v.size(), 1.0 / static_cast<double>(v.size()))),
                   a.out);
    return;
  }
  m.protos = a.k == 1 ? ProtoMode::Single : ProtoMode::Multi;
  m.k = a.k;
  io::write_json(io::to_json(extract_prototypes(f, m, a.params)), a.out);
}

struct SegmentArgs {
  TpmParams params;
  std::string features, protos, truth, records, linest, out_mask;
  std::string mode = "sp";
  std::string prior_source = "ocp";
  std::optional<std::size_t> support_fg_count;
  std::optional<double> slice_loc;
  ReportOut report;
};

double estimated_prior(const SegmentArgs& a, PriorSource src) {
  std::vector<EpisodeRecord> recs;
  if (!a.records.empty()) recs = io::records_from_json(io::read_json(a.records));
  if (src == PriorSource::AvgEst) {
    if (a.records.empty()) fail("--prior-source avgest needs --records");
    return avg_est(recs);
  }
  if (a.linest.empty() && a.records.empty()) fail("--prior-source linest needs --linest or --records");
  if (!a.support_fg_count || !a.slice_loc) fail("--prior-source linest needs --support-fg-count and --slice-loc");
  LinEstModel model = a.linest.empty() ? lin_est_fit(recs) : io::linest_from_json(io::read_json(a.linest));
  return lin_est_predict(model, *a.support_fg_count, *a.slice_loc);
}

void run_segment(const SegmentArgs& a) {
  a.params.validate();
  FeatureGrid q = io::read_feature_grid(a.features);
  io::json pj = io::read_json(a.protos);
  const PriorSource src = parse_prior_source(a.prior_source);
  std::optional<GridMask> truth;
  if (!a.truth.empty()) truth = io::read_mask(a.truth);
  if (src == PriorSource::Ocp && !truth) fail("--prior-source ocp needs --truth");
  const std::size_t out_h = truth ? truth->height() : q.height(), out_w = truth ? truth->width() : q.width();

  EpisodeReport rep;
  rep.method = a.prior_source + "/" + a.mode;
  rep.ce = std::numeric_limits<double>::quiet_NaN();

  if (a.mode == "mc") {
    VectorArray protos = io::prototype_vectors_from_json(pj);
    const std::size_t k = protos.size();
    auto maps = query_distances(q, protos, out_h, out_w);
    if (src == PriorSource::Ocp)
      rep.prior = ideal_priors_from_llr(tpm_mc_foreground_log_ratio(maps, a.params), truth->foreground_count())
                      .foreground[0];
    else if (src != PriorSource::AdnetFixed)
      rep.prior = estimated_prior(a, src);
    ClassPriors priors{std::vector<double>(k, rep.prior / static_cast<double>(k)), 1.0 - rep.prior};
    auto post = tpm_mc_posterior_from_distances(maps, a.params, priors);
    rep.prediction = predict_mask(post);
    rep.num_prototypes = k;
    if (truth) {
      if (truth->num_classes() != static_cast<int>(k)) fail("truth class count differs from prototype count");
      for (int c = 1; c <= static_cast<int>(k); ++c) rep.dice.push_back(dice(rep.prediction, *truth, c));
      std::vector<double> fg(post[0].pixels());
      for (std::size_t r = 0; r < fg.size(); ++r) fg[r] = std::clamp(1.0 - post[0][r], 0.0, 1.0);
      rep.ce = cross_entropy(ScalarMap(out_h, out_w, std::move(fg)), *truth);
    }
  } else {
    if (a.mode != "sp" && a.mode != "mp") fail("--mode must be sp, mp or mc");
    PrototypeSet protos = io::prototypes_from_json(pj);
    if (a.mode == "sp" && protos.size() != 1) fail("--mode sp needs exactly one prototype");
    auto maps = query_distances(q, protos.vectors(), out_h, out_w);
    std::optional<GridMask> bin;
    if (truth) bin = binarize(*truth);
    ClassPriors priors = ClassPriors::binary(0.5);
    if (src == PriorSource::Ocp)
      priors = oracle_priors(maps, protos, *bin, a.params);
    else if (src != PriorSource::AdnetFixed)
      priors = ClassPriors::binary(estimated_prior(a, src));
    rep.prior = priors.foreground[0];
    ScalarMap post = src == PriorSource::AdnetFixed && protos.size() == 1
                         ? adnet_posterior(bilinear_upsample(anomaly_score_map(q, protos[0], a.params.alpha()), out_h, out_w),
                                           tied_to_adnet(a.params, priors))
                         : tpm_mp_posterior_from_distances(maps, protos.weights(), a.params, priors);
    rep.prediction = predict_mask(post);
    rep.num_prototypes = protos.size();
    if (bin) {
      rep.dice = {dice(rep.prediction, *bin, 1)};
      rep.ce = cross_entropy(post, *bin);
    }
  }
  try {
    rep.boundary = boundary_distance(a.params, ClassPriors::binary(rep.prior));
  } catch (const Error&) {
  }
  rep.mean_dice = std::numeric_limits<double>::quiet_NaN();
  if (!rep.dice.empty()) {
    double s = 0.0;
    for (double d : rep.dice) s += d;
    rep.mean_dice = s / static_cast<double>(rep.dice.size());
  }
  if (!a.out_mask.empty()) io::write_mask(rep.prediction, a.out_mask);
  a.report.emit(rep);
}

struct SweepArgs {
  TpmParams params;
  std::string features, protos, truth, out_ce, out_dice;
  std::string axis = "t_d";
  std::optional<double> lo, hi;
  std::size_t n = 200;
  ReportOut report;
};

void run_sweep(const SweepArgs& a) {
  FeatureGrid q = io::read_feature_grid(a.features);
  GridMask truth = io::read_mask(a.truth);
  PrototypeSet protos = io::prototypes_from_json(io::read_json(a.protos));
  ScalarMap d = min_map(query_distances(q, protos.vectors(), truth.height(), truth.width()));
  if (a.n == 0) fail("--n must be positive");
  SweepResult r;
  if (a.axis == "t_d")
    r = threshold_sweep(d, truth, a.params, linspace(a.lo.value_or(0.01), a.hi.value_or(2.0), a.n));
  else if (a.axis == "p_f")
    r = prior_sweep(d, truth, a.params, linspace(a.lo.value_or(0.001), a.hi.value_or(0.999), a.n));
  else
    fail("--axis must be t_d or p_f");
  if (!a.out_ce.empty()) io::write_table(io::curve_table(r, io::Curve::Ce), a.out_ce);
  if (!a.out_dice.empty()) io::write_table(io::curve_table(r, io::Curve::Dice), a.out_dice);
  a.report.emit(r);
}

struct EvalArgs {
  TpmParams params;
  std::string pred, truth;
  std::string support_features, support_mask, query_features, query_mask, records, linest;
  std::string prior_source = "ocp";
  std::string protos_mode = "sp";
  int k = 5;
  std::uint64_t seed = 0;
  double support_slice_loc = 0.5, query_slice_loc = 0.5;
  ReportOut report;
};

void run_eval(const EvalArgs& a) {
  if (!a.pred.empty()) {
    if (a.truth.empty()) fail("--pred needs --truth");
    GridMask p = io::read_mask(a.pred), t = io::read_mask(a.truth);
    EpisodeReport rep;
    rep.method = "mask";
    rep.prediction = p;
    rep.ce = rep.prior = std::numeric_limits<double>::quiet_NaN();
    rep.num_prototypes = 0;
    for (int c = 1; c <= t.num_classes(); ++c) rep.dice.push_back(dice(p, t, c));
    double s = 0.0;
    for (double d : rep.dice) s += d;
    rep.mean_dice = s / static_cast<double>(rep.dice.size());
    a.report.emit(rep);
    return;
  }
  if (a.support_features.empty() || a.support_mask.empty() || a.query_features.empty() || a.query_mask.empty())
    fail("eval needs --pred/--truth or support and query features and masks");
  Frame support{io::read_feature_grid(a.support_features), io::read_mask(a.support_mask), a.support_slice_loc};
  Frame query{io::read_feature_grid(a.query_features), io::read_mask(a.query_mask), a.query_slice_loc};
  EpisodeMethod m;
  m.prior = parse_prior_source(a.prior_source);
  if (a.protos_mode != "sp" && a.protos_mode != "mp") fail("--protos must be sp or mp");
  m.protos = a.protos_mode == "sp" ? ProtoMode::Single : ProtoMode::Multi;
  m.k = a.k;
  m.em_seed = a.seed;
  EstimatorInputs est;
  if (!a.records.empty()) est.records = io::records_from_json(io::read_json(a.records));
  if (!a.linest.empty()) est.linest = io::linest_from_json(io::read_json(a.linest));
  a.report.emit(run_episode(support, query, m, a.params, est));
}

struct RecordsArgs {
  TpmParams params;
  std::string manifest, out;
  std::string protos_mode = "sp";
  int k = 5;
  std::uint64_t seed = 0;
  std::string format = "json";
};

// Manifest: [{"support_features", "support_mask", "query_features",
// "query_mask", "slice_loc"}...], paths relative to the manifest.
void run_records(const RecordsArgs& a) {
  io::json manifest = io::read_json(a.manifest);
  if (!manifest.is_array()) fail("manifest must be a JSON array");
  const fs::path base = fs::path(a.manifest).parent_path();
  auto path = [&](const io::json& e, const char* key) {
    if (!e.contains(key)) fail(std::string("manifest entry lacks ") + key);
    fs::path p = e.at(key).get<std::string>();
    return (p.is_absolute() ? p : base / p).string();
  };
  EpisodeMethod m;
  if (a.protos_mode != "sp" && a.protos_mode != "mp") fail("--protos must be sp or mp");
  m.protos = a.protos_mode == "sp" ? ProtoMode::Single : ProtoMode::Multi;
  m.k = a.k;
  m.em_seed = a.seed;
  std::vector<EpisodeRecord> recs;
  for (const auto& e : manifest) {
    Frame s{io::read_feature_grid(path(e, "support_features")), io::read_mask(path(e, "support_mask")), 0.5};
    Frame q{io::read_feature_grid(path(e, "query_features")), io::read_mask(path(e, "query_mask")),
            e.value("slice_loc", 0.5)};
    recs.push_back(make_record(s, q, m, a.params));
  }
  if (a.format == "csv")
    io::write_table(io::to_table(recs), a.out);
  else
    io::write_json(io::to_json(recs), a.out);
}

struct FitArgs {
  std::string records, out;
  double clamp_eps = 1e-4;
};

void run_fit(const FitArgs& a) {
  LinEstModel m = lin_est_fit(io::records_from_json(io::read_json(a.records)));
  m.clamp_eps = a.clamp_eps;
  if (!(m.clamp_eps > 0.0 && m.clamp_eps < 0.5)) fail("--clamp-eps must be in (0, 0.5)");
  io::write_json(io::to_json(m), a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tied prototype model few-shot segmentation"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic scene");
  c_synth->add_option("--height", synth.cfg.grid_h)->capture_default_str();
  c_synth->add_option("--width", synth.cfg.grid_w)->capture_default_str();
  c_synth->add_option("--dims", synth.cfg.dims)->capture_default_str();
  c_synth->add_option("--classes", synth.cfg.k_fg, "foreground classes")->capture_default_str();
  c_synth->add_option("--clusters", synth.cfg.clusters_per_class, "clusters per class")->capture_default_str();
  c_synth->add_option("--sigma-fg", synth.cfg.sigma_fg)->capture_default_str();
  c_synth->add_option("--sigma-bg", synth.cfg.sigma_bg)->capture_default_str();
  c_synth->add_option("--fg-fraction", synth.cfg.fg_fraction, "per class")->capture_default_str();
  c_synth->add_option("--slice-loc", synth.cfg.slice_loc)->capture_default_str();
  c_synth->add_option("--min-proto-chord", synth.cfg.min_proto_chord)->capture_default_str();
  c_synth->add_flag("--uniform-background", synth.cfg.uniform_background);
  c_synth->add_option("--seed", synth.cfg.seed)->capture_default_str();
  c_synth->add_option("--proto-seed", synth.proto_seed, "share prototypes across scenes")
      ->each([&](const std::string&) { synth.shared_protos = true; });
  c_synth->add_option("--out-features", synth.features)->required();
  c_synth->add_option("--out-mask", synth.mask)->required();
  c_synth->add_option("--out-protos", synth.protos, "true prototypes as JSON");

  ProtosArgs protos;
  auto* c_protos = app.add_subcommand("protos", "extract prototypes from a support image");
  add_model_flags(c_protos, protos.params);
  c_protos->add_option("--features", protos.features)->required();
  c_protos->add_option("--mask", protos.mask)->required();
  c_protos->add_option("--k", protos.k, "1: masked average pooling, >1: EM mixture")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_protos->add_option("--seed", protos.seed, "EM seed")->capture_default_str();
  c_protos->add_flag("--per-class", protos.per_class, "one pooled prototype per foreground class");
  c_protos->add_flag("--upsampled", protos.upsampled, "pool at mask resolution");
  c_protos->add_option("--out", protos.out)->required();

  SegmentArgs seg;
  auto* c_seg = app.add_subcommand("segment", "posterior and mask for a query image");
  add_model_flags(c_seg, seg.params);
  c_seg->add_option("--features", seg.features)->required();
  c_seg->add_option("--protos", seg.protos)->required();
  c_seg->add_option("--mode", seg.mode)->check(CLI::IsMember({"sp", "mp", "mc"}))->capture_default_str();
  c_seg->add_option("--prior-source", seg.prior_source)
      ->check(CLI::IsMember({"fixed", "avgest", "linest", "ocp"}))
      ->capture_default_str();
  c_seg->add_option("--truth", seg.truth, "query mask (needed for ocp and metrics)");
  c_seg->add_option("--records", seg.records);
  c_seg->add_option("--linest", seg.linest);
  c_seg->add_option("--support-fg-count", seg.support_fg_count);
  c_seg->add_option("--slice-loc", seg.slice_loc);
  c_seg->add_option("--out-mask", seg.out_mask);
  seg.report.add(c_seg);

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "CE and Dice over thresholds or priors");
  add_model_flags(c_sweep, sweep.params);
  c_sweep->add_option("--features", sweep.features)->required();
  c_sweep->add_option("--protos", sweep.protos)->required();
  c_sweep->add_option("--truth", sweep.truth)->required();
  c_sweep->add_option("--axis", sweep.axis)->check(CLI::IsMember({"t_d", "p_f"}))->capture_default_str();
  c_sweep->add_option("--lo", sweep.lo);
  c_sweep->add_option("--hi", sweep.hi);
  c_sweep->add_option("--n", sweep.n)->capture_default_str();
  c_sweep->add_option("--out-ce", sweep.out_ce, "two-column CE curve CSV");
  c_sweep->add_option("--out-dice", sweep.out_dice, "two-column Dice curve CSV");
  sweep.report.add(c_sweep);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Dice of a mask, or a full support/query episode");
  add_model_flags(c_eval, ev.params);
  c_eval->add_option("--pred", ev.pred);
  c_eval->add_option("--truth", ev.truth);
  c_eval->add_option("--support-features", ev.support_features);
  c_eval->add_option("--support-mask", ev.support_mask);
  c_eval->add_option("--query-features", ev.query_features);
  c_eval->add_option("--query-mask", ev.query_mask);
  c_eval->add_option("--support-slice-loc", ev.support_slice_loc)->capture_default_str();
  c_eval->add_option("--query-slice-loc", ev.query_slice_loc)->capture_default_str();
  c_eval->add_option("--prior-source", ev.prior_source)
      ->check(CLI::IsMember({"fixed", "avgest", "linest", "ocp"}))
      ->capture_default_str();
  c_eval->add_option("--protos", ev.protos_mode, "sp or mp")->capture_default_str();
  c_eval->add_option("--k", ev.k)->check(CLI::PositiveNumber)->capture_default_str();
  c_eval->add_option("--seed", ev.seed, "EM seed")->capture_default_str();
  c_eval->add_option("--records", ev.records);
  c_eval->add_option("--linest", ev.linest);
  ev.report.add(c_eval);

  RecordsArgs rec;
  auto* c_rec = app.add_subcommand("records", "ideal class prior records from support/query pairs");
  add_model_flags(c_rec, rec.params);
  c_rec->add_option("--manifest", rec.manifest)->required();
  c_rec->add_option("--protos", rec.protos_mode, "sp or mp")->capture_default_str();
  c_rec->add_option("--k", rec.k)->check(CLI::PositiveNumber)->capture_default_str();
  c_rec->add_option("--seed", rec.seed, "EM seed")->capture_default_str();
  c_rec->add_option("--format", rec.format)->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  c_rec->add_option("--out", rec.out)->required();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-linest", "fit the linear prior estimator");
  c_fit->add_option("--records", fit.records)->required();
  c_fit->add_option("--clamp-eps", fit.clamp_eps)->capture_default_str();
  c_fit->add_option("--out", fit.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (*c_synth) run_synth(synth);
    if (*c_protos) run_protos(protos);
    if (*c_seg) run_segment(seg);
    if (*c_sweep) run_sweep(sweep);
    if (*c_eval) run_eval(ev);
    if (*c_rec) run_records(rec);
    if (*c_fit) run_fit(fit);
  } catch (const Error& e) {
    std::fprintf(stderr, "tpm: %s\n", e.what());
    return exit_code(e.code());
  } catch (const io::json::exception& e) {
    std::fprintf(stderr, "tpm: bad JSON: %s\n", e.what());
    return kExitValidation;
  }
  return 0;
}
