#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tpm/detail/random.hpp"
#include "tpm/episode.hpp"
#include "tpm/io.hpp"

using namespace tpm;

namespace {

template <class Fn>
void expect_code(ErrorCode code, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

std::string data_path(const char* name) { return std::string(TPM_TEST_DATA_DIR) + "/" + name; }

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() / (std::string("tpm_io_") + info->test_suite_name() + "_" + info->name());
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  std::string file(const char* name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

FeatureGrid random_grid(std::uint64_t seed, std::size_t h, std::size_t w, std::size_t dims) {
  detail::Rng rng(seed);
  std::vector<Vector> rows;
  for (std::size_t i = 0; i < h * w; ++i) rows.push_back(rng.unit_vector(dims));
  return {h, w, VectorArray::from_rows(rows)};
}

}  // namespace

TEST(FeatureGridFile, RoundTripAtFloatPrecision) {
  FeatureGrid g = random_grid(1, 5, 7, 6);
  FeatureGrid back = io::decode_feature_grid(io::encode_feature_grid(g));
  ASSERT_EQ(back.height(), 5u);
  ASSERT_EQ(back.width(), 7u);
  ASSERT_EQ(back.dims(), 6u);
  for (std::size_t i = 0; i < g.vectors().data().size(); ++i)
    EXPECT_EQ(back.vectors().data()[i], static_cast<double>(static_cast<float>(g.vectors().data()[i])));
}

TEST(FeatureGridFile, BitExactSecondRoundTrip) {
  TempDir tmp;
  FeatureGrid g = random_grid(2, 9, 4, 16);
  io::write_feature_grid(g, tmp.file("a.tpfg"));
  FeatureGrid once = io::read_feature_grid(tmp.file("a.tpfg"));
  io::write_feature_grid(once, tmp.file("b.tpfg"));
  EXPECT_EQ(slurp(tmp.file("a.tpfg")), slurp(tmp.file("b.tpfg")));
  EXPECT_EQ(io::read_feature_grid(tmp.file("b.tpfg")).vectors(), once.vectors());
}

TEST(FeatureGridFile, Golden) {
  FeatureGrid g = io::read_feature_grid(data_path("golden_grid.tpfg"));
  ASSERT_EQ(g.height(), 2u);
  ASSERT_EQ(g.width(), 3u);
  ASSERT_EQ(g.dims(), 4u);
  const double f6 = static_cast<float>(0.6), f8 = static_cast<float>(0.8);
  std::vector<double> expected{1, 0, 0, 0, 0, 1, 0, 0, 0.5, 0.5, 0.5, 0.5, f6, f8, 0, 0, 0, 0, -f8, f6, -0.5, 0.5, -0.5, 0.5};
  EXPECT_EQ(g.vectors().data(), expected);
  // The encoder reproduces the independently written bytes.
  EXPECT_EQ(io::encode_feature_grid(g), slurp(data_path("golden_grid.tpfg")));
}

TEST(FeatureGridFile, Errors) {
  expect_code(ErrorCode::BadMagic, [] { io::read_feature_grid(data_path("bad_magic.tpfg")); });
  expect_code(ErrorCode::BadVersion, [] { io::read_feature_grid(data_path("bad_version.tpfg")); });
  expect_code(ErrorCode::TruncatedPayload, [] { io::read_feature_grid(data_path("truncated.tpfg")); });
  expect_code(ErrorCode::NormViolation, [] { io::read_feature_grid(data_path("off_sphere.tpfg")); });
  expect_code(ErrorCode::IoError, [] { io::read_feature_grid(data_path("missing.tpfg")); });
  expect_code(ErrorCode::BadMagic, [] { io::decode_feature_grid("TP"); });
  expect_code(ErrorCode::TruncatedPayload, [] { io::decode_feature_grid("TPFG\x01"); });
  // A mask file is not a feature grid.
  expect_code(ErrorCode::BadMagic, [] { io::read_feature_grid(data_path("golden_mask.tpmk")); });
  std::string extra = slurp(data_path("golden_grid.tpfg")) + "abcd";
  expect_code(ErrorCode::TruncatedPayload, [&] { io::decode_feature_grid(extra); });
}

TEST(FeatureGridFile, HugeHeaderIsTruncationNotAllocation) {
  std::string bytes = slurp(data_path("golden_grid.tpfg"));
  for (std::size_t i = 6; i < 18; ++i) bytes[i] = '\xff';
  expect_code(ErrorCode::TruncatedPayload, [&] { io::decode_feature_grid(bytes); });
}

TEST(MaskFile, GoldenAndRoundTrip) {
  GridMask m = io::read_mask(data_path("golden_mask.tpmk"));
  EXPECT_EQ(m, GridMask(2, 3, 2, {0, 1, 2, 2, 1, 0}));
  EXPECT_EQ(io::encode_mask(m), slurp(data_path("golden_mask.tpmk")));

  TempDir tmp;
  detail::Rng rng(3);
  std::vector<int> labels(17 * 13);
  for (int& l : labels) l = static_cast<int>(rng.index(6));
  GridMask big(17, 13, 5, labels);
  io::write_mask(big, tmp.file("m.tpmk"));
  EXPECT_EQ(io::read_mask(tmp.file("m.tpmk")), big);
}

TEST(MaskFile, Errors) {
  std::string good = slurp(data_path("golden_mask.tpmk"));
  expect_code(ErrorCode::TruncatedPayload, [&] { io::decode_mask(good.substr(0, good.size() - 1)); });
  std::string bad_label = good;
  bad_label.back() = 7;
  expect_code(ErrorCode::InvalidArgument, [&] { io::decode_mask(bad_label); });
  std::string bad_version = good;
  bad_version[4] = 9;
  expect_code(ErrorCode::BadVersion, [&] { io::decode_mask(bad_version); });
}

TEST(Report, EmptySweepIsHeaderOnlyCsv) {
  SweepResult empty;
  EXPECT_EQ(io::render_report(empty, io::Format::Csv), "t_d,ce,dice\n");
  EXPECT_EQ(io::curve_table(empty, io::Curve::Ce).str(), "t_d,ce\n");
}

TEST(Report, SweepCsvHasOneRowPerPoint) {
  ScalarMap d(1, 4, std::vector<double>{0.1, 0.4, 0.8, 1.2});
  GridMask truth(1, 4, 1, {1, 1, 0, 0});
  SweepResult s = threshold_sweep(d, truth, TpmParams{}, {0.2, 0.6, 1.0});
  auto ls = lines(io::render_report(s, io::Format::Csv));
  ASSERT_EQ(ls.size(), 4u);
  EXPECT_EQ(ls[0], "t_d,ce,dice");
  EXPECT_EQ(ls[2].substr(0, 4), "0.6,");
  auto curve = lines(io::curve_table(s, io::Curve::Dice).str());
  ASSERT_EQ(curve.size(), 4u);
  EXPECT_EQ(curve[0], "t_d,dice");
  EXPECT_EQ(curve[2], "0.6,1");
}

TEST(Report, EpisodeJsonRoundTrip) {
  EpisodeReport r;
  r.method = "ocp/sp";
  r.dice = {0.8123456789123};
  r.mean_dice = 0.8123456789123;
  r.ce = 0.25;
  r.prior = 0.2;
  r.boundary = 0.5;
  TempDir tmp;
  io::emit_report(r, io::Format::Json, tmp.file("r.json"));
  io::json j = io::read_json(tmp.file("r.json"));
  EXPECT_EQ(j["method"], "ocp/sp");
  EXPECT_EQ(j["dice"][0].get<double>(), 0.8123456789);
  EXPECT_EQ(j["ce"].get<double>(), 0.25);
  EXPECT_EQ(j["num_prototypes"].get<int>(), 1);
  // Stable key order.
  std::vector<std::string> keys;
  for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
  EXPECT_EQ(keys, (std::vector<std::string>{"method", "dice", "mean_dice", "ce", "prior", "boundary", "num_prototypes"}));

  r.boundary = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(io::to_json(r)["boundary"].is_null());
  auto csv = lines(io::render_report(r, io::Format::Csv));
  ASSERT_EQ(csv.size(), 2u);
  EXPECT_EQ(csv[1], "ocp/sp,1,0.8123456789,0.25,0.2,nan");
}

TEST(Report, UnwritablePathIsIoError) {
  EpisodeReport r;
  r.dice = {1.0};
  expect_code(ErrorCode::IoError, [&] { io::emit_report(r, io::Format::Csv, "/nonexistent-dir/x.csv"); });
}

TEST(Json, PrototypesRecordsAndModelRoundTrip) {
  PrototypeSet p(VectorArray::from_rows({{0.6, 0.8}, {1.0, 0.0}}), {0.25, 0.75});
  PrototypeSet back = io::prototypes_from_json(io::json::parse(io::to_json(p).dump()));
  EXPECT_EQ(back.vectors(), p.vectors());
  EXPECT_EQ(back.weights(), p.weights());

  std::vector<EpisodeRecord> rs{{10, 0.25, 0.3}, {250, 0.5, 0.123456789012345}};
  auto rs2 = io::records_from_json(io::json::parse(io::to_json(rs).dump()));
  ASSERT_EQ(rs2.size(), 2u);
  EXPECT_EQ(rs2[1].icp, rs[1].icp);
  EXPECT_EQ(rs2[1].support_fg_count, 250u);

  LinEstModel m{0.1, 2e-5, -0.03, 1e-3};
  LinEstModel m2 = io::linest_from_json(io::json::parse(io::to_json(m).dump()));
  EXPECT_EQ(m2.intercept, m.intercept);
  EXPECT_EQ(m2.coef_fg_count, m.coef_fg_count);
  EXPECT_EQ(m2.coef_slice_loc, m.coef_slice_loc);
  EXPECT_EQ(m2.clamp_eps, m.clamp_eps);
}

TEST(Json, InvalidRecordsRejected) {
  expect_code(ErrorCode::InvalidArgument,
              [] { io::records_from_json(io::json::parse(R"([{"support_fg_count":1,"slice_loc":0.5,"icp":1.5}])")); });
}
