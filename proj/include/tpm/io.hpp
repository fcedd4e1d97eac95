#pragma once

// On-disk formats and report emission.
//
// Feature grid (.tpfg), all little-endian:
//   "TPFG" | u16 version=1 | u32 h | u32 w | u32 dims | h·w·dims f32, row-major, vector-contiguous
// Mask (.tpmk):
//   "TPMK" | u16 version=1 | u32 h | u32 w | u32 k | h·w u8 labels
//
// Reports are JSON (insertion-ordered keys, 10 significant digits) or CSV.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "tpm/core.hpp"
#include "tpm/episode.hpp"
#include "tpm/threshold.hpp"

namespace tpm::io {

using json = nlohmann::ordered_json;

inline constexpr std::uint16_t kFormatVersion = 1;

namespace detail {

using tpm::detail::require;

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint16_t get_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline std::uint32_t checked_u32(std::size_t v) {
  require(v <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidArgument, "dimension exceeds u32");
  return static_cast<std::uint32_t>(v);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed: " + path);
}

// Header: magic(4) version(2) then three u32.
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 12;

inline void check_header(std::string_view bytes, std::string_view magic) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != magic)
    throw Error(ErrorCode::BadMagic, "expected magic " + std::string(magic));
  require(bytes.size() >= kHeaderBytes, ErrorCode::TruncatedPayload, "header truncated");
  auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  require(get_u16(p + 4) == kFormatVersion, ErrorCode::BadVersion, "unsupported format version");
}

}  // namespace detail

inline std::string encode_feature_grid(const FeatureGrid& grid) {
  std::string out = "TPFG";
  detail::put_u16(out, kFormatVersion);
  detail::put_u32(out, detail::checked_u32(grid.height()));
  detail::put_u32(out, detail::checked_u32(grid.width()));
  detail::put_u32(out, detail::checked_u32(grid.dims()));
  out.reserve(out.size() + grid.vectors().data().size() * 4);
  for (double v : grid.vectors().data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

/// Parses and validates a feature grid. Vectors within 1e-5 of unit norm are
/// accepted; those further than the in-memory tolerance are renormalized.
inline FeatureGrid decode_feature_grid(std::string_view bytes) {
  detail::check_header(bytes, "TPFG");
  auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint64_t h = detail::get_u32(p + 6), w = detail::get_u32(p + 10), dims = detail::get_u32(p + 14);
  detail::require(h > 0 && w > 0 && dims > 0, ErrorCode::InvalidArgument, "zero dimension in header");
  const std::uint64_t payload = bytes.size() - detail::kHeaderBytes;
  detail::require(h * w <= payload / 4 / dims, ErrorCode::TruncatedPayload, "payload shorter than header declares");
  std::uint64_t count = h * w * dims;
  detail::require(bytes.size() - detail::kHeaderBytes == count * 4, ErrorCode::TruncatedPayload,
                  "payload longer than header declares");
  std::vector<double> data(count);
  const unsigned char* q = p + detail::kHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(detail::get_u32(q + 4 * i));
  VectorArray vecs(h * w, dims, std::move(data));
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    double n = norm(vecs[i]);
    detail::require(std::abs(n - 1.0) <= 1e-5, ErrorCode::NormViolation, "stored vector is not unit-norm");
    if (std::abs(n - 1.0) > kUnitNormTol)
      for (double& v : vecs.row(i)) v /= n;
  }
  return {h, w, std::move(vecs)};
}

inline std::string encode_mask(const GridMask& mask) {
  std::string out = "TPMK";
  detail::put_u16(out, kFormatVersion);
  detail::put_u32(out, detail::checked_u32(mask.height()));
  detail::put_u32(out, detail::checked_u32(mask.width()));
  detail::require(mask.num_classes() <= 255, ErrorCode::InvalidArgument, "u8 labels hold at most 255 classes");
  detail::put_u32(out, static_cast<std::uint32_t>(mask.num_classes()));
  for (int l : mask.labels()) out.push_back(static_cast<char>(static_cast<unsigned char>(l)));
  return out;
}

inline GridMask decode_mask(std::string_view bytes) {
  detail::check_header(bytes, "TPMK");
  auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  std::uint64_t h = detail::get_u32(p + 6), w = detail::get_u32(p + 10), k = detail::get_u32(p + 14);
  detail::require(h > 0 && w > 0 && k >= 1 && k <= 255, ErrorCode::InvalidArgument, "invalid mask header");
  detail::require(bytes.size() - detail::kHeaderBytes == h * w, ErrorCode::TruncatedPayload,
                  "mask payload length does not match header");
  std::vector<int> labels(h * w);
  for (std::uint64_t i = 0; i < h * w; ++i) labels[i] = p[detail::kHeaderBytes + i];
  return {h, w, static_cast<int>(k), std::move(labels)};
}

inline FeatureGrid read_feature_grid(const std::string& path) { return decode_feature_grid(detail::read_file(path)); }
inline void write_feature_grid(const FeatureGrid& grid, const std::string& path) {
  detail::write_file(path, encode_feature_grid(grid));
}
inline GridMask read_mask(const std::string& path) { return decode_mask(detail::read_file(path)); }
inline void write_mask(const GridMask& mask, const std::string& path) { detail::write_file(path, encode_mask(mask)); }

// ---------------------------------------------------------------------------
// JSON helpers

/// Rounds to 10 significant digits; JSON then prints the shortest round-trip
/// form, which never exceeds those digits.
inline json num(double v) {
  if (!std::isfinite(v)) return nullptr;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return std::strtod(buf, nullptr);
}

inline std::string csv_num(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline json to_json(const TpmParams& p) {
  return {{"sigma_f", num(p.sigma_f)}, {"sigma_b", num(p.sigma_b)}, {"dim", num(p.dim)}, {"kappa", num(p.kappa)}};
}

inline json to_json(const EpisodeReport& r) {
  json dice = json::array();
  for (double d : r.dice) dice.push_back(num(d));
  return {{"method", r.method},         {"dice", dice},     {"mean_dice", num(r.mean_dice)},
          {"ce", num(r.ce)},            {"prior", num(r.prior)}, {"boundary", num(r.boundary)},
          {"num_prototypes", r.num_prototypes}};
}

inline json to_json(const SweepResult& s) {
  auto arr = [](const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(num(x));
    return a;
  };
  return {{"axis", s.axis},
          {"grid", arr(s.grid)},
          {"ce", arr(s.ce)},
          {"dice", arr(s.dice)},
          {"argmin_ce", num(s.argmin_ce)},
          {"argmax_dice", num(s.argmax_dice)},
          {"ideal", num(s.ideal)},
          {"ideal_ce", num(s.ideal_ce)},
          {"ideal_dice", num(s.ideal_dice)},
          {"ce_threshold_note", "argmin_ce is a grid argmin standing in for a CE-trained threshold"}};
}

/// Prototypes are stored at full precision so they round-trip exactly.
inline json prototypes_to_json(const VectorArray& vectors, const std::vector<double>& weights) {
  json vs = json::array();
  for (std::size_t m = 0; m < vectors.size(); ++m) vs.push_back(vectors.copy_row(m));
  return {{"dims", vectors.dims()}, {"weights", weights}, {"vectors", vs}};
}

inline json to_json(const PrototypeSet& p) { return prototypes_to_json(p.vectors(), p.weights()); }

inline VectorArray prototype_vectors_from_json(const json& j) {
  std::vector<Vector> rows = j.at("vectors").get<std::vector<Vector>>();
  tpm::detail::require(!rows.empty(), ErrorCode::InvalidArgument, "prototype file has no vectors");
  return VectorArray::from_rows(rows);
}

inline PrototypeSet prototypes_from_json(const json& j) {
  return {prototype_vectors_from_json(j), j.at("weights").get<std::vector<double>>()};
}

inline json to_json(const EpisodeRecord& r) {
  return {{"support_fg_count", r.support_fg_count}, {"slice_loc", r.slice_loc}, {"icp", r.icp}};
}

inline json to_json(const std::vector<EpisodeRecord>& records) {
  json a = json::array();
  for (const auto& r : records) a.push_back(to_json(r));
  return a;
}

inline std::vector<EpisodeRecord> records_from_json(const json& j) {
  std::vector<EpisodeRecord> out;
  for (const auto& e : j) {
    EpisodeRecord r{e.at("support_fg_count").get<std::size_t>(), e.at("slice_loc").get<double>(),
                    e.at("icp").get<double>()};
    r.validate();
    out.push_back(r);
  }
  return out;
}

inline json to_json(const LinEstModel& m) {
  return {{"intercept", m.intercept},
          {"coef_fg_count", m.coef_fg_count},
          {"coef_slice_loc", m.coef_slice_loc},
          {"clamp_eps", m.clamp_eps}};
}

inline LinEstModel linest_from_json(const json& j) {
  LinEstModel m;
  m.intercept = j.at("intercept").get<double>();
  m.coef_fg_count = j.at("coef_fg_count").get<double>();
  m.coef_slice_loc = j.at("coef_slice_loc").get<double>();
  m.clamp_eps = j.value("clamp_eps", 1e-4);
  return m;
}

inline json read_json(const std::string& path) {
  std::string text = detail::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV tables

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

inline Table to_table(const EpisodeReport& r) {
  Table t{{"method", "class", "dice", "ce", "prior", "boundary"}, {}};
  for (std::size_t c = 0; c < r.dice.size(); ++c)
    t.rows.push_back({r.method, std::to_string(c + 1), csv_num(r.dice[c]), csv_num(r.ce), csv_num(r.prior),
                      csv_num(r.boundary)});
  return t;
}

inline Table to_table(const SweepResult& s) {
  Table t{{s.axis.empty() ? "t_d" : s.axis, "ce", "dice"}, {}};
  for (std::size_t i = 0; i < s.grid.size(); ++i) t.rows.push_back({csv_num(s.grid[i]), csv_num(s.ce[i]), csv_num(s.dice[i])});
  return t;
}

inline Table to_table(const std::vector<EpisodeRecord>& records) {
  Table t{{"support_fg_count", "slice_loc", "icp"}, {}};
  for (const auto& r : records) t.rows.push_back({std::to_string(r.support_fg_count), csv_num(r.slice_loc), csv_num(r.icp)});
  return t;
}

enum class Curve { Ce, Dice };

/// Two-column (axis value, curve value) CSV for plotting one sweep curve.
inline Table curve_table(const SweepResult& s, Curve which) {
  Table t{{s.axis.empty() ? "t_d" : s.axis, which == Curve::Ce ? "ce" : "dice"}, {}};
  const auto& ys = which == Curve::Ce ? s.ce : s.dice;
  for (std::size_t i = 0; i < s.grid.size(); ++i) t.rows.push_back({csv_num(s.grid[i]), csv_num(ys[i])});
  return t;
}

enum class Format { Json, Csv };

inline Format parse_format(std::string_view s) {
  if (s == "json") return Format::Json;
  if (s == "csv") return Format::Csv;
  throw Error(ErrorCode::InvalidArgument, "unknown report format: " + std::string(s));
}

template <class Report>
std::string render_report(const Report& report, Format format) {
  if (format == Format::Json) return to_json(report).dump(2) + "\n";
  return to_table(report).str();
}

template <class Report>
void emit_report(const Report& report, Format format, const std::string& path) {
  detail::write_file(path, render_report(report, format));
}

inline void write_json(const json& j, const std::string& path) { detail::write_file(path, j.dump(2) + "\n"); }
inline void write_table(const Table& t, const std::string& path) { detail::write_file(path, t.str()); }

}  // namespace tpm::io
