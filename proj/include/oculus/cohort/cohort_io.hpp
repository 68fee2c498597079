// SPDX-License-Identifier: Apache-2.0
//
// NDJSON cohort files. Line 1 is a header {"format","version","count"}; each
// following line is one sample:
//   {"eid", "label", "biomarkers": [37 values in schema order],
//    "oct": base64 float32 LE row-major, "cfp": ..., "report": text | null}
#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <optional>
#include <string>

#include "oculus/cohort/cohort.hpp"
#include "oculus/core/io.hpp"
#include "oculus/report/dsl.hpp"

namespace oculus {

static_assert(std::endian::native == std::endian::little, "cohort files store little-endian float32");

inline constexpr std::string_view kCohortFormat = "oculus-cohort";
inline constexpr int kCohortFormatVersion = 1;

namespace cohort_io_detail {

inline std::string encode_pixels(const std::vector<float>& px) {
  std::vector<std::uint8_t> bytes(px.size() * sizeof(float));
  std::memcpy(bytes.data(), px.data(), bytes.size());
  return io::base64_encode(bytes);
}

inline std::vector<float> decode_pixels(std::string_view b64) {
  const auto bytes = io::base64_decode(b64);
  if (bytes.size() != kScanSize * kScanSize * sizeof(float))
    throw ValidationError("pixel payload holds " + std::to_string(bytes.size()) + " bytes, expected " +
                          std::to_string(kScanSize * kScanSize * sizeof(float)));
  std::vector<float> px(kScanSize * kScanSize);
  std::memcpy(px.data(), bytes.data(), bytes.size());
  return px;
}

}  // namespace cohort_io_detail

inline nlohmann::json sample_to_json(const CohortSample& s) {
  return {{"eid", s.eid},
          {"label", std::string(to_string(s.label))},
          {"biomarkers", s.biomarkers.values},
          {"oct", cohort_io_detail::encode_pixels(s.oct.pixels)},
          {"cfp", cohort_io_detail::encode_pixels(s.cfp.pixels)},
          {"report", s.report ? nlohmann::json(report::report_to_text(*s.report)) : nlohmann::json(nullptr)}};
}

inline CohortSample sample_from_json(const nlohmann::json& j) {
  CohortSample s;
  s.eid = j.at("eid").get<std::uint64_t>();
  s.label = label_from_string(j.at("label").get<std::string>());
  const auto& b = j.at("biomarkers");
  if (!b.is_array() || b.size() != kNumBiomarkers)
    throw ValidationError("biomarkers must be an array of " + std::to_string(kNumBiomarkers) + " numbers");
  for (std::size_t i = 0; i < kNumBiomarkers; ++i) s.biomarkers[i] = b[i].get<double>();
  s.biomarkers.validate();
  s.oct = {Modality::oct, kScanSize, kScanSize, cohort_io_detail::decode_pixels(j.at("oct").get<std::string>()),
           s.biomarkers};
  s.cfp = {Modality::cfp, kScanSize, kScanSize, cohort_io_detail::decode_pixels(j.at("cfp").get<std::string>()),
           s.biomarkers};
  if (!j.at("report").is_null()) s.report = report::parse_report(j.at("report").get<std::string>());
  return s;
}

/// The header line carries the record count and, when given, the seed the
/// cohort was drawn with.
inline std::string cohort_to_ndjson(const Cohort& cohort, std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json header{{"format", kCohortFormat}, {"version", kCohortFormatVersion}, {"count", cohort.size()}};
  if (seed) header["seed"] = *seed;
  std::string out = header.dump();
  out += '\n';
  for (const auto& s : cohort) {
    out += sample_to_json(s).dump();
    out += '\n';
  }
  return out;
}

/// Parses a whole cohort or throws ParseError naming the failing line; a
/// partially read cohort is never returned.
inline Cohort cohort_from_ndjson(std::string_view text) {
  Cohort cohort;
  std::size_t line_no = 0;
  std::size_t start = 0;
  std::size_t expected_count = 0;
  bool have_header = false;
  while (start < text.size()) {
    const std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos)
      throw ParseError(line_no + 1, text.size() - start + 1, {"newline"}, "record is not newline-terminated (truncated file?)");
    const std::string_view line = text.substr(start, nl - start);
    start = nl + 1;
    ++line_no;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!have_header) {
        if (j.at("format").get<std::string>() != kCohortFormat || j.at("version").get<int>() != kCohortFormatVersion)
          throw ValidationError("unsupported cohort header");
        expected_count = j.at("count").get<std::size_t>();
        have_header = true;
        continue;
      }
      cohort.push_back(sample_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, 1, {}, std::string("malformed cohort record: ") + e.what());
    } catch (const ParseError& e) {
      throw ParseError(line_no, 1, {}, std::string("malformed report in cohort record: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line_no, 1, {}, std::string("invalid cohort record: ") + e.what());
    }
  }
  if (!have_header) throw ParseError(1, 1, {"header"}, "cohort file is empty");
  if (cohort.size() != expected_count)
    throw ParseError(line_no + 1, 1, {"record"},
                     "cohort header declares " + std::to_string(expected_count) + " records, file holds " +
                         std::to_string(cohort.size()) + " (truncated file?)");
  try {
    validate_cohort(cohort);
  } catch (const ValidationError& e) {
    throw ParseError(line_no, 1, {}, e.what());
  }
  return cohort;
}

inline void export_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  io::write_file_atomic(path, cohort_to_ndjson(cohort));
}

inline Cohort import_cohort(const std::filesystem::path& path) { return cohort_from_ndjson(io::read_file(path)); }

}  // namespace oculus
