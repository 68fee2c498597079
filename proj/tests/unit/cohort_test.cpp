// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "oculus/cohort/cohort_io.hpp"
#include "oculus/core/io.hpp"
#include "oculus/report/engine.hpp"

using namespace oculus;

namespace {

std::size_t count_label(const Cohort& c, DiagnosisLabel l) {
  std::size_t n = 0;
  for (const auto& s : c) n += s.label == l;
  return n;
}

double pixel_distance(const std::vector<float>& a, const std::vector<float>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * static_cast<double>(a[i] - b[i]);
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("oculus_cohort_test_" + name);
}

}  // namespace

TEST(Schema, HasThirtyOneOctThenSixCfpMarkers) {
  const auto& schema = biomarker_schema();
  ASSERT_EQ(schema.size(), 37u);
  std::set<std::string_view> names;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    EXPECT_EQ(schema[i].modality, i < 31 ? Modality::oct : Modality::cfp) << schema[i].name;
    EXPECT_LT(schema[i].reference_low, schema[i].reference_high);
    EXPECT_GT(schema[i].reference_low, 0.0);
    names.insert(schema[i].name);
  }
  EXPECT_EQ(names.size(), 37u);
  EXPECT_EQ(schema[kCupDiscIndex].name, "cup_disc_ratio");
}

TEST(Schema, EachDiseaseShiftsThreeToSixMarkersByOneAndAHalfToThreeSd) {
  for (std::size_t k = 1; k < kNumLabels; ++k) {
    int shifted = 0;
    for (const auto& s : biomarker_schema()) {
      const double v = s.shift_for(kAllLabels[k]);
      if (v == 0.0) continue;
      ++shifted;
      EXPECT_GE(std::abs(v), 1.5);
      EXPECT_LE(std::abs(v), 3.0);
    }
    EXPECT_GE(shifted, 3) << to_string(kAllLabels[k]);
    EXPECT_LE(shifted, 6) << to_string(kAllLabels[k]);
  }
}

TEST(Schema, PublishedCsvMatchesEmbeddedTable) {
  EXPECT_EQ(io::read_file(std::filesystem::path(OCULUS_DATA_DIR) / "biomarker_schema.csv"), schema_csv());
}

TEST(Schema, PriorsSumToOne) {
  double sum = 0.0;
  for (double p : kLabelPriors) sum += p;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(SampleCohort, ClassFractionsMatchPriorsAtFullCohortSize) {
  for (std::uint64_t seed : {1u, 77u}) {
    const auto cohort = sample_cohort(15663, seed);
    ASSERT_EQ(cohort.size(), 15663u);
    for (std::size_t k = 0; k < kNumLabels; ++k) {
      const double frac = static_cast<double>(count_label(cohort, kAllLabels[k])) / 15663.0;
      EXPECT_NEAR(frac * 100.0, kLabelPriors[k] * 100.0, 0.5) << to_string(kAllLabels[k]) << " seed " << seed;
    }
  }
}

TEST(SampleCohort, LabelCountsSumToNForManySizes) {
  for (std::size_t n = 1; n < 300; ++n) {
    const auto counts = label_counts(n);
    std::size_t total = 0;
    for (auto c : counts) total += c;
    EXPECT_EQ(total, n);
  }
}

TEST(SampleCohort, SingleSampleIsDeterministic) {
  const auto a = sample_cohort(1, 42);
  const auto b = sample_cohort(1, 42);
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a, b);
  EXPECT_NE(sample_cohort(1, 43)[0].biomarkers, a[0].biomarkers);
}

TEST(SampleCohort, ZeroSamplesIsAnError) { EXPECT_THROW(sample_cohort(0, 1), ValidationError); }

TEST(SampleCohort, GlaucomaCupDiscMeanExceedsNormal) {
  const auto cohort = sample_cohort(10000, 5);
  double glc = 0.0, nrm = 0.0;
  std::size_t n_glc = 0, n_nrm = 0;
  for (const auto& s : cohort) {
    if (s.label == DiagnosisLabel::Glaucoma) {
      glc += s.biomarkers[kCupDiscIndex];
      ++n_glc;
    } else if (s.label == DiagnosisLabel::Normal) {
      nrm += s.biomarkers[kCupDiscIndex];
      ++n_nrm;
    }
  }
  ASSERT_GT(n_glc, 0u);
  EXPECT_GT(glc / static_cast<double>(n_glc), nrm / static_cast<double>(n_nrm));
}

TEST(SampleCohort, SamplesSatisfyInvariants) {
  const auto cohort = sample_cohort(500, 9);
  EXPECT_NO_THROW(validate_cohort(cohort));
  for (const auto& s : cohort) {
    for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
      const double res = biomarker_spec(i).resolution;
      const double steps = s.biomarkers[i] / res;
      EXPECT_NEAR(steps, std::round(steps), 1e-6) << biomarker_spec(i).name;
    }
  }
}

TEST(SampleCohort, ClassShiftsMoveDesignatedMarkerMeans) {
  const auto cohort = sample_cohort(6000, 17);
  for (std::size_t k = 1; k < 4; ++k) {  // classes with enough samples
    for (std::size_t i = 0; i < kNumBiomarkers; ++i) {
      const auto& spec = biomarker_spec(i);
      const double shift = spec.shift_for(kAllLabels[k]);
      if (shift == 0.0) continue;
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& s : cohort)
        if (s.label == kAllLabels[k]) {
          sum += (s.biomarkers[i] - spec.mean()) / spec.sd();
          ++n;
        }
      EXPECT_NEAR(sum / static_cast<double>(n), shift, 0.35) << spec.name << " " << to_string(kAllLabels[k]);
    }
  }
}

TEST(RenderScan, IsPureInItsArguments) {
  const auto b = BiomarkerVector::midpoints();
  for (auto m : {Modality::oct, Modality::cfp}) {
    const auto a = render_scan(b, m, 11);
    const auto c = render_scan(b, m, 11);
    EXPECT_EQ(a.pixels, c.pixels);
    EXPECT_EQ(a.source_biomarkers, b);
    EXPECT_NE(render_scan(b, m, 12).pixels, a.pixels);
    for (float p : a.pixels) {
      EXPECT_GE(p, 0.0f);
      EXPECT_LE(p, 1.0f);
    }
  }
}

TEST(RenderScan, MacularVolumeChangeAltersAtLeastOnePercentOfOctPixels) {
  auto lo = BiomarkerVector::midpoints();
  auto hi = lo;
  lo[biomarker_index("total_macular_volume")] = 7.80;
  hi[biomarker_index("total_macular_volume")] = 9.40;
  const auto a = render_scan(lo, Modality::oct, 3);
  const auto b = render_scan(hi, Modality::oct, 3);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) differ += a.pixels[i] != b.pixels[i];
  EXPECT_GE(static_cast<double>(differ), 0.01 * 64 * 64);
}

TEST(RenderScan, DiscRegionMeanIncreasesWithCupDiscRatio) {
  auto b = BiomarkerVector::midpoints();
  for (double sigma : {0.0, kSpeckleSigma}) {
    double previous = -1.0;
    for (int step = 0; step <= 16; ++step) {
      b[kCupDiscIndex] = 0.10 + 0.05 * step;
      const auto scan = render_scan(b, Modality::cfp, 21, sigma);
      double sum = 0.0;
      int n = 0;
      for (std::size_t r = 23; r <= 40; ++r)
        for (std::size_t c = 11; c <= 25; ++c) {
          sum += scan.at(r, c);
          ++n;
        }
      const double mean = sum / n;
      EXPECT_GT(mean, previous) << "cdr " << b[kCupDiscIndex] << " sigma " << sigma;
      previous = mean;
    }
  }
}

TEST(RenderScan, RejectsInvalidBiomarkers) {
  auto b = BiomarkerVector::midpoints();
  b[kCupDiscIndex] = 1.2;
  EXPECT_THROW(render_scan(b, Modality::cfp, 1), ValidationError);
  b = BiomarkerVector::midpoints();
  b[0] = -3.0;
  EXPECT_THROW(render_scan(b, Modality::oct, 1), ValidationError);
  b = BiomarkerVector::midpoints();
  b[5] = std::nan("");
  EXPECT_THROW(render_scan(b, Modality::oct, 1), ValidationError);
}

TEST(RenderScan, NearestCleanRenderIdentifiesTheGeneratingVector) {
  const auto cohort = sample_cohort(512, 8);
  for (auto m : {Modality::oct, Modality::cfp}) {
    std::vector<std::vector<float>> clean;
    for (const auto& s : cohort) clean.push_back(render_scan(s.biomarkers, m, 0, 0.0).pixels);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
      const auto& noisy = m == Modality::oct ? cohort[i].oct.pixels : cohort[i].cfp.pixels;
      std::size_t best = 0;
      double best_d = INFINITY;
      for (std::size_t j = 0; j < clean.size(); ++j) {
        const double d = pixel_distance(noisy, clean[j]);
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      hits += best == i;
    }
    const double accuracy = static_cast<double>(hits) / 512.0;
    EXPECT_GT(accuracy, 1.0 / 512.0) << to_string(m);
    EXPECT_GT(accuracy, 0.5) << to_string(m);
  }
}

TEST(SplitByEid, TenSamplesSplitEightTwo) {
  const auto cohort = sample_cohort(10, 1);
  const auto split = split_by_eid(cohort, 0.8, 4);
  EXPECT_EQ(split.train.size(), 8u);
  EXPECT_EQ(split.test.size(), 2u);
  std::set<std::uint64_t> ids;
  for (const auto& s : split.train) ids.insert(s.eid);
  for (const auto& s : split.test) EXPECT_FALSE(ids.count(s.eid));
}

TEST(SplitByEid, FullCohortSizeRoundsToNearestIntegers) {
  Cohort cohort(15663);
  for (std::size_t i = 0; i < cohort.size(); ++i) cohort[i].eid = kFirstEid + i;
  const auto split = split_by_eid(cohort, 0.8, 2);
  EXPECT_EQ(split.train.size(), 12530u);
  EXPECT_EQ(split.test.size(), 3133u);
}

TEST(SplitByEid, SameSeedSamePartition) {
  const auto cohort = sample_cohort(50, 3);
  const auto a = split_by_eid(cohort, 0.8, 9);
  const auto b = split_by_eid(cohort, 0.8, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  const auto c = split_by_eid(cohort, 0.8, 10);
  EXPECT_NE(a.train, c.train);
}

TEST(SplitByEid, RejectsTinyCohortsAndBadRatios) {
  const auto one = sample_cohort(1, 1);
  EXPECT_THROW(split_by_eid(one, 0.8, 1), ValidationError);
  const auto two = sample_cohort(2, 1);
  EXPECT_THROW(split_by_eid(two, 0.0, 1), ValidationError);
  EXPECT_THROW(split_by_eid(two, 1.0, 1), ValidationError);
}

TEST(SplitByEid, TrainFractionWithinOneOverN) {
  for (std::size_t n : {2u, 3u, 7u, 33u, 101u}) {
    Cohort cohort(n);
    for (std::size_t i = 0; i < n; ++i) cohort[i].eid = kFirstEid + i;
    for (double ratio : {0.1, 0.5, 0.8, 0.9}) {
      const auto split = split_by_eid(cohort, ratio, 1);
      EXPECT_LE(std::abs(static_cast<double>(split.train.size()) / static_cast<double>(n) - ratio),
                1.0 / static_cast<double>(n) + 1e-12);
    }
  }
}

TEST(CohortFile, RoundTripWithoutReports) {
  const auto cohort = sample_cohort(20, 6);
  const auto path = temp_path("plain.ndjson");
  export_cohort(cohort, path);
  EXPECT_EQ(import_cohort(path), cohort);
  std::filesystem::remove(path);
}

TEST(CohortFile, RoundTripWithReports) {
  auto cohort = sample_cohort(40, 6);
  const auto rules = report::default_rules();
  for (auto& s : cohort) s.report = report::eye_guideline_report(s.biomarkers, s.label, rules);
  EXPECT_EQ(cohort_from_ndjson(cohort_to_ndjson(cohort)), cohort);
}

TEST(CohortFile, ExportIsByteStable) {
  const auto a = cohort_to_ndjson(sample_cohort(100, 12));
  const auto b = cohort_to_ndjson(sample_cohort(100, 12));
  EXPECT_EQ(io::sha256_hex(a), io::sha256_hex(b));
}

TEST(CohortFile, TruncatedFileIsAParseError) {
  const auto text = cohort_to_ndjson(sample_cohort(5, 6));
  // Cut inside the fourth record.
  std::size_t cut = 0;
  for (int k = 0; k < 4; ++k) cut = text.find('\n', cut) + 1;
  cut += 50;
  try {
    (void)cohort_from_ndjson(text.substr(0, cut));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 5u);
  }
  // Cut exactly at a record boundary: the header count catches it.
  const std::size_t boundary = text.rfind('\n', text.size() - 2) + 1;
  EXPECT_THROW((void)cohort_from_ndjson(text.substr(0, boundary)), ParseError);
}

TEST(CohortFile, MalformedRecordNamesItsLine) {
  auto text = cohort_to_ndjson(sample_cohort(3, 6));
  const std::size_t third = text.find('\n', text.find('\n') + 1) + 1;
  text.replace(third, 1, "[");
  try {
    (void)cohort_from_ndjson(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}
