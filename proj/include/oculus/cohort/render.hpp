// SPDX-License-Identifier: Apache-2.0
//
// Procedural 64x64 renderings whose pixel content is a decodable function of
// the biomarker vector.
//
// OCT: 8 column segments, each a stack of 4 horizontal bands. The 31 OCT
// markers fill 31 of the 32 (segment, band) slots; band thickness is affine
// in the marker's standardized value.
// CFP: optic disc and cup ellipses (cup radii scale with cup_disc_ratio) and
// two arteries plus two veins. Artery width = av_ratio * vein width, vessel
// waviness follows tortuosity, side-branch length follows fractal dimension.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

#include "oculus/cohort/schema.hpp"
#include "oculus/core/rng.hpp"

namespace oculus {

inline constexpr std::size_t kScanSize = 64;
inline constexpr double kSpeckleSigma = 0.05;

struct SyntheticScan {
  Modality modality = Modality::oct;
  std::size_t height = kScanSize;
  std::size_t width = kScanSize;
  std::vector<float> pixels;  // row-major
  BiomarkerVector source_biomarkers;

  float at(std::size_t r, std::size_t c) const { return pixels[r * width + c]; }

  friend bool operator==(const SyntheticScan&, const SyntheticScan&) = default;
};

namespace render_detail {

using Canvas = std::array<double, kScanSize * kScanSize>;

inline double standardized(const BiomarkerVector& b, std::size_t i) {
  const auto& s = biomarker_spec(i);
  return (b[i] - s.mean()) / s.sd();
}

inline constexpr std::array<double, 4> kBandIntensity{0.85, 0.40, 0.70, 0.30};
inline constexpr double kOctBackground = 0.10;
inline constexpr double kOctTop = 6.0;

inline void draw_oct(const BiomarkerVector& b, Canvas& px) {
  constexpr std::size_t kSegments = 8;
  constexpr std::size_t kSegWidth = kScanSize / kSegments;
  for (std::size_t seg = 0; seg < kSegments; ++seg) {
    std::array<double, 5> edge{};
    edge[0] = kOctTop;
    for (std::size_t band = 0; band < 4; ++band) {
      const std::size_t slot = seg * 4 + band;
      const double z = slot < kNumOctBiomarkers ? standardized(b, slot) : 0.0;
      edge[band + 1] = edge[band] + std::clamp(7.0 + 1.5 * z, 1.0, 13.5);
    }
    for (std::size_t r = 0; r < kScanSize; ++r) {
      const double top = static_cast<double>(r);
      const double bottom = top + 1.0;
      double v = 0.0;
      double covered = 0.0;
      for (std::size_t band = 0; band < 4; ++band) {
        const double overlap = std::max(0.0, std::min(bottom, edge[band + 1]) - std::max(top, edge[band]));
        v += overlap * kBandIntensity[band];
        covered += overlap;
      }
      v += (1.0 - covered) * kOctBackground;
      for (std::size_t c = seg * kSegWidth; c < (seg + 1) * kSegWidth; ++c) px[r * kScanSize + c] = v;
    }
  }
}

struct Point {
  double x;
  double y;
};

inline double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx);
  const double ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

/// Max-coverage rasterization of a thick polyline into `cover`.
inline void stroke(const std::vector<Point>& line, double width, Canvas& cover) {
  const double half = 0.5 * width;
  for (std::size_t k = 0; k + 1 < line.size(); ++k) {
    const Point a = line[k];
    const Point b = line[k + 1];
    const double pad = half + 1.0;
    const auto lo_x = static_cast<long>(std::floor(std::min(a.x, b.x) - pad));
    const auto hi_x = static_cast<long>(std::ceil(std::max(a.x, b.x) + pad));
    const auto lo_y = static_cast<long>(std::floor(std::min(a.y, b.y) - pad));
    const auto hi_y = static_cast<long>(std::ceil(std::max(a.y, b.y) + pad));
    for (long r = std::max(0L, lo_y); r <= std::min<long>(kScanSize - 1, hi_y); ++r) {
      for (long c = std::max(0L, lo_x); c <= std::min<long>(kScanSize - 1, hi_x); ++c) {
        const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
        const double cov = std::clamp(half + 0.5 - segment_distance(p, a, b), 0.0, 1.0);
        double& dst = cover[static_cast<std::size_t>(r) * kScanSize + static_cast<std::size_t>(c)];
        dst = std::max(dst, cov);
      }
    }
  }
}

struct VesselStyle {
  double y_offset;
  double slope;
  double period;
  double phase;
};

inline constexpr double kDiscX = 18.0;
inline constexpr double kDiscY = 32.0;
inline constexpr double kDiscRx = 7.0;
inline constexpr double kDiscRy = 8.5;

inline double ellipse_coverage(double x, double y, double rx, double ry) {
  const double dx = (x - kDiscX) / rx;
  const double dy = (y - kDiscY) / ry;
  const double signed_dist = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
  return std::clamp(0.5 - signed_dist, 0.0, 1.0);
}

inline void draw_vessel(const VesselStyle& style, double width, double amplitude, double branch_len, double intensity,
                        Canvas& px) {
  const double x0 = kDiscX + 0.8 * kDiscRx;
  const double y0 = kDiscY + style.y_offset;
  const double dir = style.slope < 0.0 ? -1.0 : 1.0;
  auto path_y = [&](double x) {
    const double t = x - x0;
    return y0 + style.slope * t + amplitude * std::sin(2.0 * std::numbers::pi * t / style.period + style.phase) -
           amplitude * std::sin(style.phase);
  };
  std::vector<Point> main;
  for (double x = x0; x <= 63.5; x += 1.0) main.push_back({x, path_y(x)});
  Canvas cover{};
  stroke(main, width, cover);
  for (double offset : {10.0, 22.0, 34.0}) {
    const double bx = x0 + offset;
    const Point start{bx, path_y(bx)};
    const Point end{bx + branch_len * std::numbers::sqrt2 / 2.0, start.y + dir * branch_len * std::numbers::sqrt2 / 2.0};
    stroke({start, end}, 0.6 * width, cover);
  }
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = px[i] * (1.0 - cover[i]) + intensity * cover[i];
}

inline void draw_cfp(const BiomarkerVector& b, Canvas& px) {
  for (std::size_t r = 0; r < kScanSize; ++r) {
    for (std::size_t c = 0; c < kScanSize; ++c) {
      const double x = static_cast<double>(c) + 0.5;
      const double y = static_cast<double>(r) + 0.5;
      const double d2 = ((x - 32.0) * (x - 32.0) + (y - 32.0) * (y - 32.0)) / (45.0 * 45.0);
      double v = 0.55 - 0.25 * d2;
      const double cdr = b[kCupDiscIndex];
      const double disc = ellipse_coverage(x, y, kDiscRx, kDiscRy);
      const double cup = ellipse_coverage(x, y, cdr * kDiscRx, cdr * kDiscRy);
      v = v * (1.0 - disc) + 0.75 * disc;
      v = v * (1.0 - cup) + 0.95 * cup;
      px[r * kScanSize + c] = v;
    }
  }
  const double av = b.at("av_ratio");
  const double vein_width = 2.6;
  const double artery_width = std::clamp(av * vein_width, 0.6, 3.5);
  auto amplitude = [](double tortuosity) { return std::clamp(30.0 * (tortuosity - 1.0), 0.0, 8.0); };
  auto branch = [](double fd, double mean) { return std::clamp(8.0 + 60.0 * (fd - mean), 1.0, 18.0); };
  const double a_amp = amplitude(b.at("artery_tortuosity"));
  const double v_amp = amplitude(b.at("vein_tortuosity"));
  const double a_len = branch(b.at("artery_fractal_dim"), biomarker_spec(biomarker_index("artery_fractal_dim")).mean());
  const double v_len = branch(b.at("vein_fractal_dim"), biomarker_spec(biomarker_index("vein_fractal_dim")).mean());
  draw_vessel({-4.0, -0.60, 18.0, 0.0}, vein_width, v_amp, v_len, 0.15, px);
  draw_vessel({4.0, 0.60, 18.0, 1.0}, vein_width, v_amp, v_len, 0.15, px);
  draw_vessel({-2.0, -0.30, 14.0, 2.0}, artery_width, a_amp, a_len, 0.28, px);
  draw_vessel({2.0, 0.30, 14.0, 3.0}, artery_width, a_amp, a_len, 0.28, px);
}

}  // namespace render_detail

/// Deterministic rendering; `noise_sigma` = 0 gives the clean image.
inline SyntheticScan render_scan(const BiomarkerVector& b, Modality modality, std::uint64_t seed,
                                 double noise_sigma = kSpeckleSigma) {
  b.validate();
  render_detail::Canvas px{};
  if (modality == Modality::oct) render_detail::draw_oct(b, px);
  else render_detail::draw_cfp(b, px);
  SyntheticScan scan;
  scan.modality = modality;
  scan.source_biomarkers = b;
  scan.pixels.resize(px.size());
  Rng rng(seed);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double noisy = noise_sigma > 0.0 ? px[i] + noise_sigma * rng.normal() : px[i];
    scan.pixels[i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
  return scan;
}

}  // namespace oculus
