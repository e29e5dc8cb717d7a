#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "grrnn/common.hpp"
#include "grrnn/image.hpp"
#include "grrnn/manifest.hpp"

namespace grrnn {

/// Per-writer rendering style.  Every field is a pure function of the writer's
/// sub-seed, so the same (master seed, writer index) pair always reproduces the
/// same tuple, while distinct writers draw distinct tuples.
struct WriterStyle {
  double slant_deg = 0.0;      // mean italic slant of the writer
  double slant_jitter = 0.0;   // per-word slant deviation (degrees)
  double stroke_width = 1.0;   // pen thickness in pixels
  double curvature = 0.0;      // per-word control-point perturbation amplitude
  double wobble = 0.0;         // baseline wobble amplitude in pixels
  double ink_noise = 0.0;      // multiplicative ink-texture noise level
  double ink_dark = 0.2;       // base ink intensity (0 = black)
  double glyph_scale = 30.0;   // glyph body height in pixels

  friend bool operator==(const WriterStyle& a, const WriterStyle& b) {
    return a.slant_deg == b.slant_deg && a.slant_jitter == b.slant_jitter &&
           a.stroke_width == b.stroke_width && a.curvature == b.curvature &&
           a.wobble == b.wobble && a.ink_noise == b.ink_noise &&
           a.ink_dark == b.ink_dark && a.glyph_scale == b.glyph_scale;
  }
};

/// A pseudo-glyph: a chain of quadratic spline segments inside the unit box.
/// pts has odd size >= 3; even indices are on-curve points, odd indices are
/// the control points between them.
struct Glyph {
  std::vector<std::array<double, 2>> pts;
};

namespace detail {

inline std::uint64_t writer_seed(std::uint64_t master, std::size_t writer_index) {
  return mix64(master ^ mix64(0x5752495445525321ULL +
                              writer_index * 0x9E3779B97F4A7C15ULL));
}

inline std::uint64_t word_seed(std::uint64_t writer, std::size_t word_index) {
  return mix64(writer ^ (0x574F52445F696478ULL +
                         word_index * 0xBF58476D1CE4E5B9ULL));
}

}  // namespace detail

/// Draw the style tuple for one writer of a corpus.
inline WriterStyle make_writer_style(std::uint64_t master_seed,
                                     std::size_t writer_index) {
  Rng rng(detail::writer_seed(master_seed, writer_index));
  WriterStyle s;
  s.slant_deg = rng.uniform(-30.0, 30.0);
  s.slant_jitter = rng.uniform(1.0, 4.0);
  s.stroke_width = rng.uniform(1.3, 3.2);
  s.curvature = rng.uniform(0.08, 0.5);
  s.wobble = rng.uniform(0.5, 3.0);
  s.ink_noise = rng.uniform(0.05, 0.35);
  s.ink_dark = rng.uniform(0.08, 0.42);
  s.glyph_scale = rng.uniform(26.0, 38.0);
  return s;
}

/// The fixed per-writer alphabet of glyph prototypes.  Drawn from a stream
/// derived from the writer's sub-seed, so prototypes are stationary over the
/// corpus and independent of the style draws.
inline std::vector<Glyph> make_writer_glyphs(std::uint64_t master_seed,
                                             std::size_t writer_index,
                                             std::size_t count = 6) {
  Rng rng(mix64(detail::writer_seed(master_seed, writer_index) ^
                0x676C7970687A2121ULL));
  std::vector<Glyph> glyphs(count);
  for (auto& g : glyphs) {
    const std::size_t segments = static_cast<std::size_t>(rng.uniform_int(2, 4));
    g.pts.resize(2 * segments + 1);
    for (auto& p : g.pts) p = {rng.next_real(), rng.next_real()};
  }
  return glyphs;
}

namespace detail {

/// Anti-aliased darkest-wins disk stamp.
inline void stamp_disk(RawImage& img, double cx, double cy, double radius,
                       double ink) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1.0)));
  const int y1 = std::min(static_cast<int>(img.height) - 1,
                          static_cast<int>(std::ceil(cy + radius + 1.0)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1.0)));
  const int x1 = std::min(static_cast<int>(img.width) - 1,
                          static_cast<int>(std::ceil(cx + radius + 1.0)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - cx, y - cy);
      const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (cover <= 0.0) continue;
      const double candidate = 1.0 - cover * (1.0 - ink);
      double& px = img.pixels[static_cast<std::size_t>(y) * img.width +
                              static_cast<std::size_t>(x)];
      px = std::min(px, candidate);
    }
}

}  // namespace detail

/// Render one pseudo-word straight onto a white 64x128 canvas.  All randomness
/// comes from the word's own stream, so words are independent of generation
/// order.
inline RawImage render_word(const WriterStyle& style,
                            const std::vector<Glyph>& glyphs,
                            std::uint64_t master_seed, std::size_t writer_index,
                            std::size_t word_index) {
  if (glyphs.empty()) throw ValueError("render_word: writer has no glyphs");
  Rng rng(detail::word_seed(detail::writer_seed(master_seed, writer_index),
                            word_index));
  RawImage img;
  img.height = kCanvasH;
  img.width = kCanvasW;
  img.pixels.assign(img.height * img.width, 1.0);

  const std::size_t n_glyphs = static_cast<std::size_t>(rng.uniform_int(4, 8));
  const double adv = std::min(15.0, 112.0 / static_cast<double>(n_glyphs));
  const double gw = adv * 1.15;
  const double gh = style.glyph_scale;
  const double slant_rad =
      (style.slant_deg + style.slant_jitter * rng.normal()) * M_PI / 180.0;
  const double shear = std::tan(slant_rad) * 0.6;
  const double baseline = 44.0 + rng.uniform(-2.0, 2.0);
  const double span = adv * static_cast<double>(n_glyphs - 1) + gw +
                      std::abs(shear) * gh;
  const double x_start = std::max(
      2.0, (static_cast<double>(kCanvasW) - span) / 2.0 + rng.uniform(-2.0, 2.0));
  const double wobble_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double wobble_wavelen = rng.uniform(64.0, 128.0);
  const double radius = std::max(0.55, style.stroke_width / 2.0);

  for (std::size_t g = 0; g < n_glyphs; ++g) {
    const Glyph& proto =
        glyphs[static_cast<std::size_t>(rng.uniform_int(0, glyphs.size() - 1))];
    const double gx = x_start + adv * static_cast<double>(g);

    // Map the unit-box prototype onto the canvas, perturbing each point once
    // so chained segments stay connected.
    std::vector<std::array<double, 2>> pts(proto.pts.size());
    for (std::size_t i = 0; i < proto.pts.size(); ++i) {
      const double jx = style.curvature * gh * 0.15 * rng.normal();
      const double jy = style.curvature * gh * 0.15 * rng.normal();
      double x = gx + proto.pts[i][0] * gw + jx;
      double y = baseline - proto.pts[i][1] * gh + jy;
      x += shear * (baseline - y);
      y += style.wobble *
           std::sin(2.0 * M_PI * x / wobble_wavelen + wobble_phase);
      pts[i] = {x, y};
    }

    for (std::size_t s = 0; s + 2 < pts.size(); s += 2) {
      const auto &p0 = pts[s], &pc = pts[s + 1], &p1 = pts[s + 2];
      const double approx_len = std::hypot(pc[0] - p0[0], pc[1] - p0[1]) +
                                std::hypot(p1[0] - pc[0], p1[1] - pc[1]);
      const std::size_t steps = std::max<std::size_t>(
          8, static_cast<std::size_t>(std::ceil(approx_len / 0.35)));
      const double tex_freq = rng.uniform(3.0, 9.0);
      const double tex_phase = rng.uniform(0.0, 2.0 * M_PI);
      const double tex_freq2 = rng.uniform(7.0, 19.0);
      const double tex_phase2 = rng.uniform(0.0, 2.0 * M_PI);
      for (std::size_t k = 0; k <= steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        const double u = 1.0 - t;
        const double bx = u * u * p0[0] + 2.0 * u * t * pc[0] + t * t * p1[0];
        const double by = u * u * p0[1] + 2.0 * u * t * pc[1] + t * t * p1[1];
        const double tex = std::sin(tex_freq * t + tex_phase) +
                           0.4 * std::sin(tex_freq2 * t + tex_phase2);
        const double ink =
            std::clamp(style.ink_dark * (1.0 + style.ink_noise * tex), 0.02, 0.6);
        detail::stamp_disk(img, bx, by, radius, ink);
      }
    }
  }
  return img;
}

/// Summary of one generated corpus.
struct GenResult {
  std::string manifest_path;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

/// Generate a deterministic corpus of pseudo-word images under `out_dir`:
/// out_dir/writer_NNNN/word_NNNN.pgm plus a manifest.tsv with relative paths.
/// Words are grouped 5 per line and 4 lines (20 words) per page; each writer's
/// last ceil(pages * 0.2) pages form the test split, so no page is ever split
/// across train and test.  A writer with a single page contributes no test
/// rows.
inline GenResult generate_corpus(std::size_t n_writers,
                                 std::size_t words_per_writer,
                                 std::uint64_t seed, const std::string& out_dir) {
  if (n_writers < 2)
    throw ConfigError("generate_corpus: need at least 2 writers");
  if (words_per_writer < 2)
    throw ConfigError("generate_corpus: need at least 2 words per writer");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir))
    throw IoError("cannot create output directory '" + out_dir + "'");

  const std::size_t pages = (words_per_writer + 19) / 20;
  const std::size_t test_pages = std::min((pages + 4) / 5, pages - 1);

  GenResult result;
  std::vector<ManifestEntry> rows;
  rows.reserve(n_writers * words_per_writer);
  char name[64];

  for (std::size_t w = 0; w < n_writers; ++w) {
    const WriterStyle style = make_writer_style(seed, w);
    const std::vector<Glyph> glyphs = make_writer_glyphs(seed, w);
    std::snprintf(name, sizeof(name), "writer_%04zu", w);
    const std::string writer_dir = name;
    fs::create_directories(fs::path(out_dir) / writer_dir, ec);
    if (ec) throw IoError("cannot create directory '" + writer_dir + "'");

    for (std::size_t i = 0; i < words_per_writer; ++i) {
      const RawImage img = render_word(style, glyphs, seed, w, i);
      std::snprintf(name, sizeof(name), "word_%04zu.pgm", i);
      const std::string rel = writer_dir + "/" + name;
      write_pgm((fs::path(out_dir) / rel).string(), img);

      ManifestEntry e;
      e.image_path = rel;
      e.writer_id = static_cast<int>(w);
      e.page_id = static_cast<int>(i / 20);
      e.line_id = static_cast<int>(i / 5);
      const bool is_test =
          static_cast<std::size_t>(e.page_id) >= pages - test_pages;
      e.split = is_test ? "test" : "train";
      (is_test ? result.n_test : result.n_train) += 1;
      rows.push_back(std::move(e));
    }
  }

  result.manifest_path = (fs::path(out_dir) / "manifest.tsv").string();
  write_manifest(result.manifest_path, rows);
  return result;
}

}  // namespace grrnn
