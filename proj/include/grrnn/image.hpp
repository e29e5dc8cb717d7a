#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "grrnn/tensor.hpp"

namespace grrnn {

inline constexpr std::size_t kCanvasH = 64;
inline constexpr std::size_t kCanvasW = 128;

/// Grayscale intensity image, row-major, values in [0,1]: 0 = ink, 1 = paper.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  bool empty() const { return width == 0 || height == 0; }
};

/// {0,1} mask, row-major, 1 = foreground (ink or contour).
struct BinaryImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> mask;

  std::uint8_t at(std::size_t y, std::size_t x) const { return mask[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return mask[y * width + x]; }
};

enum class ImageMode { kGray, kBinary, kContour };

inline const char* mode_name(ImageMode m) {
  switch (m) {
    case ImageMode::kGray: return "gray";
    case ImageMode::kBinary: return "binary";
    case ImageMode::kContour: return "contour";
  }
  return "?";
}

inline ImageMode parse_image_mode(const std::string& s) {
  if (s == "gray") return ImageMode::kGray;
  if (s == "binary") return ImageMode::kBinary;
  if (s == "contour") return ImageMode::kContour;
  throw ConfigError("unknown image mode '" + s + "' (expected gray|binary|contour)");
}

/// Padding intensity used when fitting this mode onto the fixed canvas.
inline double mode_padding(ImageMode m) {
  return m == ImageMode::kGray ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// PGM I/O (P5, 8-bit)

namespace detail {
inline int pgm_next_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!tok.empty()) return 0;
    } else {
      tok.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return tok.empty() ? -1 : 0;
}
}  // namespace detail

inline RawImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  // Header: magic, width, height, maxval, then one whitespace byte, then raster.
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') throw IoError("'" + path + "' is not a P5 PGM file");
  std::string tok;
  long vals[3];
  for (int i = 0; i < 3; ++i) {
    if (detail::pgm_next_token(in, tok) != 0) throw IoError("'" + path + "': truncated header");
    try {
      vals[i] = std::stol(tok);
    } catch (...) {
      throw IoError("'" + path + "': malformed header token '" + tok + "'");
    }
  }
  const long w = vals[0], h = vals[1], maxval = vals[2];
  if (w < 1 || h < 1) throw IoError("'" + path + "': non-positive image dimensions");
  if (maxval < 1 || maxval > 255)
    throw IoError("'" + path + "': unsupported maxval " + std::to_string(maxval) +
                  " (must be in [1,255])");
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IoError("'" + path + "': truncated pixel data");

  RawImage img;
  img.width = static_cast<std::size_t>(w);
  img.height = static_cast<std::size_t>(h);
  img.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    img.pixels[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
  return img;
}

inline void write_pgm(const std::string& path, const RawImage& img) {
  if (img.empty()) throw IoError("refusing to write empty image to '" + path + "'");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<std::uint8_t> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(img.pixels[i], 0.0, 1.0);
    raw[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// Binarization and contours

/// Global threshold maximizing between-class variance over a 256-bin
/// histogram of [0,1]; ties resolved toward the smallest boundary. Pixels
/// strictly below the returned value are foreground. A constant image
/// returns its constant (so binarization marks nothing).
inline double otsu_threshold(const RawImage& img) {
  if (img.empty()) throw ValueError("otsu_threshold: empty image");
  const auto [mn, mx] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  if (*mn == *mx) return *mn;

  constexpr int kBins = 256;
  std::vector<double> hist(kBins, 0.0);
  for (const double v : img.pixels) {
    int b = static_cast<int>(v * kBins);
    b = std::clamp(b, 0, kBins - 1);
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(img.pixels.size());

  // One cumulative pass; class 0 is bins [0, k), class 1 is bins [k, 256).
  double sum_all = 0.0;
  for (int b = 0; b < kBins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_k = 0;
  for (int k = 0; k < kBins; ++k) {
    if (k > 0) {
      w0 += hist[k - 1];
      sum0 += (k - 1) * hist[k - 1];
    }
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (sum_all - sum0) / w1;
    const double sigma = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (sigma > best) {
      best = sigma;
      best_k = k;
    }
  }
  return static_cast<double>(best_k) / kBins;
}

inline BinaryImage binarize(const RawImage& img, double threshold) {
  BinaryImage out;
  out.width = img.width;
  out.height = img.height;
  out.mask.resize(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    out.mask[i] = img.pixels[i] < threshold ? 1 : 0;
  return out;
}

/// Foreground pixels having at least one background 4-neighbor; pixels on the
/// image border always count as boundary when set.
inline BinaryImage extract_contour(const BinaryImage& bin) {
  BinaryImage out;
  out.width = bin.width;
  out.height = bin.height;
  out.mask.assign(bin.mask.size(), 0);
  const auto bg = [&](long y, long x) {
    if (y < 0 || x < 0 || y >= static_cast<long>(bin.height) ||
        x >= static_cast<long>(bin.width))
      return true;
    return bin.mask[static_cast<std::size_t>(y) * bin.width + static_cast<std::size_t>(x)] == 0;
  };
  for (std::size_t y = 0; y < bin.height; ++y)
    for (std::size_t x = 0; x < bin.width; ++x) {
      if (!bin.at(y, x)) continue;
      const long ly = static_cast<long>(y), lx = static_cast<long>(x);
      if (bg(ly - 1, lx) || bg(ly + 1, lx) || bg(ly, lx - 1) || bg(ly, lx + 1))
        out.at(y, x) = 1;
    }
  return out;
}

/// View a mask as an intensity image (ink black on white paper).
inline RawImage mask_to_raw(const BinaryImage& bin) {
  RawImage out;
  out.width = bin.width;
  out.height = bin.height;
  out.pixels.resize(bin.mask.size());
  for (std::size_t i = 0; i < bin.mask.size(); ++i)
    out.pixels[i] = bin.mask[i] ? 0.0 : 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Canvas fitting

struct CanvasLayout {
  std::size_t content_h, content_w;  // scaled content size
  std::size_t top, left;             // placement offset on the canvas
};

inline CanvasLayout canvas_layout(std::size_t h, std::size_t w) {
  if (h < 1 || w < 1) throw ValueError("canvas_layout: empty source image");
  const double scale = std::min(static_cast<double>(kCanvasH) / static_cast<double>(h),
                                static_cast<double>(kCanvasW) / static_cast<double>(w));
  auto fit = [](std::size_t dim, double s, std::size_t cap) {
    const auto r = static_cast<std::size_t>(std::lround(static_cast<double>(dim) * s));
    return std::clamp<std::size_t>(r, 1, cap);
  };
  CanvasLayout lay{};
  lay.content_h = fit(h, scale, kCanvasH);
  lay.content_w = fit(w, scale, kCanvasW);
  lay.top = (kCanvasH - lay.content_h) / 2;
  lay.left = (kCanvasW - lay.content_w) / 2;
  return lay;
}

/// Bilinear resample `values` (h x w, row-major) onto the 64x128 canvas,
/// preserving aspect ratio and centering; `pad` fills the margins.
template <typename T>
Tensor<T> resize_to_canvas_values(const std::vector<double>& values, std::size_t h,
                                  std::size_t w, double pad) {
  if (values.size() != h * w)
    throw ShapeError("resize_to_canvas: pixel count does not match dimensions");
  const CanvasLayout lay = canvas_layout(h, w);
  Tensor<T> out = Tensor<T>::full({kCanvasH, kCanvasW, 1}, static_cast<T>(pad));
  const double ry = static_cast<double>(h) / static_cast<double>(lay.content_h);
  const double rx = static_cast<double>(w) / static_cast<double>(lay.content_w);
  auto sample = [&](double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const auto x0 = static_cast<std::size_t>(sx);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const double fy = sy - static_cast<double>(y0);
    const double fx = sx - static_cast<double>(x0);
    const double top = values[y0 * w + x0] * (1.0 - fx) + values[y0 * w + x1] * fx;
    const double bot = values[y1 * w + x0] * (1.0 - fx) + values[y1 * w + x1] * fx;
    return top * (1.0 - fy) + bot * fy;
  };
  for (std::size_t oy = 0; oy < lay.content_h; ++oy)
    for (std::size_t ox = 0; ox < lay.content_w; ++ox) {
      const double sy = (static_cast<double>(oy) + 0.5) * ry - 0.5;
      const double sx = (static_cast<double>(ox) + 0.5) * rx - 0.5;
      out.data()[((lay.top + oy) * kCanvasW + lay.left + ox)] = static_cast<T>(sample(sy, sx));
    }
  return out;
}

template <typename T>
Tensor<T> resize_to_canvas(const RawImage& img, ImageMode mode) {
  if (img.empty()) throw ValueError("resize_to_canvas: empty image");
  if (mode == ImageMode::kGray)
    return resize_to_canvas_values<T>(img.pixels, img.height, img.width, mode_padding(mode));
  // Binary/contour canvases must stay strictly {0,1}, so thresholding happens
  // after the (interpolating) resize.  The threshold itself comes from the
  // original image, where the histogram is free of padding mass.
  const double t = otsu_threshold(img);
  const Tensor<double> gray =
      resize_to_canvas_values<double>(img.pixels, img.height, img.width, 1.0);
  BinaryImage bin;
  bin.height = kCanvasH;
  bin.width = kCanvasW;
  bin.mask.resize(kCanvasH * kCanvasW);
  for (std::size_t i = 0; i < bin.mask.size(); ++i)
    bin.mask[i] = gray.data()[i] < t ? 1 : 0;
  const BinaryImage chosen = mode == ImageMode::kBinary ? bin : extract_contour(bin);
  Tensor<T> out = Tensor<T>::zeros({kCanvasH, kCanvasW, 1});
  for (std::size_t i = 0; i < chosen.mask.size(); ++i)
    out.data()[i] = static_cast<T>(chosen.mask[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Translation augmentation

/// Shift by (dy, dx) pixels (positive = down / right); vacated cells get `pad`.
template <typename T>
Tensor<T> translate_by(const Tensor<T>& img, long dy, long dx, T pad) {
  if (img.rank() != 3 || img.dim(2) != 1)
    throw ShapeError("translate_by: expected (h,w,1) tensor, got " + shape_str(img.shape()));
  const long h = static_cast<long>(img.dim(0));
  const long w = static_cast<long>(img.dim(1));
  Tensor<T> out = Tensor<T>::full(img.shape(), pad);
  for (long y = 0; y < h; ++y) {
    const long sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < w; ++x) {
      const long sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      out.data()[y * w + x] = img.data()[sy * w + sx];
    }
  }
  return out;
}

inline constexpr long kAugmentShift = 4;

/// Random integer shift, each axis uniform in [-4, +4]; vertical drawn first.
template <typename T>
Tensor<T> translate_augment(const Tensor<T>& img, Rng& rng, T pad) {
  const long dy = rng.uniform_int(-kAugmentShift, kAugmentShift);
  const long dx = rng.uniform_int(-kAugmentShift, kAugmentShift);
  return translate_by(img, dy, dx, pad);
}

template <typename T>
Tensor<T> translate_augment(const Tensor<T>& img, std::uint64_t seed, T pad) {
  Rng rng(seed);
  return translate_augment(img, rng, pad);
}

/// Full preprocessing for one raw image in the given mode.
template <typename T>
Tensor<T> prepare_input(const RawImage& img, ImageMode mode) {
  return resize_to_canvas<T>(img, mode);
}

}  // namespace grrnn
