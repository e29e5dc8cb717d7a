#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "grrnn/image.hpp"
#include "grrnn/manifest.hpp"
#include "grrnn/tensor.hpp"

namespace grrnn {

/// One model-ready sample: a 64x128x1 canvas plus its labels.
template <typename T>
struct Sample {
  Tensor<T> image;
  std::size_t label = 0;  // index into LoadedDataset::writer_ids
  int writer_id = 0;
  int page_id = 0;
  int line_id = 0;
  std::string path;
};

template <typename T>
struct LoadedDataset {
  std::vector<Sample<T>> train, test;
  std::vector<int> writer_ids;  // sorted ascending; label = position

  std::size_t n_writers() const { return writer_ids.size(); }

  std::size_t label_of(int writer_id) const {
    auto it = std::lower_bound(writer_ids.begin(), writer_ids.end(), writer_id);
    if (it == writer_ids.end() || *it != writer_id)
      throw DataError("unknown writer id " + std::to_string(writer_id));
    return static_cast<std::size_t>(it - writer_ids.begin());
  }
};

/// Read a manifest and every image it references, producing mode-processed
/// canvases.  Writer labels are assigned by sorted writer id over both splits.
template <typename T>
LoadedDataset<T> load_dataset(const std::string& manifest_path, ImageMode mode) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  if (entries.empty()) throw DataError("manifest is empty: " + manifest_path);

  LoadedDataset<T> ds;
  ds.writer_ids.reserve(entries.size());
  for (const auto& e : entries) ds.writer_ids.push_back(e.writer_id);
  std::sort(ds.writer_ids.begin(), ds.writer_ids.end());
  ds.writer_ids.erase(std::unique(ds.writer_ids.begin(), ds.writer_ids.end()),
                      ds.writer_ids.end());
  if (ds.writer_ids.size() < 2)
    throw DataError("dataset needs at least 2 writers, found " +
                    std::to_string(ds.writer_ids.size()));

  // Relative image paths are resolved against the manifest's own directory so
  // a generated corpus stays relocatable.
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  for (const auto& e : entries) {
    std::filesystem::path img = e.image_path;
    if (img.is_relative()) img = base / img;
    Sample<T> s;
    s.image = prepare_input<T>(read_pgm(img.string()), mode);
    s.label = ds.label_of(e.writer_id);
    s.writer_id = e.writer_id;
    s.page_id = e.page_id;
    s.line_id = e.line_id;
    s.path = e.image_path;
    (e.split == "train" ? ds.train : ds.test).push_back(std::move(s));
  }
  return ds;
}

/// Stack selected samples into one (n,64,128,1) batch, optionally applying
/// the translation augmentation with draws from `rng`.
template <typename T>
Tensor<T> make_batch(const std::vector<Sample<T>>& samples,
                     const std::vector<std::size_t>& order, std::size_t begin,
                     std::size_t end, std::vector<std::size_t>& labels_out,
                     Rng* augment_rng = nullptr, T pad = T(0)) {
  if (end > order.size() || begin >= end)
    throw ValueError("make_batch: empty or out-of-range slice");
  const std::size_t n = end - begin;
  auto batch = Tensor<T>::zeros({n, kCanvasH, kCanvasW, 1});
  labels_out.resize(n);
  const std::size_t px = kCanvasH * kCanvasW;
  for (std::size_t b = 0; b < n; ++b) {
    const Sample<T>& s = samples[order[begin + b]];
    Tensor<T> img = s.image;
    if (augment_rng) img = translate_augment(img, *augment_rng, pad);
    std::copy(img.data(), img.data() + px, batch.data() + b * px);
    labels_out[b] = s.label;
  }
  return batch;
}

/// Deterministic Fisher-Yates shuffle driven by the library generator.
inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1],
              idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
}

}  // namespace grrnn
