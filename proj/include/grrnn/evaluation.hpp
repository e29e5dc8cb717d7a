#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "grrnn/dataset.hpp"
#include "grrnn/model.hpp"

namespace grrnn {

// ---------------------------------------------------------------------------
// Classification records

/// One evaluated sample: identity labels plus its class-probability vector.
struct PredictionRecord {
  std::string sample_id;
  std::size_t label = 0;  // true class index
  int writer_id = 0;
  int page_id = 0;
  int line_id = 0;
  std::vector<double> probs;
};

inline void validate_record(const PredictionRecord& r) {
  if (r.probs.empty()) throw DataError("prediction record has no probabilities");
  if (r.label >= r.probs.size())
    throw DataError("prediction label " + std::to_string(r.label) +
                    " out of range for " + std::to_string(r.probs.size()) + " classes");
  double sum = 0.0;
  for (double p : r.probs) {
    if (!(p >= 0.0)) throw DataError("negative or non-finite probability in record");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw DataError("record probabilities sum to " + std::to_string(sum));
}

/// Rank of the true class: classes with strictly higher probability come
/// first, equal probabilities are ordered by class index.
inline std::size_t true_class_rank(const PredictionRecord& r) {
  const double py = r.probs[r.label];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < r.probs.size(); ++j) {
    if (r.probs[j] > py) ++rank;
    if (j < r.label && r.probs[j] == py) ++rank;
  }
  return rank;
}

inline double topk_accuracy(const std::vector<PredictionRecord>& records,
                            std::size_t k) {
  if (records.empty()) throw ValueError("topk_accuracy: no records");
  if (k == 0) throw ValueError("topk_accuracy: k must be at least 1");
  std::size_t hits = 0;
  for (const auto& r : records) {
    validate_record(r);
    if (true_class_rank(r) < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

/// Mean of the probability vectors of one line/page group.
inline PredictionRecord aggregate_group(const std::vector<PredictionRecord>& group) {
  if (group.empty()) throw ValueError("aggregate_group: empty group");
  PredictionRecord out = group.front();
  for (const auto& r : group) {
    validate_record(r);
    if (r.label != out.label || r.writer_id != out.writer_id)
      throw DataError("aggregate_group: mixed writer labels in one group");
    if (r.probs.size() != out.probs.size())
      throw DataError("aggregate_group: inconsistent class counts");
  }
  std::fill(out.probs.begin(), out.probs.end(), 0.0);
  for (const auto& r : group)
    for (std::size_t j = 0; j < out.probs.size(); ++j) out.probs[j] += r.probs[j];
  for (double& p : out.probs) p /= static_cast<double>(group.size());
  return out;
}

namespace detail {

template <typename KeyFn>
std::vector<PredictionRecord> aggregate_by(const std::vector<PredictionRecord>& records,
                                           const KeyFn& key) {
  std::map<decltype(key(records.front())), std::vector<PredictionRecord>> groups;
  for (const auto& r : records) groups[key(r)].push_back(r);
  std::vector<PredictionRecord> out;
  out.reserve(groups.size());
  for (auto& [k, g] : groups) out.push_back(aggregate_group(g));
  return out;
}

}  // namespace detail

/// Group word records into one record per text line (a line belongs to one
/// page of one writer).
inline std::vector<PredictionRecord> aggregate_by_line(
    const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ValueError("aggregate_by_line: no records");
  return detail::aggregate_by(records, [](const PredictionRecord& r) {
    return std::tuple<int, int, int>(r.writer_id, r.page_id, r.line_id);
  });
}

inline std::vector<PredictionRecord> aggregate_by_page(
    const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ValueError("aggregate_by_page: no records");
  return detail::aggregate_by(records, [](const PredictionRecord& r) {
    return std::tuple<int, int>(r.writer_id, r.page_id);
  });
}

// ---------------------------------------------------------------------------
// Feature-space identification

inline std::vector<double> l2_normalize(std::vector<double> v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw DataError("cannot normalize a zero or non-finite feature vector");
  for (double& x : v) x /= norm;
  return v;
}

/// How a writer's mean feature is formed from its training features.
enum class WriterMean {
  kNormalizedThenMean,  // normalize each word feature, average, re-normalize
  kRawMean,             // average raw features, then normalize
};

struct WriterModel {
  int writer_id = 0;
  std::vector<double> mean;  // unit norm
};

inline std::vector<WriterModel> build_writer_models(
    const std::vector<std::pair<int, std::vector<double>>>& features,
    WriterMean kind = WriterMean::kNormalizedThenMean) {
  if (features.empty()) throw ValueError("build_writer_models: no features");
  std::map<int, std::pair<std::vector<double>, std::size_t>> acc;
  for (const auto& [writer, feat] : features) {
    const std::vector<double> v =
        kind == WriterMean::kNormalizedThenMean ? l2_normalize(feat) : feat;
    auto& slot = acc[writer];
    if (slot.first.empty()) slot.first.assign(v.size(), 0.0);
    if (slot.first.size() != v.size())
      throw ShapeError("build_writer_models: inconsistent feature dimensions");
    for (std::size_t i = 0; i < v.size(); ++i) slot.first[i] += v[i];
    ++slot.second;
  }
  std::vector<WriterModel> models;
  models.reserve(acc.size());
  for (auto& [writer, slot] : acc) {
    for (double& x : slot.first) x /= static_cast<double>(slot.second);
    models.push_back({writer, l2_normalize(std::move(slot.first))});
  }
  return models;  // std::map iteration: ascending writer id
}

struct NnRanking {
  std::vector<std::pair<int, double>> ranked;  // (writer id, distance) ascending

  int best() const { return ranked.front().first; }

  /// Position of `writer` in the ranking (0 = nearest).
  std::size_t rank_of(int writer) const {
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].first == writer) return i;
    throw DataError("writer " + std::to_string(writer) + " is not in the gallery");
  }
};

/// Writers sorted by ascending Euclidean distance to the query; equal
/// distances are ordered by writer id.
inline NnRanking nn_identify(const std::vector<double>& query,
                             const std::vector<WriterModel>& models) {
  if (models.size() < 2)
    throw ValueError("nn_identify: need at least 2 writer models, got " +
                     std::to_string(models.size()));
  NnRanking out;
  out.ranked.reserve(models.size());
  for (const auto& m : models) {
    if (m.mean.size() != query.size())
      throw ShapeError("nn_identify: query dimension " + std::to_string(query.size()) +
                       " does not match model dimension " +
                       std::to_string(m.mean.size()));
    double d2 = 0.0;
    for (std::size_t i = 0; i < query.size(); ++i) {
      const double d = query[i] - m.mean[i];
      d2 += d * d;
    }
    out.ranked.emplace_back(m.writer_id, std::sqrt(d2));
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second < b.second;
                     return a.first < b.first;
                   });
  return out;
}

// ---------------------------------------------------------------------------
// Model drivers

/// Evaluation-mode class probabilities for every sample.
template <typename T>
std::vector<PredictionRecord> evaluate_classification(GrrnnModel<T>& model,
                                                      const std::vector<Sample<T>>& samples,
                                                      std::size_t batch = 32) {
  if (samples.empty()) throw DataError("evaluate_classification: no samples");
  if (batch == 0) throw ConfigError("evaluate_classification: batch must be positive");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t classes = model.spec().n_writers;

  std::vector<PredictionRecord> records;
  records.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const std::size_t end = std::min(begin + batch, samples.size());
    std::vector<std::size_t> labels;
    auto input = make_batch(samples, order, begin, end, labels);
    auto fwd = model.forward(nullptr, input, false);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const Sample<T>& s = samples[begin + b];
      PredictionRecord r;
      r.sample_id = s.path;
      r.label = s.label;
      r.writer_id = s.writer_id;
      r.page_id = s.page_id;
      r.line_id = s.line_id;
      r.probs.resize(classes);
      const T* row = fwd.logits.data() + b * classes;
      double mx = static_cast<double>(row[0]);
      for (std::size_t j = 1; j < classes; ++j)
        mx = std::max(mx, static_cast<double>(row[j]));
      double sum = 0.0;
      for (std::size_t j = 0; j < classes; ++j) {
        r.probs[j] = std::exp(static_cast<double>(row[j]) - mx);
        sum += r.probs[j];
      }
      for (double& p : r.probs) p /= sum;
      records.push_back(std::move(r));
    }
  }
  return records;
}

/// Raw (unnormalized) head features, one row per sample.
template <typename T>
std::vector<std::vector<double>> extract_features_raw(GrrnnModel<T>& model,
                                                      const std::vector<Sample<T>>& samples,
                                                      std::size_t batch = 32) {
  if (samples.empty()) throw DataError("extract_features_raw: no samples");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += batch) {
    const std::size_t end = std::min(begin + batch, samples.size());
    std::vector<std::size_t> labels;
    auto input = make_batch(samples, order, begin, end, labels);
    auto fwd = model.forward(nullptr, input, false);
    const std::size_t dim = fwd.feature.dim(1);
    for (std::size_t b = 0; b < end - begin; ++b) {
      std::vector<double> f(dim);
      for (std::size_t i = 0; i < dim; ++i)
        f[i] = static_cast<double>(fwd.feature.data()[b * dim + i]);
      out.push_back(std::move(f));
    }
  }
  return out;
}

/// The unit-norm signature of one image.
template <typename T>
std::vector<double> extract_feature(GrrnnModel<T>& model, const Tensor<T>& img) {
  auto fwd = model.forward(nullptr, img, false);
  const std::size_t dim = fwd.feature.numel();
  std::vector<double> f(dim);
  for (std::size_t i = 0; i < dim; ++i)
    f[i] = static_cast<double>(fwd.feature.data()[i]);
  return l2_normalize(std::move(f));
}

// ---------------------------------------------------------------------------
// Summaries and CSV emission

struct WriterAccuracy {
  int writer_id = 0;
  std::size_t samples = 0;
  double top1 = 0.0;
  double top5 = 0.0;
};

inline std::vector<WriterAccuracy> per_writer_accuracy(
    const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw ValueError("per_writer_accuracy: no records");
  std::map<int, WriterAccuracy> acc;
  for (const auto& r : records) {
    validate_record(r);
    auto& w = acc[r.writer_id];
    w.writer_id = r.writer_id;
    ++w.samples;
    const std::size_t rank = true_class_rank(r);
    if (rank < 1) w.top1 += 1.0;
    if (rank < 5) w.top5 += 1.0;
  }
  std::vector<WriterAccuracy> out;
  out.reserve(acc.size());
  for (auto& [id, w] : acc) {
    w.top1 /= static_cast<double>(w.samples);
    w.top5 /= static_cast<double>(w.samples);
    out.push_back(w);
  }
  return out;
}

struct ResultRow {
  std::string protocol;  // word | line | page | feature
  std::string variant;
  std::string axis;
  std::string mode;
  double top1 = 0.0;
  double top5 = 0.0;
};

inline constexpr const char* kResultsHeader = "protocol,variant,axis,mode,top1,top5";
inline constexpr const char* kPerWriterHeader = "protocol,writer_id,samples,top1,top5";

inline void write_results_csv(const std::string& path,
                              const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write results file: " + path);
  out << kResultsHeader << "\n";
  for (const auto& r : rows)
    out << r.protocol << ',' << r.variant << ',' << r.axis << ',' << r.mode << ','
        << format_metric(r.top1) << ',' << format_metric(r.top5) << "\n";
  if (!out) throw IoError("failed writing results file: " + path);
}

inline void write_per_writer_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<WriterAccuracy>>>& sections) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write per-writer file: " + path);
  out << kPerWriterHeader << "\n";
  for (const auto& [protocol, rows] : sections)
    for (const auto& w : rows)
      out << protocol << ',' << w.writer_id << ',' << w.samples << ','
          << format_metric(w.top1) << ',' << format_metric(w.top5) << "\n";
  if (!out) throw IoError("failed writing per-writer file: " + path);
}

/// Nearest-neighbor identification over writer mean features.
struct FeatureEvalResult {
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<WriterAccuracy> per_writer;
};

template <typename T>
FeatureEvalResult evaluate_feature_protocol(GrrnnModel<T>& model,
                                            const std::vector<Sample<T>>& train,
                                            const std::vector<Sample<T>>& test,
                                            WriterMean kind = WriterMean::kNormalizedThenMean,
                                            std::size_t batch = 32) {
  if (train.empty() || test.empty())
    throw DataError("feature protocol needs nonempty train and test splits");
  auto train_feats = extract_features_raw(model, train, batch);
  std::vector<std::pair<int, std::vector<double>>> labeled;
  labeled.reserve(train_feats.size());
  for (std::size_t i = 0; i < train_feats.size(); ++i)
    labeled.emplace_back(train[i].writer_id, std::move(train_feats[i]));
  const auto models = build_writer_models(labeled, kind);

  auto test_feats = extract_features_raw(model, test, batch);
  FeatureEvalResult res;
  std::map<int, WriterAccuracy> acc;
  for (std::size_t i = 0; i < test_feats.size(); ++i) {
    const auto ranking = nn_identify(l2_normalize(std::move(test_feats[i])), models);
    const std::size_t rank = ranking.rank_of(test[i].writer_id);
    auto& w = acc[test[i].writer_id];
    w.writer_id = test[i].writer_id;
    ++w.samples;
    if (rank < 1) {
      res.top1 += 1.0;
      w.top1 += 1.0;
    }
    if (rank < 5) {
      res.top5 += 1.0;
      w.top5 += 1.0;
    }
  }
  res.top1 /= static_cast<double>(test.size());
  res.top5 /= static_cast<double>(test.size());
  for (auto& [id, w] : acc) {
    w.top1 /= static_cast<double>(w.samples);
    w.top5 /= static_cast<double>(w.samples);
    res.per_writer.push_back(w);
  }
  return res;
}

}  // namespace grrnn
