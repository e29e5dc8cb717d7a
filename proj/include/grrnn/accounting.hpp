#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grrnn/model.hpp"

namespace grrnn {

/// Named size/cost line items, e.g. for the inspect command.
struct CostItem {
  std::string name;
  std::uint64_t value = 0;
};

namespace detail {

inline std::uint64_t conv_param_count(std::uint64_t ci, std::uint64_t co) {
  return 9 * ci * co + co;
}
inline std::uint64_t bn_param_count(std::uint64_t c) { return 2 * c; }
inline std::uint64_t dense_param_count(std::uint64_t in, std::uint64_t out) {
  return in * out + out;
}
inline std::uint64_t gru_param_count(std::uint64_t d) { return 6 * d * d + 3 * d; }

struct ChannelPlan {
  std::uint64_t c[4];
};

inline ChannelPlan plan_at(double width) {
  ChannelPlan p;
  for (int i = 0; i < 4; ++i) p.c[i] = scaled_channels(kChannelPlan[i], width);
  return p;
}

}  // namespace detail

/// Trainable parameter line items for one variant (running stats excluded).
inline std::vector<CostItem> param_breakdown(Variant v, std::size_t n_writers,
                                             double width = 1.0) {
  using namespace detail;
  const ChannelPlan p = plan_at(width);
  std::vector<CostItem> items;
  std::uint64_t ci = 1;
  const int last_block = variant_uses_global(v) ? 4 : 3;
  for (int b = 1; b <= last_block; ++b) {
    const std::uint64_t co = p.c[b - 1];
    items.push_back({"backbone.b" + std::to_string(b) + ".conv",
                     conv_param_count(ci, co) + conv_param_count(co, co)});
    items.push_back({"backbone.b" + std::to_string(b) + ".bn", 2 * bn_param_count(co)});
    ci = co;
  }
  if (variant_uses_fragments(v))
    items.push_back({"head.embed", dense_param_count(p.c[2], p.c[3])});
  if (variant_uses_gru(v)) items.push_back({"head.gru", gru_param_count(p.c[3])});
  items.push_back({"head.classifier", dense_param_count(p.c[3], n_writers)});
  return items;
}

/// Total trainable parameters for one variant.
inline std::uint64_t count_params(Variant v, std::size_t n_writers, double width = 1.0) {
  std::uint64_t total = 0;
  for (const auto& it : param_breakdown(v, n_writers, width)) total += it.value;
  return total;
}

/// Forward multiply-accumulate line items for one 64x128 input.  Convolutions
/// are counted for every executed block; the embedding and recurrence matmuls
/// are counted for the recurrent variants.  Elementwise work, pooling, global
/// averaging, batchnorm, and the classifier are excluded by convention.
inline std::vector<CostItem> flop_breakdown(Variant v, double width = 1.0) {
  using namespace detail;
  const ChannelPlan p = plan_at(width);
  std::vector<CostItem> items;
  std::uint64_t ci = 1, h = 64, w = 128;
  const int last_block = variant_uses_global(v) ? 4 : 3;
  for (int b = 1; b <= last_block; ++b) {
    const std::uint64_t co = p.c[b - 1];
    const std::uint64_t macs = h * w * 9 * (ci * co + co * co);
    items.push_back({"backbone.b" + std::to_string(b) + ".conv", macs});
    ci = co;
    h /= 2;
    w /= 2;
  }
  if (variant_uses_gru(v)) {
    items.push_back({"head.embed", kFragments * p.c[2] * p.c[3]});
    items.push_back({"head.gru", kFragments * 6 * p.c[3] * p.c[3]});
  }
  return items;
}

/// Total forward multiply-accumulates for one 64x128 input.
inline std::uint64_t count_flops(Variant v, double width = 1.0) {
  std::uint64_t total = 0;
  for (const auto& it : flop_breakdown(v, width)) total += it.value;
  return total;
}

}  // namespace grrnn
