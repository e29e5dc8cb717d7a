#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "grrnn/ops.hpp"

namespace grrnn {

// ---------------------------------------------------------------------------
// Variants

enum class Variant { kBaseline, kF, kFR, kFRR, kFGR, kFGRR };
enum class Axis { kHorizontal, kVertical };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kF: return "f";
    case Variant::kFR: return "fr";
    case Variant::kFRR: return "frr";
    case Variant::kFGR: return "fgr";
    case Variant::kFGRR: return "fgrr";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::kBaseline, Variant::kF, Variant::kFR, Variant::kFRR,
                    Variant::kFGR, Variant::kFGRR})
    if (s == variant_name(v)) return v;
  throw ConfigError("unknown variant '" + s + "' (expected baseline|f|fr|frr|fgr|fgrr)");
}

inline const char* axis_name(Axis a) {
  return a == Axis::kHorizontal ? "horizontal" : "vertical";
}

inline Axis parse_axis(const std::string& s) {
  if (s == "horizontal") return Axis::kHorizontal;
  if (s == "vertical") return Axis::kVertical;
  throw ConfigError("unknown axis '" + s + "' (expected horizontal|vertical)");
}

/// True for variants that run the recurrent cell.
inline bool variant_uses_gru(Variant v) {
  return v == Variant::kFR || v == Variant::kFRR || v == Variant::kFGR || v == Variant::kFGRR;
}

/// True for variants whose recurrence adds the fragment embedding back in.
inline bool variant_residual(Variant v) {
  return v == Variant::kFRR || v == Variant::kFGRR;
}

/// True for variants that compute the global context vector (and block 4).
inline bool variant_uses_global(Variant v) {
  return v == Variant::kBaseline || v == Variant::kFGR || v == Variant::kFGRR;
}

/// True for variants that segment and embed fragments.
inline bool variant_uses_fragments(Variant v) { return v != Variant::kBaseline; }

inline constexpr std::size_t kFragments = 8;
inline constexpr std::size_t kChannelPlan[4] = {64, 128, 256, 512};

inline std::size_t scaled_channels(std::size_t base, double width) {
  const auto c = static_cast<std::size_t>(std::lround(static_cast<double>(base) * width));
  return c < 1 ? 1 : c;
}

struct ModelSpec {
  Variant variant = Variant::kFGRR;
  Axis axis = Axis::kHorizontal;
  double width = 1.0;
  std::size_t n_writers = 2;
};

// ---------------------------------------------------------------------------
// Layers

template <typename T>
using ParamVisitor = std::function<void(const std::string&, Tensor<T>&)>;
template <typename T>
using BufferVisitor = std::function<void(const std::string&, std::vector<T>&)>;

template <typename T>
struct Conv2d {
  Tensor<T> w, b;

  Conv2d() = default;
  Conv2d(std::size_t ci, std::size_t co)
      : w(Tensor<T>::zeros({3, 3, ci, co})), b(Tensor<T>::zeros({co})) {}

  void init(Rng& rng) {
    // He-normal: std = sqrt(2 / fan_in), fan_in = 9 * ci
    const double stdv = std::sqrt(2.0 / (9.0 * static_cast<double>(w.dim(2))));
    for (std::size_t i = 0; i < w.numel(); ++i)
      w.data()[i] = static_cast<T>(rng.normal() * stdv);
    std::fill(b.data(), b.data() + b.numel(), T(0));
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return ops::conv3x3(tape, x, w, b);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  std::vector<T> running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t c)
      : gamma(Tensor<T>::full({c}, T(1))),
        beta(Tensor<T>::zeros({c})),
        running_mean(c, T(0)),
        running_var(c, T(1)) {}

  void init(Rng&) {
    std::fill(gamma.data(), gamma.data() + gamma.numel(), T(1));
    std::fill(beta.data(), beta.data() + beta.numel(), T(0));
    std::fill(running_mean.begin(), running_mean.end(), T(0));
    std::fill(running_var.begin(), running_var.end(), T(1));
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
    return ops::batchnorm(tape, x, gamma, beta, running_mean, running_var, train);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
  void visit_buffers(const std::string& prefix, const BufferVisitor<T>& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

/// conv-bn-relu, conv-bn-relu, then optional 2x2 max pooling.
template <typename T>
struct ConvBlock {
  Conv2d<T> c1, c2;
  BatchNorm2d<T> n1, n2;
  bool pool = true;

  ConvBlock() = default;
  ConvBlock(std::size_t ci, std::size_t co, bool with_pool)
      : c1(ci, co), c2(co, co), n1(co), n2(co), pool(with_pool) {}

  void init(Rng& rng) {
    c1.init(rng);
    n1.init(rng);
    c2.init(rng);
    n2.init(rng);
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x, bool train) {
    auto h = ops::relu(tape, n1.forward(tape, c1.forward(tape, x), train));
    h = ops::relu(tape, n2.forward(tape, c2.forward(tape, h), train));
    return pool ? ops::maxpool2x2(tape, h) : h;
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) {
    c1.visit(p + ".c1", fn);
    n1.visit(p + ".n1", fn);
    c2.visit(p + ".c2", fn);
    n2.visit(p + ".n2", fn);
  }
  void visit_buffers(const std::string& p, const BufferVisitor<T>& fn) {
    n1.visit_buffers(p + ".n1", fn);
    n2.visit_buffers(p + ".n2", fn);
  }
};

template <typename T>
struct DenseLayer {
  Tensor<T> w, b;

  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out)
      : w(Tensor<T>::zeros({in, out})), b(Tensor<T>::zeros({out})) {}

  void init(Rng& rng) {
    // Xavier-uniform: limit = sqrt(6 / (fan_in + fan_out))
    const double lim = std::sqrt(6.0 / static_cast<double>(w.dim(0) + w.dim(1)));
    for (std::size_t i = 0; i < w.numel(); ++i)
      w.data()[i] = static_cast<T>(rng.uniform(-lim, lim));
    std::fill(b.data(), b.data() + b.numel(), T(0));
  }

  Tensor<T> forward(Tape<T>* tape, const Tensor<T>& x) const {
    return ops::linear(tape, x, w, b);
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) {
    fn(p + ".w", w);
    fn(p + ".b", b);
  }
};

// ---------------------------------------------------------------------------
// Recurrent cell

template <typename T>
struct GruCell {
  Tensor<T> wz, wr, wh;  // input maps, stored (in, out)
  Tensor<T> uz, ur, uh;  // state maps
  Tensor<T> bz, br, bh;

  GruCell() = default;
  explicit GruCell(std::size_t dim)
      : wz(Tensor<T>::zeros({dim, dim})),
        wr(Tensor<T>::zeros({dim, dim})),
        wh(Tensor<T>::zeros({dim, dim})),
        uz(Tensor<T>::zeros({dim, dim})),
        ur(Tensor<T>::zeros({dim, dim})),
        uh(Tensor<T>::zeros({dim, dim})),
        bz(Tensor<T>::zeros({dim})),
        br(Tensor<T>::zeros({dim})),
        bh(Tensor<T>::zeros({dim})) {}

  void init(Rng& rng) {
    for (Tensor<T>* m : {&wz, &wr, &wh, &uz, &ur, &uh}) {
      const double lim = std::sqrt(6.0 / static_cast<double>(m->dim(0) + m->dim(1)));
      for (std::size_t i = 0; i < m->numel(); ++i)
        m->data()[i] = static_cast<T>(rng.uniform(-lim, lim));
    }
    for (Tensor<T>* v : {&bz, &br, &bh})
      std::fill(v->data(), v->data() + v->numel(), T(0));
  }

  /// One recurrence step:
  ///   z = sigmoid(x Wz + f Uz + bz)
  ///   r = sigmoid(x Wr + f Ur + br)
  ///   h = tanh(x Wh + (r*f) Uh + bh)
  ///   f' = z*f + (1-z)*h
  Tensor<T> step(Tape<T>* tape, const Tensor<T>& x, const Tensor<T>& f) const {
    auto z = ops::sigmoid(tape, ops::add(tape, ops::linear(tape, x, wz, bz),
                                         ops::matmul(tape, f, uz)));
    auto r = ops::sigmoid(tape, ops::add(tape, ops::linear(tape, x, wr, br),
                                         ops::matmul(tape, f, ur)));
    auto h = ops::tanh(tape, ops::add(tape, ops::linear(tape, x, wh, bh),
                                      ops::matmul(tape, ops::hadamard(tape, r, f), uh)));
    auto keep = ops::hadamard(tape, z, f);
    auto blend = ops::hadamard(tape, ops::affine(tape, z, T(-1), T(1)), h);
    return ops::add(tape, keep, blend);
  }

  void visit(const std::string& p, const ParamVisitor<T>& fn) {
    fn(p + ".wz", wz);
    fn(p + ".wr", wr);
    fn(p + ".wh", wh);
    fn(p + ".uz", uz);
    fn(p + ".ur", ur);
    fn(p + ".uh", uh);
    fn(p + ".bz", bz);
    fn(p + ".br", br);
    fn(p + ".bh", bh);
  }
};

// ---------------------------------------------------------------------------
// Fragment segmentation

/// Split the local feature map into 8 slabs: horizontal = unit-height row
/// bands top to bottom, vertical = two-column bands left to right.
template <typename T>
std::vector<Tensor<T>> segment_fragments(Tape<T>* tape, const Tensor<T>& f_l, Axis axis) {
  const bool batched = f_l.rank() == 4;
  if (f_l.rank() != 3 && !batched)
    throw ShapeError("segment_fragments: expected rank-3/4 feature map, got " +
                     shape_str(f_l.shape()));
  const std::size_t h = f_l.dim(batched ? 1 : 0);
  const std::size_t w = f_l.dim(batched ? 2 : 1);
  if (h != kFragments || w != 2 * kFragments)
    throw ShapeError("segment_fragments: expected 8x16 spatial extents, got " +
                     shape_str(f_l.shape()));
  std::vector<Tensor<T>> frags;
  frags.reserve(kFragments);
  for (std::size_t t = 0; t < kFragments; ++t) {
    if (axis == Axis::kHorizontal)
      frags.push_back(ops::crop(tape, f_l, t, 1, 0, w));
    else
      frags.push_back(ops::crop(tape, f_l, 0, h, 2 * t, 2));
  }
  return frags;
}

// ---------------------------------------------------------------------------
// Full model

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> feature;  // head output f (pre-classifier)
  Tensor<T> f_l;
  Tensor<T> f_g;  // undefined unless the variant computes it
};

template <typename T>
class GrrnnModel {
 public:
  GrrnnModel() = default;

  explicit GrrnnModel(const ModelSpec& spec) : spec_(spec) {
    if (spec.n_writers < 2) throw ConfigError("model needs at least 2 writer classes");
    const std::size_t c0 = scaled_channels(kChannelPlan[0], spec.width);
    const std::size_t c1 = scaled_channels(kChannelPlan[1], spec.width);
    const std::size_t c2 = scaled_channels(kChannelPlan[2], spec.width);
    const std::size_t c3 = scaled_channels(kChannelPlan[3], spec.width);
    b1_ = ConvBlock<T>(1, c0, true);
    b2_ = ConvBlock<T>(c0, c1, true);
    b3_ = ConvBlock<T>(c1, c2, true);
    if (variant_uses_global(spec.variant)) b4_ = ConvBlock<T>(c2, c3, true);
    if (variant_uses_fragments(spec.variant)) embed_ = DenseLayer<T>(c2, c3);
    if (variant_uses_gru(spec.variant)) gru_ = GruCell<T>(c3);
    classifier_ = DenseLayer<T>(c3, spec.n_writers);
  }

  const ModelSpec& spec() const { return spec_; }
  std::size_t feature_dim() const { return classifier_.w.dim(0); }
  std::size_t local_channels() const { return b3_.c2.w.dim(3); }
  const GruCell<T>& gru() const { return gru_; }
  GruCell<T>& gru() { return gru_; }
  DenseLayer<T>& embed() { return embed_; }
  DenseLayer<T>& classifier() { return classifier_; }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    b1_.init(rng);
    b2_.init(rng);
    b3_.init(rng);
    if (variant_uses_global(spec_.variant)) b4_.init(rng);
    if (variant_uses_fragments(spec_.variant)) embed_.init(rng);
    if (variant_uses_gru(spec_.variant)) gru_.init(rng);
    classifier_.init(rng);
  }

  /// Backbone through block 3 (and block 4 + GAP when the variant needs f_g).
  void backbone(Tape<T>* tape, const Tensor<T>& img, bool train, Tensor<T>& f_l,
                Tensor<T>& f_g) {
    const bool batched = img.rank() == 4;
    if (img.rank() != 3 && !batched)
      throw ShapeError("model forward: expected (h,w,1) or (n,h,w,1) input, got " +
                       shape_str(img.shape()));
    const std::size_t h = img.dim(batched ? 1 : 0);
    const std::size_t w = img.dim(batched ? 2 : 1);
    const std::size_t c = img.dim(batched ? 3 : 2);
    if (h != kCanvas_h_ || w != kCanvas_w_ || c != 1)
      throw ShapeError("model forward: expected 64x128x1 input geometry, got " +
                       shape_str(img.shape()));
    auto x = b1_.forward(tape, img, train);
    x = b2_.forward(tape, x, train);
    f_l = b3_.forward(tape, x, train);
    if (variant_uses_global(spec_.variant))
      f_g = ops::gap(tape, b4_.forward(tape, f_l, train));
    else
      f_g = Tensor<T>();
  }

  /// GAP + shared linear embedding of one fragment.
  Tensor<T> embed_fragment(Tape<T>* tape, const Tensor<T>& frag) const {
    return embed_.forward(tape, ops::gap(tape, frag));
  }

  std::vector<Tensor<T>> embed_fragments(Tape<T>* tape, const Tensor<T>& f_l) const {
    auto frags = segment_fragments(tape, f_l, spec_.axis);
    std::vector<Tensor<T>> xs;
    xs.reserve(frags.size());
    for (const auto& fr : frags) xs.push_back(embed_fragment(tape, fr));
    return xs;
  }

  /// Combine fragment embeddings (and global context where used) into the
  /// final feature vector f.
  Tensor<T> run_head(Tape<T>* tape, const std::vector<Tensor<T>>& xs,
                     const Tensor<T>& f_g) const {
    const Variant v = spec_.variant;
    if (variant_uses_global(v) && !f_g.defined())
      throw ConfigError(std::string("variant ") + variant_name(v) +
                        " requires the global context vector");
    if (v == Variant::kBaseline) return f_g;
    if (xs.size() != kFragments)
      throw ShapeError("run_head: expected 8 fragment embeddings, got " +
                       std::to_string(xs.size()));
    if (v == Variant::kF) return ops::sum_list(tape, xs);

    Tensor<T> f = variant_uses_global(v) ? f_g : Tensor<T>::zeros(xs.front().shape());
    std::vector<Tensor<T>> states;
    states.reserve(kFragments);
    for (const auto& x : xs) {
      Tensor<T> ft = gru_.step(tape, x, f);
      if (variant_residual(v)) ft = ops::add(tape, ft, x);
      states.push_back(ft);
      f = ft;
    }
    return ops::sum_list(tape, states);
  }

  ForwardResult<T> forward(Tape<T>* tape, const Tensor<T>& img, bool train) {
    ForwardResult<T> r;
    backbone(tape, img, train, r.f_l, r.f_g);
    if (spec_.variant == Variant::kBaseline) {
      r.feature = r.f_g;
    } else {
      auto xs = embed_fragments(tape, r.f_l);
      r.feature = run_head(tape, xs, r.f_g);
    }
    r.logits = classifier_.forward(tape, r.feature);
    return r;
  }

  void visit_params(const ParamVisitor<T>& fn) {
    b1_.visit("backbone.b1", fn);
    b2_.visit("backbone.b2", fn);
    b3_.visit("backbone.b3", fn);
    if (variant_uses_global(spec_.variant)) b4_.visit("backbone.b4", fn);
    if (variant_uses_fragments(spec_.variant)) embed_.visit("head.embed", fn);
    if (variant_uses_gru(spec_.variant)) gru_.visit("head.gru", fn);
    classifier_.visit("head.classifier", fn);
  }

  void visit_buffers(const BufferVisitor<T>& fn) {
    b1_.visit_buffers("backbone.b1", fn);
    b2_.visit_buffers("backbone.b2", fn);
    b3_.visit_buffers("backbone.b3", fn);
    if (variant_uses_global(spec_.variant)) b4_.visit_buffers("backbone.b4", fn);
  }

  void set_requires_grad(bool on) {
    visit_params([on](const std::string&, Tensor<T>& t) { t.set_requires_grad(on); });
  }

  void zero_grad() {
    visit_params([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }

 private:
  static constexpr std::size_t kCanvas_h_ = 64;
  static constexpr std::size_t kCanvas_w_ = 128;

  ModelSpec spec_;
  ConvBlock<T> b1_, b2_, b3_, b4_;
  DenseLayer<T> embed_;
  GruCell<T> gru_;
  DenseLayer<T> classifier_;
};

}  // namespace grrnn
