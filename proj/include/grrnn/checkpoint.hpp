#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "grrnn/image.hpp"
#include "grrnn/model.hpp"

namespace grrnn {

// Checkpoint container: a fixed magic, a config echo, then every trainable
// tensor and every normalization running buffer as named float32
// little-endian records.

inline constexpr char kCheckpointMagic[6] = {'G', 'R', 'R', 'N', 'N', '1'};

struct CheckpointMeta {
  Variant variant = Variant::kFGRR;
  Axis axis = Axis::kHorizontal;
  ImageMode mode = ImageMode::kGray;
  double width = 1.0;
  std::uint64_t n_writers = 2;
  std::uint64_t seed = 0;

  ModelSpec model_spec() const {
    return ModelSpec{variant, axis, width, static_cast<std::size_t>(n_writers)};
  }
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_u8(std::ostream& out, std::uint8_t v) {
  out.put(static_cast<char>(v));
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put_u64(out, u);
}

inline void put_str(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw IoError("checkpoint truncated while reading an integer");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint8_t get_u8(std::istream& in) {
  const int c = in.get();
  if (c == EOF) throw IoError("checkpoint truncated while reading a tag");
  return static_cast<std::uint8_t>(c);
}

inline float get_f32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IoError("checkpoint truncated while reading tensor data");
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

inline double get_f64(std::istream& in) {
  const std::uint64_t u = get_u64(in);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

inline std::string get_str(std::istream& in) {
  const std::uint64_t len = get_u64(in);
  if (len > (1ULL << 20)) throw IoError("checkpoint string length is implausible");
  std::string s(len, '\0');
  if (len && !in.read(s.data(), static_cast<std::streamsize>(len)))
    throw IoError("checkpoint truncated while reading a string");
  return s;
}

inline constexpr std::uint8_t kDtypeF32 = 0;

}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, GrrnnModel<T>& model,
                     const CheckpointMeta& meta) {
  using namespace detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_str(out, variant_name(meta.variant));
  put_str(out, axis_name(meta.axis));
  put_str(out, mode_name(meta.mode));
  put_f64(out, meta.width);
  put_u64(out, meta.n_writers);
  put_u64(out, meta.seed);

  std::uint64_t n_params = 0;
  model.visit_params([&](const std::string&, Tensor<T>&) { ++n_params; });
  put_u64(out, n_params);
  model.visit_params([&](const std::string& name, Tensor<T>& t) {
    put_str(out, name);
    put_u8(out, kDtypeF32);
    put_u64(out, t.rank());
    for (std::size_t d = 0; d < t.rank(); ++d) put_u64(out, t.dim(d));
    for (std::size_t i = 0; i < t.numel(); ++i)
      put_f32(out, static_cast<float>(t.data()[i]));
  });

  std::uint64_t n_buffers = 0;
  model.visit_buffers([&](const std::string&, std::vector<T>&) { ++n_buffers; });
  put_u64(out, n_buffers);
  model.visit_buffers([&](const std::string& name, std::vector<T>& buf) {
    put_str(out, name);
    put_u8(out, kDtypeF32);
    put_u64(out, 1);
    put_u64(out, buf.size());
    for (const T v : buf) put_f32(out, static_cast<float>(v));
  });
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <typename T>
struct Checkpoint {
  CheckpointMeta meta;
  GrrnnModel<T> model;
};

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kCheckpointMagic, 6) != 0)
    throw IoError("not a checkpoint file: " + path);

  Checkpoint<T> ck;
  ck.meta.variant = parse_variant(get_str(in));
  ck.meta.axis = parse_axis(get_str(in));
  ck.meta.mode = parse_image_mode(get_str(in));
  ck.meta.width = get_f64(in);
  ck.meta.n_writers = get_u64(in);
  ck.meta.seed = get_u64(in);
  ck.model = GrrnnModel<T>(ck.meta.model_spec());

  std::map<std::string, Tensor<T>> params;
  ck.model.visit_params(
      [&](const std::string& name, Tensor<T>& t) { params.emplace(name, t); });
  const std::uint64_t n_params = get_u64(in);
  if (n_params != params.size())
    throw IoError("checkpoint holds " + std::to_string(n_params) +
                  " tensors but the model expects " + std::to_string(params.size()));
  for (std::uint64_t k = 0; k < n_params; ++k) {
    const std::string name = get_str(in);
    if (get_u8(in) != kDtypeF32) throw IoError("unsupported dtype for " + name);
    const std::uint64_t rank = get_u64(in);
    Shape shape(rank);
    for (auto& d : shape) d = get_u64(in);
    auto it = params.find(name);
    if (it == params.end()) throw IoError("unknown tensor in checkpoint: " + name);
    if (it->second.shape() != shape)
      throw IoError("shape mismatch for " + name + ": stored " + shape_str(shape) +
                    ", model " + shape_str(it->second.shape()));
    for (std::size_t i = 0; i < it->second.numel(); ++i)
      it->second.data()[i] = static_cast<T>(get_f32(in));
  }

  std::map<std::string, std::vector<T>*> buffers;
  ck.model.visit_buffers(
      [&](const std::string& name, std::vector<T>& b) { buffers.emplace(name, &b); });
  const std::uint64_t n_buffers = get_u64(in);
  if (n_buffers != buffers.size())
    throw IoError("checkpoint holds " + std::to_string(n_buffers) +
                  " buffers but the model expects " + std::to_string(buffers.size()));
  for (std::uint64_t k = 0; k < n_buffers; ++k) {
    const std::string name = get_str(in);
    if (get_u8(in) != kDtypeF32) throw IoError("unsupported dtype for " + name);
    if (get_u64(in) != 1) throw IoError("buffer rank must be 1 for " + name);
    const std::uint64_t len = get_u64(in);
    auto it = buffers.find(name);
    if (it == buffers.end()) throw IoError("unknown buffer in checkpoint: " + name);
    if (it->second->size() != len)
      throw IoError("length mismatch for " + name);
    for (auto& v : *it->second) v = static_cast<T>(get_f32(in));
  }

  if (in.peek() != EOF) throw IoError("trailing bytes after checkpoint payload");
  return ck;
}

}  // namespace grrnn
