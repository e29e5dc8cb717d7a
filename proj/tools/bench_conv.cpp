// Micro-benchmark for the convolution kernels: forward, input-gradient and
// weight-gradient throughput on layer shapes used by the quarter-width model.
#include <chrono>
#include <cstdio>
#include <vector>

#include "grrnn/ops.hpp"

using grrnn::Shape;
using grrnn::Tensor;
using grrnn::Tape;

namespace {

template <typename T>
Tensor<T> randn(grrnn::Rng& rng, Shape shape) {
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.data()[i] = static_cast<T>(rng.normal() * 0.1);
  return t;
}

template <typename T>
void bench(const char* tag, std::size_t h, std::size_t w, std::size_t ci, std::size_t co,
           int reps) {
  grrnn::Rng rng(42);
  Tensor<T> x = randn<T>(rng, {h, w, ci});
  Tensor<T> wt = randn<T>(rng, {3, 3, ci, co});
  Tensor<T> b = randn<T>(rng, {co});
  x.set_requires_grad(true);
  wt.set_requires_grad(true);
  b.set_requires_grad(true);

  const double macs = double(h) * w * 9.0 * ci * co;

  // forward only
  auto t0 = std::chrono::steady_clock::now();
  T sink = 0;
  for (int r = 0; r < reps; ++r) {
    auto y = grrnn::ops::conv3x3<T>(nullptr, x, wt, b);
    sink += y.data()[0];
  }
  auto t1 = std::chrono::steady_clock::now();
  const double fwd_s = std::chrono::duration<double>(t1 - t0).count() / reps;

  // forward + backward
  t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) {
    Tape<T> tape;
    auto y = grrnn::ops::conv3x3<T>(&tape, x, wt, b);
    auto l = grrnn::ops::reduce_sum<T>(&tape, y);
    tape.backward(l);
    sink += l.item();
  }
  t1 = std::chrono::steady_clock::now();
  const double fb_s = std::chrono::duration<double>(t1 - t0).count() / reps;

  std::printf("%-28s %4zux%-4zu ci=%-4zu co=%-4zu fwd %8.3f ms (%6.1f GMAC/s)  fwd+bwd %8.3f ms (%6.1f GMAC/s)  [sink %g]\n",
              tag, h, w, ci, co, fwd_s * 1e3, macs / fwd_s * 1e-9, fb_s * 1e3,
              3.0 * macs / fb_s * 1e-9, double(sink));
}

}  // namespace

int main() {
  std::printf("scalar = float\n");
  bench<float>("block1 conv2 (w=0.25)", 64, 128, 16, 16, 20);
  bench<float>("block2 conv2 (w=0.25)", 32, 64, 32, 32, 20);
  bench<float>("block3 conv2 (w=0.25)", 16, 32, 64, 64, 20);
  bench<float>("block4 conv2 (w=0.25)", 8, 16, 128, 128, 20);
  bench<float>("block3 conv2 (full)", 16, 32, 256, 256, 5);
  std::printf("scalar = double\n");
  bench<double>("block3 conv2 (w=0.25)", 16, 32, 64, 64, 10);
  return 0;
}
