// Acceptance gate: one self-contained check per release criterion, each
// printing a single PASS/FAIL line.  Exit status is 0 only if every selected
// criterion passes.  Criteria that exercise the full pipeline drive the real
// command-line binary (path injected at compile time as GRRNN_CLI_PATH).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "grrnn/accounting.hpp"
#include "grrnn/checkpoint.hpp"
#include "grrnn/datagen.hpp"
#include "grrnn/dataset.hpp"
#include "grrnn/evaluation.hpp"
#include "grrnn/image.hpp"
#include "grrnn/model.hpp"
#include "grrnn/ops.hpp"
#include "grrnn/training.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using grrnn::Axis;
using grrnn::Tape;
using grrnn::Tensor;
using grrnn::Variant;

namespace {

struct Line {
  std::ostringstream os;
  ~Line() = default;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "grrnn_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args, const std::string& log_name) {
  const std::string log = (work_dir() / log_name).string();
  const std::string cmd = std::string(GRRNN_CLI_PATH) + " " + args + " > " + log +
                          " 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

/// Parse one CSV emitted by the pipeline into header + field rows.
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!fields.empty()) rows.push_back(std::move(fields));
  }
  return rows;
}

Tensor<double> random_tensor(grrnn::Rng& rng, const grrnn::Shape& shape,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t = Tensor<double>::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

/// Push values away from the ReLU kink so finite differences stay valid.
void avoid_zero(Tensor<double>& t, double margin = 0.05) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    double& v = t.data()[i];
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
}

// --------------------------------------------------------------------------
// Criterion 1: parameter and FLOP accounting.

bool c1_accounting(std::ostringstream& msg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t params = grrnn::count_params(Variant::kFGRR, 657);
  bool ok = params == 6731089ULL;

  const struct {
    Variant v;
    double target;
  } flops[] = {{Variant::kBaseline, 1.67e9},
               {Variant::kF, 1.21e9},
               {Variant::kFGR, 1.69e9},
               {Variant::kFGRR, 1.69e9}};
  double worst = 0.0;
  for (const auto& f : flops) {
    const double got = static_cast<double>(grrnn::count_flops(f.v));
    const double rel = std::abs(got - f.target) / f.target;
    worst = std::max(worst, rel);
    ok = ok && rel <= 0.02;
  }
  const double dt = seconds_since(t0);
  ok = ok && dt < 1.0;
  msg << "fgrr params=" << params << " (want 6731089), worst flop deviation "
      << grrnn::format_metric(worst * 100) << "% (cap 2%), " << grrnn::format_metric(dt)
      << "s";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 2: forward shape contract.

bool c2_shapes(std::ostringstream& msg) {
  grrnn::ModelSpec spec{Variant::kFGRR, Axis::kHorizontal, 1.0, 5};
  grrnn::GrrnnModel<float> model(spec);
  model.init(3);
  grrnn::Rng rng(4);
  Tensor<float> img = Tensor<float>::zeros({grrnn::kCanvasH, grrnn::kCanvasW, 1});
  for (std::size_t i = 0; i < img.numel(); ++i)
    img.data()[i] = static_cast<float>(rng.next_real());

  const auto out = model.forward(nullptr, img, false);
  bool ok = out.f_l.shape() == grrnn::Shape{8, 16, 256} &&
            out.f_g.shape() == grrnn::Shape{512};

  const auto horiz = grrnn::segment_fragments<float>(nullptr, out.f_l, Axis::kHorizontal);
  const auto vert = grrnn::segment_fragments<float>(nullptr, out.f_l, Axis::kVertical);
  ok = ok && horiz.size() == 8 && vert.size() == 8;
  for (const auto& f : horiz) ok = ok && f.shape() == grrnn::Shape{1, 16, 256};
  for (const auto& f : vert) ok = ok && f.shape() == grrnn::Shape{8, 2, 256};

  msg << "f_l " << grrnn::shape_str(out.f_l.shape()) << ", f_g "
      << grrnn::shape_str(out.f_g.shape()) << ", fragments " << horiz.size() << "x"
      << grrnn::shape_str(horiz[0].shape()) << " / " << vert.size() << "x"
      << grrnn::shape_str(vert[0].shape());
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 3: finite-difference gradient suite.

bool c3_gradients(std::ostringstream& msg) {
  const auto t0 = std::chrono::steady_clock::now();
  grrnn::Rng rng(31);
  double worst_isolated = 0.0;
  std::size_t coords = 0;

  auto run = [&](const char* /*name*/, const gradcheck::Forward& fwd,
                 std::vector<Tensor<double>> inputs) {
    const auto rep = gradcheck::check(fwd, std::move(inputs), 1e-5, 24, 9);
    worst_isolated = std::max(worst_isolated, rep.max_rel_err);
    coords += rep.coords_checked;
  };

  {  // conv3x3
    auto x = random_tensor(rng, {2, 6, 8, 3});
    auto w = random_tensor(rng, {3, 3, 3, 4});
    auto b = random_tensor(rng, {4});
    run("conv3x3", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::conv3x3<double>(&t, x, w, b));
    }, {x, w, b});
  }
  {  // maxpool2x2 (continuous draws keep window values separated)
    auto x = random_tensor(rng, {2, 6, 8, 3});
    run("maxpool2x2", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::maxpool2x2<double>(&t, x));
    }, {x});
  }
  {  // batchnorm in training mode
    auto x = random_tensor(rng, {2, 4, 6, 3});
    auto g = random_tensor(rng, {3}, 0.5, 1.5);
    auto b = random_tensor(rng, {3});
    run("batchnorm", [=](Tape<double>& t) {
      std::vector<double> rm(3, 0.0), rv(3, 1.0);
      return grrnn::ops::reduce_sum<double>(
          &t, grrnn::ops::batchnorm<double>(&t, x, g, b, rm, rv, true));
    }, {x, g, b});
  }
  {  // linear + matmul
    auto x = random_tensor(rng, {3, 5});
    auto w = random_tensor(rng, {5, 4});
    auto b = random_tensor(rng, {4});
    run("linear", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::linear<double>(&t, x, w, b));
    }, {x, w, b});
    run("matmul", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::matmul<double>(&t, x, w));
    }, {x, w});
  }
  {  // gap
    auto x = random_tensor(rng, {2, 6, 8, 3});
    run("gap", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::gap<double>(&t, x));
    }, {x});
  }
  {  // pointwise and combining ops
    auto x = random_tensor(rng, {4, 7});
    avoid_zero(x);
    auto y = random_tensor(rng, {4, 7});
    run("relu", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::relu<double>(&t, x));
    }, {x});
    run("sigmoid", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::sigmoid<double>(&t, x));
    }, {x});
    run("tanh", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::tanh<double>(&t, x));
    }, {x});
    run("add", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::add<double>(&t, x, y));
    }, {x, y});
    run("hadamard", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::hadamard<double>(&t, x, y));
    }, {x, y});
    run("affine", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::affine<double>(&t, x, -1.0, 1.0));
    }, {x});
    run("scale", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::scale<double>(&t, x, 0.37));
    }, {x});
    run("reduce_sum", [=](Tape<double>& t) { return grrnn::ops::reduce_sum<double>(&t, x); },
        {x});
  }
  {  // sum_list
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {3, 4});
    auto c = random_tensor(rng, {3, 4});
    run("sum_list", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(
          &t, grrnn::ops::sum_list<double>(&t, {a, b, c}));
    }, {a, b, c});
  }
  {  // crop
    auto x = random_tensor(rng, {6, 8, 5});
    run("crop", [=](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, grrnn::ops::crop<double>(&t, x, 1, 4, 2, 3));
    }, {x});
  }
  {  // label-smoothing loss
    auto logits = random_tensor(rng, {3, 5}, -2.0, 2.0);
    const std::vector<std::size_t> labels = {1, 0, 4};
    run("label_smooth_loss", [=](Tape<double>& t) {
      return grrnn::label_smooth_loss<double>(&t, logits, labels, 0.1);
    }, {logits});
  }
  {  // gru_step: one recurrence over all eleven participating tensors
    grrnn::GruCell<double> cell(6);
    grrnn::Rng grng(33);
    cell.init(grng);
    auto x = random_tensor(rng, {6});
    auto f = random_tensor(rng, {6});
    std::vector<Tensor<double>> inputs = {x, f, cell.wz, cell.wr, cell.wh,
                                          cell.uz, cell.ur, cell.uh,
                                          cell.bz, cell.br, cell.bh};
    run("gru_step", [=, &cell](Tape<double>& t) {
      return grrnn::ops::reduce_sum<double>(&t, cell.step(&t, x, f));
    }, inputs);
  }
  const bool isolated_ok = worst_isolated <= 1e-5;

  // Full image-to-loss graph at width 0.25, N=5: every parameter tensor plus
  // the input image, a sampled subset of coordinates each.  The tighter 1e-7
  // step keeps piecewise-linear kinks out of the central-difference window.
  grrnn::ModelSpec spec{Variant::kFGRR, Axis::kHorizontal, 0.25, 5};
  grrnn::GrrnnModel<double> model(spec);
  model.init(17);
  model.set_requires_grad(true);

  Tensor<double> img = random_tensor(rng, {grrnn::kCanvasH, grrnn::kCanvasW, 1}, 0.0, 1.0);
  const std::vector<std::size_t> labels = {3};

  std::vector<Tensor<double>> inputs = {img};
  model.visit_params([&](const std::string&, Tensor<double>& p) { inputs.push_back(p); });

  const auto full = gradcheck::check(
      [&model, img, labels](Tape<double>& t) {
        auto out = model.forward(&t, img, true);
        return grrnn::label_smooth_loss<double>(&t, out.logits, labels, 0.1);
      },
      inputs, 1e-7, 8, 29);

  const double dt = seconds_since(t0);
  const bool full_ok = full.max_rel_err <= 1e-4;
  const bool ok = isolated_ok && full_ok && dt < 300.0;
  msg << "isolated ops max rel err " << grrnn::format_metric(worst_isolated) << " over "
      << coords << " coords (cap 1e-5); full graph " << grrnn::format_metric(full.max_rel_err)
      << " over " << full.coords_checked << " coords across " << inputs.size()
      << " tensors (cap 1e-4); " << grrnn::format_metric(dt) << "s";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 4: zero-parameter GRU closed forms.

bool c4_gru_closed_form(std::ostringstream& msg) {
  // A zero-parameter cell must halve its state exactly.
  grrnn::GruCell<double> cell(8);
  grrnn::Rng rng(41);
  Tensor<double> x = random_tensor(rng, {8});
  Tensor<double> f = random_tensor(rng, {8});
  const auto next = cell.step(nullptr, x, f);
  bool ok = true;
  for (std::size_t i = 0; i < 8; ++i) ok = ok && next.data()[i] == 0.5 * f.data()[i];

  // FGRR output with zero GRU parameters follows f^t = 0.5 f^{t-1} + x_t,
  // f^0 = f_g, summed over the eight steps.
  const std::size_t ch = grrnn::scaled_channels(256, 1.0 / 64.0);  // tiny width
  grrnn::ModelSpec spec{Variant::kFGRR, Axis::kHorizontal, 1.0 / 64.0, 3};
  grrnn::GrrnnModel<double> model(spec);
  model.init(5);
  // Zero only the GRU tensors; everything else keeps its random init.
  model.visit_params([&](const std::string& name, Tensor<double>& p) {
    if (name.rfind("head.gru.", 0) == 0)
      for (std::size_t i = 0; i < p.numel(); ++i) p.data()[i] = 0.0;
  });

  Tensor<double> img = random_tensor(rng, {grrnn::kCanvasH, grrnn::kCanvasW, 1}, 0.0, 1.0);
  const auto out = model.forward(nullptr, img, false);
  const auto xs = model.embed_fragments(nullptr, out.f_l);

  const std::size_t d = model.feature_dim();
  std::vector<double> state(d);
  for (std::size_t i = 0; i < d; ++i) state[i] = out.f_g.data()[i];
  std::vector<double> sum(d, 0.0);
  for (const auto& xt : xs) {
    for (std::size_t i = 0; i < d; ++i) {
      state[i] = 0.5 * state[i] + xt.data()[i];
      sum[i] += state[i];
    }
  }
  double max_err = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    max_err = std::max(max_err, std::abs(sum[i] - out.feature.data()[i]));
  ok = ok && max_err <= 1e-12;
  msg << "half-state exact; fgrr closed-form recurrence max err "
      << grrnn::format_metric(max_err) << " (cap 1e-12, " << ch << " channels)";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 5: label-smoothing loss oracle.

bool c5_loss_oracle(std::ostringstream& msg) {
  bool ok = true;
  double worst_uniform = 0.0;
  for (const std::size_t n : {std::size_t(2), std::size_t(10), std::size_t(657)}) {
    Tensor<double> logits = Tensor<double>::full({n}, 1.7);
    const auto loss =
        grrnn::label_smooth_loss<double>(nullptr, logits, {n / 2}, 0.1);
    worst_uniform = std::max(worst_uniform, std::abs(loss.item() - std::log(double(n))));
  }
  ok = ok && worst_uniform <= 1e-12;

  // Hand case: N=4, eps=0.1, p=(0.7,0.1,0.1,0.1), y=0.  Logits = ln p recover
  // exactly those probabilities under the softmax.
  Tensor<double> logits = Tensor<double>::from(
      {4}, {std::log(0.7), std::log(0.1), std::log(0.1), std::log(0.1)});
  const double loss = grrnn::label_smooth_loss<double>(nullptr, logits, {0}, 0.1).item();
  const double exact = 0.9 * (-std::log(0.7)) +
                       0.025 * (-std::log(0.7) - 3.0 * std::log(0.1));
  const double err_exact = std::abs(loss - exact);
  const double err_printed = std::abs(loss - 0.502617);
  // The six-digit figure 0.502617 sits 1.2e-6 from the value its own defining
  // expression yields (0.50261820...), so the printed-value gate allows 2e-6
  // while the defining expression itself must match to 1e-12.
  ok = ok && err_exact <= 1e-12 && err_printed <= 2e-6;
  msg << "uniform ln N err " << grrnn::format_metric(worst_uniform)
      << " (cap 1e-12); N=4 vs defining expression "
      << grrnn::format_metric(err_exact) << " (cap 1e-12), vs printed 0.502617 "
      << grrnn::format_metric(err_printed) << " (cap 2e-6, rounded figure)";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 6: Otsu threshold against exhaustive search.

bool c6_otsu(std::ostringstream& msg) {
  grrnn::Rng rng(600);
  std::size_t checked = 0;
  double worst_gap = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const auto h = static_cast<std::size_t>(rng.uniform_int(4, 48));
    const auto w = static_cast<std::size_t>(rng.uniform_int(4, 48));
    grrnn::RawImage img;
    img.height = h;
    img.width = w;
    img.pixels.resize(h * w);
    const bool bimodal = trial % 2 == 0;
    for (auto& p : img.pixels)
      p = bimodal ? std::clamp((rng.next_real() < 0.4 ? 0.2 : 0.8) +
                                   0.05 * rng.normal(),
                               0.0, 1.0)
                  : rng.next_real();

    // Exhaustive reference over all 256 bin boundaries.
    std::vector<double> hist(256, 0.0);
    for (const double v : img.pixels)
      hist[std::clamp(static_cast<int>(v * 256), 0, 255)] += 1.0;
    auto sigma_at = [&](int k) {
      double w0 = 0, s0 = 0, w1 = 0, s1 = 0;
      for (int b = 0; b < k; ++b) w0 += hist[b], s0 += b * hist[b];
      for (int b = k; b < 256; ++b) w1 += hist[b], s1 += b * hist[b];
      if (w0 == 0 || w1 == 0) return -1.0;
      const double n = w0 + w1, mu0 = s0 / w0, mu1 = s1 / w1;
      return (w0 / n) * (w1 / n) * (mu0 - mu1) * (mu0 - mu1);
    };
    double best = -1.0;
    for (int k = 0; k < 256; ++k) best = std::max(best, sigma_at(k));
    if (best < 0.0) continue;  // singleton histogram: nothing to separate

    const double t = grrnn::otsu_threshold(img);
    const double got = sigma_at(static_cast<int>(std::lround(t * 256.0)));
    worst_gap = std::max(worst_gap, best - got);
    ok = ok && got >= best - 1e-12 * std::max(1.0, best);
    ++checked;
  }
  msg << checked << " images, worst variance shortfall "
      << grrnn::format_metric(worst_gap) << " (cap ~1e-12 relative)";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 7: end-to-end desk-scale run through the real binary.

bool c7_end_to_end(std::ostringstream& msg) {
  const fs::path dir = work_dir() / "e2e";
  fs::create_directories(dir);
  const std::string corpus = (dir / "corpus").string();
  const std::string run = (dir / "run").string();
  const std::string evald = (dir / "eval").string();

  if (run_cli("gen --writers 20 --words 50 --seed 7 --out " + corpus, "e2e_gen.log") != 0) {
    msg << "corpus generation failed";
    return false;
  }
  const auto t0 = std::chrono::steady_clock::now();
  if (run_cli("train --manifest " + corpus + "/manifest.tsv --out " + run +
                  " --variant fgrr --axis horizontal --mode gray --width 0.25 "
                  "--epochs 50 --seed 7",
              "e2e_train.log") != 0) {
    msg << "training failed (see e2e_train.log)";
    return false;
  }
  const double train_s = seconds_since(t0);

  const auto metrics = read_csv(dir / "run" / "metrics.csv");
  if (metrics.size() < 2 || metrics.back().size() < 4) {
    msg << "metrics.csv malformed";
    return false;
  }
  const double online_top1 = std::stod(metrics.back()[3]);

  // Training accuracy of the delivered checkpoint, measured on the clean
  // training split (the on-line metric above sees augmented batches and
  // mid-epoch weights, so it lower-bounds this number).
  if (run_cli("eval --checkpoint " + run + "/model.ckpt --manifest " + corpus +
                  "/manifest.tsv --out " + evald + "_train --split train "
                  "--protocol word",
              "e2e_eval_train.log") != 0) {
    msg << "train-split evaluation failed (see e2e_eval_train.log)";
    return false;
  }
  double train_top1 = -1.0;
  for (const auto& row : read_csv(dir / "eval_train" / "results.csv"))
    if (row.size() >= 6 && row[0] == "word") train_top1 = std::stod(row[4]);

  if (run_cli("eval --checkpoint " + run + "/model.ckpt --manifest " + corpus +
                  "/manifest.tsv --out " + evald + " --split test",
              "e2e_eval.log") != 0) {
    msg << "evaluation failed (see e2e_eval.log)";
    return false;
  }
  const auto results = read_csv(dir / "eval" / "results.csv");
  double word_top1 = -1.0, page_top1 = -1.0;
  for (const auto& row : results) {
    if (row.size() < 6) continue;
    if (row[0] == "word") word_top1 = std::stod(row[4]);
    if (row[0] == "page") page_top1 = std::stod(row[4]);
  }

  const bool ok = train_top1 >= 0.99 && word_top1 >= 0.80 && page_top1 >= word_top1 &&
                  train_s < 1800.0;
  msg << "train top-1 " << grrnn::format_metric(train_top1)
      << " (>=0.99; on-line augmented metric " << grrnn::format_metric(online_top1)
      << "), test word top-1 " << grrnn::format_metric(word_top1)
      << " (>=0.80), page top-1 " << grrnn::format_metric(page_top1)
      << " (>=word), training took " << grrnn::format_metric(train_s) << "s (<1800)";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 8: gray-mode accuracy is not below contour-mode accuracy.

bool c8_mode_ordering(std::ostringstream& msg) {
  const fs::path dir = work_dir() / "modes";
  fs::create_directories(dir);
  const std::string corpus = (dir / "corpus").string();
  if (run_cli("gen --writers 10 --words 30 --seed 11 --out " + corpus, "mode_gen.log") !=
      0) {
    msg << "corpus generation failed";
    return false;
  }

  auto run_mode = [&](const std::string& mode, double& top1) {
    const std::string run = (dir / ("run_" + mode)).string();
    const std::string evald = (dir / ("eval_" + mode)).string();
    if (run_cli("train --manifest " + corpus + "/manifest.tsv --out " + run +
                    " --variant fgrr --axis horizontal --mode " + mode +
                    " --width 0.25 --epochs 20 --seed 11",
                "mode_train_" + mode + ".log") != 0)
      return false;
    if (run_cli("eval --checkpoint " + run + "/model.ckpt --manifest " + corpus +
                    "/manifest.tsv --out " + evald + " --split test --protocol word",
                "mode_eval_" + mode + ".log") != 0)
      return false;
    for (const auto& row : read_csv(fs::path(evald) / "results.csv"))
      if (row.size() >= 6 && row[0] == "word") {
        top1 = std::stod(row[4]);
        return true;
      }
    return false;
  };

  double gray = -1.0, contour = -1.0;
  if (!run_mode("gray", gray) || !run_mode("contour", contour)) {
    msg << "mode study run failed";
    return false;
  }
  const bool ok = gray >= contour;
  msg << "gray test top-1 " << grrnn::format_metric(gray) << " vs contour "
      << grrnn::format_metric(contour) << " (same variant, seed, epochs)";
  return ok;
}

// --------------------------------------------------------------------------
// Criterion 9: byte-identical training reruns.

bool c9_determinism(std::ostringstream& msg) {
  const fs::path dir = work_dir() / "det";
  fs::create_directories(dir);
  const std::string corpus = (dir / "corpus").string();
  if (run_cli("gen --writers 4 --words 25 --seed 13 --out " + corpus, "det_gen.log") !=
      0) {
    msg << "corpus generation failed";
    return false;
  }
  const std::string args = "train --manifest " + corpus +
                           "/manifest.tsv --width 0.25 --epochs 3 --seed 13 --out ";
  if (run_cli(args + (dir / "a").string(), "det_a.log") != 0 ||
      run_cli(args + (dir / "b").string(), "det_b.log") != 0) {
    msg << "training run failed";
    return false;
  }
  const bool ckpt_same = slurp(dir / "a" / "model.ckpt") == slurp(dir / "b" / "model.ckpt");
  const bool metrics_same =
      slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv");
  const bool nonempty = !slurp(dir / "a" / "model.ckpt").empty();
  msg << "checkpoint bytes " << (ckpt_same ? "identical" : "DIFFER") << ", metrics bytes "
      << (metrics_same ? "identical" : "DIFFER");
  return ckpt_same && metrics_same && nonempty;
}

// --------------------------------------------------------------------------
// Criterion 10: nearest-neighbor ranking oracle and unit-norm features.

bool c10_feature_protocol(std::ostringstream& msg) {
  grrnn::Rng rng(1000);
  const std::size_t writers = 50, dim = 16, queries = 1000;
  auto unit = [&](std::size_t d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    return grrnn::l2_normalize(std::move(v));
  };

  std::vector<grrnn::WriterModel> models;
  for (std::size_t w = 0; w < writers; ++w)
    models.push_back({static_cast<int>(w * 2 + 3), unit(dim)});

  bool ok = true;
  for (std::size_t q = 0; q < queries && ok; ++q) {
    const auto query = unit(dim);
    const auto got = grrnn::nn_identify(query, models);
    std::vector<std::pair<double, int>> ref;
    for (const auto& m : models) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < dim; ++i)
        d2 += (query[i] - m.mean[i]) * (query[i] - m.mean[i]);
      ref.emplace_back(std::sqrt(d2), m.writer_id);
    }
    std::sort(ref.begin(), ref.end());
    for (std::size_t i = 0; i < writers; ++i)
      ok = ok && got.ranked[i].first == ref[i].second;
  }

  // Unit-norm invariance of extracted features on a live model.
  grrnn::ModelSpec spec{Variant::kFGRR, Axis::kHorizontal, 0.125, 4};
  grrnn::GrrnnModel<float> model(spec);
  model.init(77);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    Tensor<float> img = Tensor<float>::zeros({grrnn::kCanvasH, grrnn::kCanvasW, 1});
    for (std::size_t k = 0; k < img.numel(); ++k)
      img.data()[k] = static_cast<float>(rng.next_real());
    const auto f = grrnn::extract_feature(model, img);
    double n2 = 0.0;
    for (const double v : f) n2 += v * v;
    worst = std::max(worst, std::abs(std::sqrt(n2) - 1.0));
  }
  ok = ok && worst <= 1e-9;
  msg << queries << " queries match brute-force ranking; feature norm deviation "
      << grrnn::format_metric(worst) << " (cap 1e-9)";
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<const char*, std::function<bool(std::ostringstream&)>>>
      criteria = {
          {"architecture accounting", c1_accounting},
          {"forward shape contract", c2_shapes},
          {"gradient suite", c3_gradients},
          {"zero-parameter recurrence closed form", c4_gru_closed_form},
          {"label-smoothing loss oracle", c5_loss_oracle},
          {"threshold selection vs exhaustive search", c6_otsu},
          {"end-to-end desk-scale run", c7_end_to_end},
          {"gray vs contour mode ordering", c8_mode_ordering},
          {"byte-identical training reruns", c9_determinism},
          {"feature nearest-neighbor protocol", c10_feature_protocol},
      };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && only.count(id) == 0) continue;
    std::ostringstream msg;
    bool ok = false;
    try {
      ok = criteria[i].second(msg);
    } catch (const std::exception& e) {
      msg << "exception: " << e.what();
    }
    failures += !ok;
    std::printf("[%s] %2d %s: %s\n", ok ? "PASS" : "FAIL", id, criteria[i].first,
                msg.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED" : "CRITERIA FAILED");
  return failures == 0 ? 0 : 1;
}
