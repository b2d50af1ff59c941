#include "nvs/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "nvs/threading.hpp"

namespace nvs {

double psnr(const Image& pred, const Image& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.channels != gt.channels)
    throw ShapeError("psnr: image shapes differ");
  double mse = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse < 1e-10) return 99.0;
  return 10.0 * std::log10(1.0 / mse);
}

namespace {

std::vector<double> luma(const Image& img) {
  std::vector<double> y(static_cast<std::size_t>(img.height) * img.width);
  for (int v = 0; v < img.height; ++v)
    for (int u = 0; u < img.width; ++u)
      y[static_cast<std::size_t>(v) * img.width + u] =
          0.299 * img.at(v, u, 0) + 0.587 * img.at(v, u, 1) + 0.114 * img.at(v, u, 2);
  return y;
}

}  // namespace

double ssim(const Image& pred, const Image& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("ssim: image shapes differ");
  const int win = 8, stride = 4;
  if (pred.height < win || pred.width < win)
    throw ShapeError("ssim: image smaller than the 8x8 window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> x = luma(pred), y = luma(gt);
  int w = pred.width;
  double total = 0;
  std::size_t windows = 0;
  for (int wy = 0; wy + win <= pred.height; wy += stride) {
    for (int wx = 0; wx + win <= pred.width; wx += stride) {
      double mx = 0, my = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          mx += x[(wy + i) * w + wx + j];
          my += y[(wy + i) * w + wx + j];
        }
      mx /= win * win;
      my /= win * win;
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          double dx = x[(wy + i) * w + wx + j] - mx;
          double dy = y[(wy + i) * w + wx + j] - my;
          vx += dx * dx;
          vy += dy * dy;
          cov += dx * dy;
        }
      vx /= win * win;
      vy /= win * win;
      cov /= win * win;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      windows += 1;
    }
  }
  return total / static_cast<double>(windows);
}

template <typename S>
EvalReport evaluate(const ModelConfig& config, const ModelWeights<S>& weights,
                    std::span<const SceneExample> examples) {
  EvalReport report;
  report.header = "metrics: PSNR, SSIM (LPIPS omitted: needs a pretrained network)";
  double sp = 0, ss = 0;
  for (const SceneExample& ex : examples) {
    std::vector<PosedImage> inputs;
    for (const View& v : ex.inputs) inputs.push_back({v.image, v.camera});
    ViewSynthesizer<S> synth(config, weights, inputs);
    double p = 0, s = 0;
    for (const View& target : ex.targets) {
      Image pred = synth.render(target.camera);
      p += psnr(pred, target.image);
      s += ssim(pred, target.image);
    }
    SceneScore score{p / ex.targets.size(), s / ex.targets.size()};
    report.per_scene.push_back(score);
    sp += score.psnr;
    ss += score.ssim;
  }
  if (!examples.empty()) {
    report.mean_psnr = sp / static_cast<double>(examples.size());
    report.mean_ssim = ss / static_cast<double>(examples.size());
  }
  return report;
}

template <typename S>
std::vector<SweepRow> view_count_sweep(const ModelConfig& config, const ModelWeights<S>& weights,
                                       std::span<const SceneExample> examples,
                                       std::span<const int> counts) {
  for (int c : counts)
    for (const SceneExample& ex : examples)
      if (c < 1 || static_cast<std::size_t>(c) > ex.inputs.size())
        throw ConfigError("sweep: count " + std::to_string(c) + " exceeds available input views (" +
                          std::to_string(ex.inputs.size()) + ")");
  std::vector<SweepRow> rows;
  for (int c : counts) {
    double sp = 0, ss = 0;
    std::size_t n = 0;
    for (const SceneExample& ex : examples) {
      std::vector<PosedImage> inputs;
      for (int i = 0; i < c; ++i) inputs.push_back({ex.inputs[i].image, ex.inputs[i].camera});
      ViewSynthesizer<S> synth(config, weights, inputs);
      for (const View& target : ex.targets) {
        Image pred = synth.render(target.camera);
        sp += psnr(pred, target.image);
        ss += ssim(pred, target.image);
        ++n;
      }
    }
    rows.push_back({c, sp / static_cast<double>(n), ss / static_cast<double>(n)});
  }
  return rows;
}

template <typename S>
std::vector<TimingRow> decode_timing(const ModelConfig& config, const ModelWeights<S>& weights,
                                     std::span<const int> counts, int repetitions,
                                     int resolution, std::uint64_t scene_seed) {
  if (repetitions < 3) throw ConfigError("timing: need at least 3 repetitions");
  int max_count = *std::max_element(counts.begin(), counts.end());
  SceneSpec scene = generate_scene(scene_seed);
  SceneExample ex = sample_example(scene, SampleMode::Object, max_count, 1, scene_seed, resolution);
  const CameraModel& target = ex.targets[0].camera;

  int saved_threads = thread_count();
  set_thread_count(1);  // timing runs are pinned to sequential mode
  std::vector<std::unique_ptr<ViewSynthesizer<S>>> synths;
  for (int c : counts) {
    std::vector<PosedImage> inputs;
    for (int i = 0; i < c; ++i) inputs.push_back({ex.inputs[i].image, ex.inputs[i].camera});
    synths.push_back(std::make_unique<ViewSynthesizer<S>>(config, weights, inputs));
    synths.back()->render(target);  // warmup, excluded
  }
  // repetitions interleaved across counts so clock and cache drift spread
  // evenly instead of biasing whichever count runs first
  std::vector<std::vector<double>> times(counts.size());
  for (int r = 0; r < repetitions; ++r) {
    for (std::size_t i = 0; i < counts.size(); ++i) {
      auto start = std::chrono::steady_clock::now();
      Image img = synths[i]->render(target);
      auto end = std::chrono::steady_clock::now();
      times[i].push_back(std::chrono::duration<double>(end - start).count());
    }
  }
  std::vector<TimingRow> rows;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::sort(times[i].begin(), times[i].end());
    rows.push_back({counts[i], times[i][times[i].size() / 2]});
  }
  set_thread_count(saved_threads);
  return rows;
}

SceneScore nearest_input_baseline(const SceneExample& example) {
  double sp = 0, ss = 0;
  for (const View& target : example.targets) {
    double best = 1e300;
    const View* nearest = &example.inputs[0];
    for (const View& in : example.inputs) {
      double d = norm(in.camera.pose.translation - target.camera.pose.translation);
      if (d < best) {
        best = d;
        nearest = &in;
      }
    }
    sp += psnr(nearest->image, target.image);
    ss += ssim(nearest->image, target.image);
  }
  return {sp / example.targets.size(), ss / example.targets.size()};
}

std::string render_report_text(const EvalReport& report) {
  std::ostringstream os;
  os << report.header << "\n";
  os << "scene      PSNR(dB)     SSIM\n";
  char buf[96];
  for (std::size_t i = 0; i < report.per_scene.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%-8zu %9.4f %8.4f\n", i, report.per_scene[i].psnr,
                  report.per_scene[i].ssim);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean     %9.4f %8.4f\n", report.mean_psnr, report.mean_ssim);
  os << buf;
  if (!report.sweep.empty()) {
    os << "\ninput views   PSNR(dB)     SSIM\n";
    for (const SweepRow& r : report.sweep) {
      std::snprintf(buf, sizeof(buf), "%-12d %9.4f %8.4f\n", r.input_count, r.mean_psnr,
                    r.mean_ssim);
      os << buf;
    }
  }
  if (!report.timing.empty()) {
    os << "\ninput views   decode s/view\n";
    for (const TimingRow& r : report.timing) {
      std::snprintf(buf, sizeof(buf), "%-12d %12.6f\n", r.input_count,
                    r.median_seconds_per_view);
      os << buf;
    }
  }
  return os.str();
}

std::string render_report_keyvalue(const EvalReport& report) {
  std::ostringstream os;
  char buf[96];
  os << "report.metrics = psnr,ssim\n";
  os << "report.lpips = omitted\n";
  for (std::size_t i = 0; i < report.per_scene.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "scene.%zu.psnr = %.10g\n", i, report.per_scene[i].psnr);
    os << buf;
    std::snprintf(buf, sizeof(buf), "scene.%zu.ssim = %.10g\n", i, report.per_scene[i].ssim);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean.psnr = %.10g\n", report.mean_psnr);
  os << buf;
  std::snprintf(buf, sizeof(buf), "mean.ssim = %.10g\n", report.mean_ssim);
  os << buf;
  for (const SweepRow& r : report.sweep) {
    std::snprintf(buf, sizeof(buf), "sweep.%d.psnr = %.10g\n", r.input_count, r.mean_psnr);
    os << buf;
    std::snprintf(buf, sizeof(buf), "sweep.%d.ssim = %.10g\n", r.input_count, r.mean_ssim);
    os << buf;
  }
  for (const TimingRow& r : report.timing) {
    std::snprintf(buf, sizeof(buf), "timing.%d.seconds_per_view = %.10g\n", r.input_count,
                  r.median_seconds_per_view);
    os << buf;
  }
  return os.str();
}

void write_report(const EvalReport& report, const std::string& text_path,
                  const std::string& keyvalue_path) {
  std::ofstream t(text_path);
  if (!t) throw IoError("cannot open " + text_path + " for writing");
  t << render_report_text(report);
  std::ofstream k(keyvalue_path);
  if (!k) throw IoError("cannot open " + keyvalue_path + " for writing");
  k << render_report_keyvalue(report);
}

Image image_grid(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("image_grid: no images");
  int h = images[0].height;
  int w = 0;
  for (const Image& img : images) {
    if (img.height != h) throw ShapeError("image_grid: heights differ");
    w += img.width + 1;
  }
  w -= 1;
  Image grid(h, w, 3);
  for (float& v : grid.data) v = 1.f;
  int x0 = 0;
  for (const Image& img : images) {
    for (int v = 0; v < h; ++v)
      for (int u = 0; u < img.width; ++u)
        for (int c = 0; c < 3; ++c) grid.at(v, x0 + u, c) = img.at(v, u, c);
    x0 += img.width + 1;
  }
  return grid;
}

template EvalReport evaluate<float>(const ModelConfig&, const ModelWeights<float>&,
                                    std::span<const SceneExample>);
template EvalReport evaluate<double>(const ModelConfig&, const ModelWeights<double>&,
                                     std::span<const SceneExample>);
template std::vector<SweepRow> view_count_sweep<float>(const ModelConfig&,
                                                       const ModelWeights<float>&,
                                                       std::span<const SceneExample>,
                                                       std::span<const int>);
template std::vector<SweepRow> view_count_sweep<double>(const ModelConfig&,
                                                        const ModelWeights<double>&,
                                                        std::span<const SceneExample>,
                                                        std::span<const int>);
template std::vector<TimingRow> decode_timing<float>(const ModelConfig&,
                                                     const ModelWeights<float>&,
                                                     std::span<const int>, int, int,
                                                     std::uint64_t);
template std::vector<TimingRow> decode_timing<double>(const ModelConfig&,
                                                      const ModelWeights<double>&,
                                                      std::span<const int>, int, int,
                                                      std::uint64_t);

}  // namespace nvs
