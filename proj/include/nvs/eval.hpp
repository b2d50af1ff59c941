#pragma once

#include <span>
#include <string>
#include <vector>

#include "nvs/data.hpp"
#include "nvs/image.hpp"
#include "nvs/model.hpp"

namespace nvs {

// 10*log10(1/MSE) over [0,1] images, capped at 99 dB for MSE below 1e-10.
double psnr(const Image& pred, const Image& gt);

// Mean SSIM over 8x8 windows at stride 4 on the luma channel
// (0.299/0.587/0.114), C1 = 0.01^2, C2 = 0.03^2 on unit range.
double ssim(const Image& pred, const Image& gt);

struct SceneScore {
  double psnr = 0;
  double ssim = 0;
};

struct SweepRow {
  int input_count = 0;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

struct TimingRow {
  int input_count = 0;
  double median_seconds_per_view = 0;
};

struct EvalReport {
  std::string header;  // states the LPIPS omission
  std::vector<SceneScore> per_scene;
  double mean_psnr = 0;
  double mean_ssim = 0;
  std::vector<SweepRow> sweep;
  std::vector<TimingRow> timing;
};

// Synthesizes every target of every example from its input views and scores
// against ground truth.
template <typename S>
EvalReport evaluate(const ModelConfig& config, const ModelWeights<S>& weights,
                    std::span<const SceneExample> examples);

// For each count c, renders all targets from the first c input views.
// Models trained with a fixed view count run zero-shot at the other counts.
template <typename S>
std::vector<SweepRow> view_count_sweep(const ModelConfig& config, const ModelWeights<S>& weights,
                                       std::span<const SceneExample> examples,
                                       std::span<const int> counts);

// Median wall-clock seconds per rendered view vs. input count, single
// thread. The encoder-decoder constructor (encoder pass) runs outside the
// timed region, so only its decoder cost is measured; decoder-only renders
// time the full pass. One warmup render per count is excluded.
template <typename S>
std::vector<TimingRow> decode_timing(const ModelConfig& config, const ModelWeights<S>& weights,
                                     std::span<const int> counts, int repetitions,
                                     int resolution, std::uint64_t scene_seed = 7);

// Copy-nearest-input baseline: predicts each target with the input image
// whose camera center is closest to the target's.
SceneScore nearest_input_baseline(const SceneExample& example);

std::string render_report_text(const EvalReport& report);
std::string render_report_keyvalue(const EvalReport& report);
void write_report(const EvalReport& report, const std::string& text_path,
                  const std::string& keyvalue_path);

// Row of images side by side: inputs | prediction | ground truth.
Image image_grid(std::span<const Image> images);

}  // namespace nvs
