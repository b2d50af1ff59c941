#pragma once

#include <span>
#include <string>
#include <vector>

#include "nvs/checkpoint.hpp"
#include "nvs/data.hpp"
#include "nvs/model.hpp"
#include "nvs/rng.hpp"
#include "nvs/tape.hpp"

namespace nvs {

struct TrainConfig {
  double peak_lr = 4e-4;
  int warmup_steps = 2500;
  int total_steps = 10000;
  int batch_size = 4;
  // < 0 means auto: 1.0 for object-mode data, 0.5 for scene-mode
  double lambda_perceptual = -1.0;
  double clip_norm = 1.0;
  double skip_threshold = 5.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.05;
  // 0 = supervise every target view of each sampled example; k > 0 samples
  // k targets per example per step (batch assembly policy)
  int targets_per_example = 0;
  int checkpoint_every = 0;  // 0 = final checkpoint only

  void validate() const;
  double resolve_lambda(SampleMode mode) const {
    return lambda_perceptual >= 0 ? lambda_perceptual
                                  : (mode == SampleMode::Object ? 1.0 : 0.5);
  }
};

// Learning rate at a schedule step: linear warmup from 0 to the peak, then
// cosine decay to 0 at total_steps.
double lr_at(long step, const TrainConfig& config);

template <typename S>
struct TrainState {
  ModelWeights<S> weights;
  std::vector<Tensor<S>> moment1, moment2;  // canonical parameter order
  long step = 0;           // schedule steps taken, including skipped ones
  long applied_steps = 0;  // Adam updates applied (bias-correction power)
  long skipped_steps = 0;
  Rng rng{0};  // batch sampling stream

  static TrainState init(const ModelConfig& config, std::uint64_t seed);
};

// MSE plus lambda times the perceptual proxy. The proxy is the mean absolute
// difference of horizontal and vertical finite-difference image gradients
// (a stand-in for the network-based perceptual term, which needs pretrained
// weights and is out of scope here; lambda keeps the same role).
template <typename S>
TapeVar compute_loss(Tape<S>& tape, TapeVar pred_image, const Image& gt, double lambda);

// Decoupled-weight-decay Adam with bias-corrected moments; decay applies to
// every parameter except layer-norm gains. Reads gradients from the weight
// tensors; caller clips beforehand.
template <typename S>
void adamw_step(TrainState<S>& state, double lr, const TrainConfig& config);

struct StepMetrics {
  long step = 0;
  double loss = 0;
  double grad_norm = 0;
  double lr = 0;
  bool skipped = false;
};

// Gradient-norm rules on already-populated gradients: a pre-clip norm above
// skip_threshold skips the update entirely (weights and moments untouched);
// otherwise gradients are scaled by min(1, clip_norm / norm) and applied
// with lr_at(step). Advances the step counter either way.
template <typename S>
StepMetrics apply_update(TrainState<S>& state, const TrainConfig& config);

// Full step: forward every target view in the batch, average the loss,
// backprop, then apply_update. Throws NumericalError on non-finite loss.
template <typename S>
StepMetrics train_step(TrainState<S>& state, const TrainConfig& config,
                       std::span<const SceneExample> batch, double lambda);

// Per-scene forward used by train_step: sums the losses of every target of
// one example onto the tape (context encoded once).
template <typename S>
TapeVar scene_loss(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                   const SceneExample& example, double lambda);

std::string format_metrics_line(const StepMetrics& m);

// Checkpoint with optimizer state and sampling RNG so training resumes on
// the identical trajectory.
template <typename S>
Checkpoint<S> make_train_checkpoint(TrainState<S>& state,
                                    std::vector<std::pair<std::string, std::string>> meta);
template <typename S>
TrainState<S> train_state_from_checkpoint(const Checkpoint<S>& ckpt, const ModelConfig& config);

extern template struct TrainState<float>;
extern template struct TrainState<double>;

}  // namespace nvs
