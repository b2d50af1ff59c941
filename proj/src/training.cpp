#include "nvs/training.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "nvs/tokenizer.hpp"

namespace nvs {

void TrainConfig::validate() const {
  if (!(warmup_steps > 0) || !(warmup_steps < total_steps))
    throw ConfigError("train: need 0 < warmup_steps < total_steps");
  if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
  if (!(clip_norm > 0) || !(skip_threshold > 0))
    throw ConfigError("train: clip_norm and skip_threshold must be positive");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (targets_per_example < 0) throw ConfigError("train: targets_per_example must be >= 0");
}

double lr_at(long step, const TrainConfig& config) {
  if (step <= 0) return 0.0;
  if (step < config.warmup_steps)
    return config.peak_lr * static_cast<double>(step) / config.warmup_steps;
  double progress = static_cast<double>(step - config.warmup_steps) /
                    static_cast<double>(config.total_steps - config.warmup_steps);
  if (progress >= 1.0) return 0.0;
  return config.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename S>
TrainState<S> TrainState<S>::init(const ModelConfig& config, std::uint64_t seed) {
  TrainState<S> state;
  state.weights = init_weights<S>(config, Rng(seed).fork(seed_tag::kWeightInit).next_u64());
  for (Tensor<S>* t : state.weights.param_tensors()) {
    state.moment1.push_back(Tensor<S>::zeros(t->shape));
    state.moment2.push_back(Tensor<S>::zeros(t->shape));
  }
  state.rng = Rng(seed).fork(seed_tag::kBatchSampling);
  return state;
}

template <typename S>
TapeVar compute_loss(Tape<S>& tape, TapeVar pred_image, const Image& gt, double lambda) {
  const Tensor<S>& pred = tape.value(pred_image);
  if (pred.shape.size() != 3 || static_cast<int>(pred.shape[0]) != gt.height ||
      static_cast<int>(pred.shape[1]) != gt.width || pred.shape[2] != 3 || gt.channels != 3)
    throw ShapeError("loss: prediction " + shape_str(pred.shape) + " does not match target " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width) + "x3");
  std::size_t h = pred.shape[0], w = pred.shape[1];
  Tensor<S> gt_tensor({h, w, 3});
  for (std::size_t i = 0; i < gt_tensor.size(); ++i) gt_tensor.data[i] = static_cast<S>(gt.data[i]);
  TapeVar diff = tape.sub(pred_image, tape.constant(std::move(gt_tensor)));
  TapeVar loss = tape.mean_all(tape.mul(diff, diff));
  if (lambda == 0.0) return loss;

  auto flat = [w](std::size_t y, std::size_t x, std::size_t c) { return (y * w + x) * 3 + c; };
  std::vector<std::size_t> ha, hb, va, vb;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        ha.push_back(flat(y, x + 1, c));
        hb.push_back(flat(y, x, c));
      }
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        va.push_back(flat(y + 1, x, c));
        vb.push_back(flat(y, x, c));
      }
  std::size_t nh = ha.size(), nv = va.size();
  if (nh + nv == 0) return loss;
  TapeVar proxy;
  if (nh > 0) {
    TapeVar gh = tape.sub(tape.gather(diff, ha, {nh}), tape.gather(diff, hb, {nh}));
    proxy = tape.scale(tape.mean_all(tape.abs(gh)),
                       static_cast<S>(static_cast<double>(nh) / (nh + nv)));
  }
  if (nv > 0) {
    TapeVar gv = tape.sub(tape.gather(diff, va, {nv}), tape.gather(diff, vb, {nv}));
    TapeVar mv = tape.scale(tape.mean_all(tape.abs(gv)),
                            static_cast<S>(static_cast<double>(nv) / (nh + nv)));
    proxy = proxy.valid() ? tape.add(proxy, mv) : mv;
  }
  return tape.add(loss, tape.scale(proxy, static_cast<S>(lambda)));
}

template <typename S>
void adamw_step(TrainState<S>& state, double lr, const TrainConfig& config) {
  state.applied_steps += 1;
  double t = static_cast<double>(state.applied_steps);
  S bc1 = static_cast<S>(1.0 - std::pow(config.beta1, t));
  S bc2 = static_cast<S>(1.0 - std::pow(config.beta2, t));
  S b1 = static_cast<S>(config.beta1), b2 = static_cast<S>(config.beta2);
  S lrs = static_cast<S>(lr);
  S eps = static_cast<S>(1e-8);
  auto params = state.weights.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& w = *params[i].tensor;
    if (w.grad.size() != w.data.size())
      throw StateError("adamw: parameter " + params[i].name + " has no gradient");
    Tensor<S>& m = state.moment1[i];
    Tensor<S>& v = state.moment2[i];
    S decay = params[i].decay_exempt ? S(0) : static_cast<S>(config.weight_decay);
    for (std::size_t j = 0; j < w.data.size(); ++j) {
      S g = w.grad[j];
      if (decay != S(0)) w.data[j] -= lrs * decay * w.data[j];
      m.data[j] = b1 * m.data[j] + (S(1) - b1) * g;
      v.data[j] = b2 * v.data[j] + (S(1) - b2) * g * g;
      S mhat = m.data[j] / bc1;
      S vhat = v.data[j] / bc2;
      w.data[j] -= lrs * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename S>
StepMetrics apply_update(TrainState<S>& state, const TrainConfig& config) {
  StepMetrics metrics;
  metrics.step = state.step;
  auto tensors = state.weights.param_tensors();
  metrics.grad_norm = global_grad_norm<S>(tensors);
  metrics.lr = lr_at(state.step, config);
  if (metrics.grad_norm > config.skip_threshold) {
    metrics.skipped = true;
    state.skipped_steps += 1;
    state.step += 1;
    return metrics;
  }
  if (metrics.grad_norm > config.clip_norm) {
    S scale = static_cast<S>(config.clip_norm / metrics.grad_norm);
    for (Tensor<S>* t : tensors)
      for (S& g : t->grad) g *= scale;
  }
  adamw_step(state, metrics.lr, config);
  state.step += 1;
  return metrics;
}

template <typename S>
TapeVar scene_loss(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                   const SceneExample& example, double lambda) {
  if (example.inputs.empty() || example.targets.empty())
    throw StateError("scene_loss: example needs input and target views");
  int h = example.inputs[0].image.height, w = example.inputs[0].image.width;

  std::vector<CameraPose> poses;
  for (const View& in : example.inputs) poses.push_back(in.camera.pose);
  NormalizedCameras norm = normalize_cameras(poses, choose_reference_view(poses));

  std::vector<PluckerMap> rays;
  rays.reserve(example.inputs.size());
  std::vector<std::pair<const Image*, const PluckerMap*>> views(example.inputs.size());
  for (std::size_t i = 0; i < example.inputs.size(); ++i) {
    rays.push_back(compute_plucker_map(norm.poses[i], example.inputs[i].camera.intrinsics, h, w));
    views[i] = {&example.inputs[i].image, &rays[i]};
  }
  TokenSequence<S> input_tokens =
      tokenize_input_views<S>(tape, views, vars.input_proj, config.patch_size);
  TapeVar context = encode_context(tape, config, vars, input_tokens.tokens);

  TapeVar total;
  for (const View& target : example.targets) {
    CameraPose mapped = norm.transform.apply(target.camera.pose);
    PluckerMap target_rays = compute_plucker_map(mapped, target.camera.intrinsics,
                                                 target.camera.intrinsics.height,
                                                 target.camera.intrinsics.width);
    TokenSequence<S> q =
        tokenize_target_view<S>(tape, target_rays, vars.target_proj, config.patch_size);
    TapeVar y = decode_with_context(tape, config, vars, context, q.tokens, config.variant);
    TokenSequence<S> out{y, q.meta};
    TapeVar pred = decode_output_head(tape, out, vars.output_proj);
    TapeVar loss = compute_loss(tape, pred, target.image, lambda);
    total = total.valid() ? tape.add(total, loss) : loss;
  }
  return total;
}

template <typename S>
StepMetrics train_step(TrainState<S>& state, const TrainConfig& config,
                       std::span<const SceneExample> batch, double lambda) {
  if (batch.empty()) throw StateError("train_step: empty batch");
  state.weights.zero_grads();
  std::size_t total_targets = 0;
  for (const SceneExample& ex : batch) total_targets += ex.targets.size();
  double loss_sum = 0;
  for (const SceneExample& ex : batch) {
    Tape<S> tape;
    ModelVars vars = bind_model(tape, state.weights, true);
    TapeVar sum = scene_loss(tape, state.weights.config, vars, ex, lambda);
    loss_sum += static_cast<double>(tape.value(sum).data[0]);
    tape.backward(sum, static_cast<S>(1.0 / static_cast<double>(total_targets)));
  }
  double loss = loss_sum / static_cast<double>(total_targets);
  if (!std::isfinite(loss))
    throw NumericalError("train_step: non-finite loss " + std::to_string(loss) + " at step " +
                         std::to_string(state.step));
  StepMetrics metrics = apply_update(state, config);
  metrics.loss = loss;
  return metrics;
}

std::string format_metrics_line(const StepMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "step=%ld loss=%.10g grad_norm=%.10g lr=%.10g skipped=%d",
                m.step, m.loss, m.grad_norm, m.lr, m.skipped ? 1 : 0);
  return buf;
}

template <typename S>
Checkpoint<S> make_train_checkpoint(TrainState<S>& state,
                                    std::vector<std::pair<std::string, std::string>> meta) {
  Checkpoint<S> ckpt;
  ckpt.meta = std::move(meta);
  ckpt.meta.emplace_back("train.step", std::to_string(state.step));
  ckpt.meta.emplace_back("train.applied_steps", std::to_string(state.applied_steps));
  ckpt.meta.emplace_back("train.skipped_steps", std::to_string(state.skipped_steps));
  ckpt.meta.emplace_back("train.rng", state.rng.serialize());
  append_weight_tensors(ckpt, state.weights);
  auto params = state.weights.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.tensors.emplace_back("opt.m." + params[i].name, state.moment1[i]);
    ckpt.tensors.emplace_back("opt.v." + params[i].name, state.moment2[i]);
  }
  return ckpt;
}

template <typename S>
TrainState<S> train_state_from_checkpoint(const Checkpoint<S>& ckpt, const ModelConfig& config) {
  TrainState<S> state;
  state.weights = weights_from_checkpoint(ckpt, config);
  auto params = state.weights.params();
  for (const auto& p : params) {
    const Tensor<S>* m = ckpt.find_tensor("opt.m." + p.name);
    const Tensor<S>* v = ckpt.find_tensor("opt.v." + p.name);
    if (!m || !v)
      throw ParseError("checkpoint: missing optimizer state for " + p.name +
                       " (not a training checkpoint?)");
    state.moment1.push_back(*m);
    state.moment2.push_back(*v);
  }
  auto meta_long = [&](const std::string& key) {
    const std::string* v = ckpt.find_meta(key);
    if (!v) throw ParseError("checkpoint: missing meta key " + key);
    return std::stol(*v);
  };
  state.step = meta_long("train.step");
  state.applied_steps = meta_long("train.applied_steps");
  state.skipped_steps = meta_long("train.skipped_steps");
  const std::string* rng = ckpt.find_meta("train.rng");
  if (!rng) throw ParseError("checkpoint: missing meta key train.rng");
  state.rng = Rng::deserialize(*rng);
  return state;
}

template struct TrainState<float>;
template struct TrainState<double>;
template TapeVar compute_loss<float>(Tape<float>&, TapeVar, const Image&, double);
template TapeVar compute_loss<double>(Tape<double>&, TapeVar, const Image&, double);
template void adamw_step<float>(TrainState<float>&, double, const TrainConfig&);
template void adamw_step<double>(TrainState<double>&, double, const TrainConfig&);
template StepMetrics apply_update<float>(TrainState<float>&, const TrainConfig&);
template StepMetrics apply_update<double>(TrainState<double>&, const TrainConfig&);
template TapeVar scene_loss<float>(Tape<float>&, const ModelConfig&, const ModelVars&,
                                   const SceneExample&, double);
template TapeVar scene_loss<double>(Tape<double>&, const ModelConfig&, const ModelVars&,
                                    const SceneExample&, double);
template StepMetrics train_step<float>(TrainState<float>&, const TrainConfig&,
                                       std::span<const SceneExample>, double);
template StepMetrics train_step<double>(TrainState<double>&, const TrainConfig&,
                                        std::span<const SceneExample>, double);
template Checkpoint<float> make_train_checkpoint<float>(
    TrainState<float>&, std::vector<std::pair<std::string, std::string>>);
template Checkpoint<double> make_train_checkpoint<double>(
    TrainState<double>&, std::vector<std::pair<std::string, std::string>>);
template TrainState<float> train_state_from_checkpoint<float>(const Checkpoint<float>&,
                                                              const ModelConfig&);
template TrainState<double> train_state_from_checkpoint<double>(const Checkpoint<double>&,
                                                                const ModelConfig&);

}  // namespace nvs
