#include "nvs/model.hpp"

#include <cmath>

#include "nvs/rng.hpp"

namespace nvs {

std::string to_string(Architecture a) {
  return a == Architecture::EncoderDecoder ? "encoder_decoder" : "decoder_only";
}

std::string to_string(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::Full: return "full";
    case AttentionVariant::FrozenLatents: return "frozen_latents";
    case AttentionVariant::PerPatch: return "per_patch";
    case AttentionVariant::PureCross: return "pure_cross";
  }
  return "full";
}

Architecture parse_architecture(const std::string& s) {
  if (s == "encoder_decoder") return Architecture::EncoderDecoder;
  if (s == "decoder_only") return Architecture::DecoderOnly;
  throw ConfigError("unknown architecture '" + s + "' (encoder_decoder | decoder_only)");
}

AttentionVariant parse_variant(const std::string& s) {
  if (s == "full") return AttentionVariant::Full;
  if (s == "frozen_latents") return AttentionVariant::FrozenLatents;
  if (s == "per_patch") return AttentionVariant::PerPatch;
  if (s == "pure_cross") return AttentionVariant::PureCross;
  throw ConfigError("unknown attention variant '" + s +
                    "' (full | frozen_latents | per_patch | pure_cross)");
}

void ModelConfig::validate() const {
  if (dim < 1 || heads < 1 || dim % heads != 0)
    throw ConfigError("model: dim must be a positive multiple of heads");
  if (patch_size < 1) throw ConfigError("model: patch_size must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("model: mlp_ratio must be >= 1");
  if (decoder_layers < 1) throw ConfigError("model: need at least one decoder layer");
  if (architecture == Architecture::EncoderDecoder) {
    if (encoder_layers < 1)
      throw ConfigError("model: encoder-decoder needs at least one encoder layer");
    if (latent_count < 1)
      throw ConfigError("model: encoder-decoder needs latent_count >= 1");
  } else {
    if (encoder_layers != 0)
      throw ConfigError("model: decoder-only must have encoder_layers = 0");
    if (variant != AttentionVariant::Full && variant != AttentionVariant::PerPatch)
      throw ConfigError("model: decoder-only supports full and per_patch variants only");
  }
}

template <typename S>
std::vector<typename ModelWeights<S>::ParamRef> ModelWeights<S>::params() {
  std::vector<ParamRef> out;
  out.push_back({"input_proj", &input_proj, false});
  out.push_back({"target_proj", &target_proj, false});
  out.push_back({"output_proj", &output_proj, false});
  if (config.architecture == Architecture::EncoderDecoder)
    out.push_back({"latents", &latents, false});
  auto add_layers = [&](std::vector<LayerWeights<S>>& layers, const std::string& prefix) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      std::string base = prefix + "." + std::to_string(i) + ".";
      LayerWeights<S>& lw = layers[i];
      out.push_back({base + "ln1_gain", &lw.ln1_gain, true});
      out.push_back({base + "wq", &lw.wq, false});
      out.push_back({base + "wk", &lw.wk, false});
      out.push_back({base + "wv", &lw.wv, false});
      out.push_back({base + "wo", &lw.wo, false});
      out.push_back({base + "qk_gain", &lw.qk_gain, false});
      out.push_back({base + "ln2_gain", &lw.ln2_gain, true});
      out.push_back({base + "w_up", &lw.w_up, false});
      out.push_back({base + "w_down", &lw.w_down, false});
    }
  };
  add_layers(encoder, "encoder");
  add_layers(decoder, "decoder");
  return out;
}

template <typename S>
std::vector<Tensor<S>*> ModelWeights<S>::param_tensors() {
  std::vector<Tensor<S>*> out;
  for (auto& p : params()) out.push_back(p.tensor);
  return out;
}

template <typename S>
void ModelWeights<S>::zero_grads() {
  for (Tensor<S>* t : param_tensors()) t->zero_grad();
}

template <typename S>
template <typename T>
ModelWeights<T> ModelWeights<S>::cast() const {
  ModelWeights<T> out;
  out.config = config;
  out.input_proj = input_proj.template cast<T>();
  out.target_proj = target_proj.template cast<T>();
  out.output_proj = output_proj.template cast<T>();
  out.latents = latents.template cast<T>();
  auto conv = [](const std::vector<LayerWeights<S>>& in) {
    std::vector<LayerWeights<T>> v;
    v.reserve(in.size());
    for (const auto& lw : in)
      v.push_back({lw.ln1_gain.template cast<T>(), lw.wq.template cast<T>(),
                   lw.wk.template cast<T>(), lw.wv.template cast<T>(), lw.wo.template cast<T>(),
                   lw.qk_gain.template cast<T>(), lw.ln2_gain.template cast<T>(),
                   lw.w_up.template cast<T>(), lw.w_down.template cast<T>()});
    return v;
  };
  out.encoder = conv(encoder);
  out.decoder = conv(decoder);
  return out;
}

namespace {

template <typename S>
Tensor<S> draw_normal(Rng& rng, Shape shape, double sigma) {
  Tensor<S> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<S>(rng.normal(0.0, sigma));
  t.requires_grad = true;
  return t;
}

template <typename S>
Tensor<S> gain_tensor(Shape shape, S value) {
  Tensor<S> t = Tensor<S>::full(std::move(shape), value);
  t.requires_grad = true;
  return t;
}

}  // namespace

double layer_init_sigma(int idx) { return 0.02 / std::sqrt(2.0 * (idx + 1)); }

template <typename S>
ModelWeights<S> init_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelWeights<S> w;
  w.config = config;
  std::size_t d = static_cast<std::size_t>(config.dim);
  std::size_t p2 = static_cast<std::size_t>(config.patch_size) * config.patch_size;
  const double proj_sigma = 0.02;
  w.input_proj = draw_normal<S>(rng, {p2 * 9, d}, proj_sigma);
  w.target_proj = draw_normal<S>(rng, {p2 * 6, d}, proj_sigma);
  w.output_proj = draw_normal<S>(rng, {d, p2 * 3}, proj_sigma);
  if (config.architecture == Architecture::EncoderDecoder)
    w.latents = draw_normal<S>(rng, {static_cast<std::size_t>(config.latent_count), d},
                               proj_sigma);
  S qk_init = static_cast<S>(std::sqrt(static_cast<double>(config.head_dim())));
  int idx = 0;
  auto make_layers = [&](int count) {
    std::vector<LayerWeights<S>> layers;
    layers.reserve(count);
    for (int i = 0; i < count; ++i, ++idx) {
      double sigma = layer_init_sigma(idx);
      LayerWeights<S> lw;
      lw.ln1_gain = gain_tensor<S>({d}, S(1));
      lw.wq = draw_normal<S>(rng, {d, d}, sigma);
      lw.wk = draw_normal<S>(rng, {d, d}, sigma);
      lw.wv = draw_normal<S>(rng, {d, d}, sigma);
      lw.wo = draw_normal<S>(rng, {d, d}, sigma);
      lw.qk_gain = gain_tensor<S>({static_cast<std::size_t>(config.heads)}, qk_init);
      lw.ln2_gain = gain_tensor<S>({d}, S(1));
      lw.w_up = draw_normal<S>(rng, {d, d * config.mlp_ratio}, sigma);
      lw.w_down = draw_normal<S>(rng, {d * config.mlp_ratio, d}, sigma);
      layers.push_back(std::move(lw));
    }
    return layers;
  };
  w.encoder = make_layers(config.encoder_layers);
  w.decoder = make_layers(config.decoder_layers);
  return w;
}

BoolMatrix build_mask_from_flags(bool latents_updated, bool targets_joint,
                                 std::size_t context_count, std::size_t target_count) {
  std::size_t total = context_count + target_count;
  BoolMatrix m(total, total, false);
  for (std::size_t i = 0; i < context_count; ++i) {
    if (latents_updated) {
      for (std::size_t j = 0; j < context_count; ++j) m.set(i, j, true);
      if (targets_joint)
        for (std::size_t j = context_count; j < total; ++j) m.set(i, j, true);
    } else {
      m.set(i, i, true);
    }
  }
  for (std::size_t i = context_count; i < total; ++i) {
    for (std::size_t j = 0; j < context_count; ++j) m.set(i, j, true);
    if (targets_joint)
      for (std::size_t j = context_count; j < total; ++j) m.set(i, j, true);
  }
  return m;
}

AttentionMask build_variant_mask(AttentionVariant kind, std::size_t context_count,
                                 std::size_t target_count) {
  if (context_count < 1 || target_count < 1)
    throw ConfigError("variant mask: need at least one context and one target token");
  AttentionMask out;
  switch (kind) {
    case AttentionVariant::Full:
      out.latents_updated = true;
      out.targets_joint = true;
      break;
    case AttentionVariant::FrozenLatents:
      out.latents_updated = false;
      out.targets_joint = true;
      break;
    case AttentionVariant::PerPatch:
      out.latents_updated = true;
      out.targets_joint = false;
      break;
    case AttentionVariant::PureCross:
      out.latents_updated = false;
      out.targets_joint = false;
      break;
  }
  out.allowed =
      build_mask_from_flags(out.latents_updated, out.targets_joint, context_count, target_count);
  return out;
}

namespace {

template <typename S>
LayerVars bind_layer(Tape<S>& tape, LayerWeights<S>& lw, bool trainable) {
  auto bind = [&](Tensor<S>& t) { return trainable ? tape.param(t) : tape.input(t); };
  LayerVars v;
  v.ln1 = bind(lw.ln1_gain);
  v.wq = bind(lw.wq);
  v.wk = bind(lw.wk);
  v.wv = bind(lw.wv);
  v.wo = bind(lw.wo);
  v.qk_gain = bind(lw.qk_gain);
  v.ln2 = bind(lw.ln2_gain);
  v.w_up = bind(lw.w_up);
  v.w_down = bind(lw.w_down);
  return v;
}

}  // namespace

template <typename S>
ModelVars bind_model(Tape<S>& tape, ModelWeights<S>& weights, bool trainable) {
  ModelVars v;
  auto bind = [&](Tensor<S>& t) { return trainable ? tape.param(t) : tape.input(t); };
  v.input_proj = bind(weights.input_proj);
  v.target_proj = bind(weights.target_proj);
  v.output_proj = bind(weights.output_proj);
  if (weights.config.architecture == Architecture::EncoderDecoder)
    v.latents = bind(weights.latents);
  for (auto& lw : weights.encoder) v.encoder.push_back(bind_layer(tape, lw, trainable));
  for (auto& lw : weights.decoder) v.decoder.push_back(bind_layer(tape, lw, trainable));
  return v;
}

template <typename S>
ModelVars bind_model(Tape<S>& tape, const ModelWeights<S>& weights) {
  return bind_model(tape, const_cast<ModelWeights<S>&>(weights), false);
}

template <typename S>
TapeVar transformer_layer(Tape<S>& tape, TapeVar x, const LayerVars& lv, const BoolMatrix* mask,
                          int heads) {
  const Tensor<S>& xv = tape.value(x);
  std::size_t rows = xv.rows(), d = xv.cols();
  std::size_t dh = d / static_cast<std::size_t>(heads);
  TapeVar u = tape.layer_norm_rows(x, lv.ln1);
  TapeVar q = tape.reshape(tape.matmul(u, lv.wq), {rows, static_cast<std::size_t>(heads), dh});
  TapeVar k = tape.reshape(tape.matmul(u, lv.wk), {rows, static_cast<std::size_t>(heads), dh});
  TapeVar v = tape.reshape(tape.matmul(u, lv.wv), {rows, static_cast<std::size_t>(heads), dh});
  TapeVar att = qknorm_attention(tape, q, k, v, mask, lv.qk_gain);
  TapeVar proj = tape.matmul(tape.reshape(att, {rows, d}), lv.wo);
  TapeVar h1 = tape.add(x, proj);
  TapeVar m = tape.layer_norm_rows(h1, lv.ln2);
  TapeVar mlp = tape.matmul(tape.gelu(tape.matmul(m, lv.w_up)), lv.w_down);
  return tape.add(h1, mlp);
}

template <typename S>
TapeVar encode_context(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                       TapeVar input_tokens) {
  if (config.architecture == Architecture::DecoderOnly) return input_tokens;
  std::size_t lx = tape.value(input_tokens).rows();
  std::size_t l = static_cast<std::size_t>(config.latent_count);
  TapeVar parts[] = {input_tokens, vars.latents};
  TapeVar seq = tape.concat_rows(parts);
  for (const LayerVars& lv : vars.encoder)
    seq = transformer_layer(tape, seq, lv, nullptr, config.heads);
  // updated input tokens are discarded; the last l outputs are the scene code
  return tape.slice_rows(seq, lx, lx + l);
}

template <typename S>
TapeVar decode_with_context(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                            TapeVar context, TapeVar target_tokens, AttentionVariant variant) {
  if (config.architecture == Architecture::DecoderOnly && variant != AttentionVariant::Full &&
      variant != AttentionVariant::PerPatch)
    throw ConfigError("decoder-only supports full and per_patch variants only");
  std::size_t lc = tape.value(context).rows();
  std::size_t lq = tape.value(target_tokens).rows();
  TapeVar parts[] = {context, target_tokens};
  TapeVar seq = tape.concat_rows(parts);
  AttentionMask mask;
  const BoolMatrix* mask_ptr = nullptr;
  if (variant != AttentionVariant::Full) {
    mask = build_variant_mask(variant, lc, lq);
    mask_ptr = &mask.allowed;
  }
  for (const LayerVars& lv : vars.decoder)
    seq = transformer_layer(tape, seq, lv, mask_ptr, config.heads);
  return tape.slice_rows(seq, lc, lc + lq);
}

template <typename S>
TapeVar forward_encoder_decoder(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                                TapeVar input_tokens, TapeVar target_tokens,
                                AttentionVariant variant) {
  if (config.architecture != Architecture::EncoderDecoder)
    throw ConfigError("forward_encoder_decoder: config is not encoder-decoder");
  TapeVar z = encode_context(tape, config, vars, input_tokens);
  return decode_with_context(tape, config, vars, z, target_tokens, variant);
}

template <typename S>
TapeVar forward_decoder_only(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                             TapeVar input_tokens, TapeVar target_tokens,
                             AttentionVariant variant) {
  if (config.architecture != Architecture::DecoderOnly)
    throw ConfigError("forward_decoder_only: config is not decoder-only");
  return decode_with_context(tape, config, vars, input_tokens, target_tokens, variant);
}

template <typename S>
TapeVar forward_model(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                      TapeVar input_tokens, TapeVar target_tokens, AttentionVariant variant) {
  return config.architecture == Architecture::EncoderDecoder
             ? forward_encoder_decoder(tape, config, vars, input_tokens, target_tokens, variant)
             : forward_decoder_only(tape, config, vars, input_tokens, target_tokens, variant);
}

namespace {

template <typename S>
Image tensor_to_image(const Tensor<S>& t) {
  Image img(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), 3);
  for (std::size_t i = 0; i < t.data.size(); ++i) img.data[i] = static_cast<float>(t.data[i]);
  return img;
}

}  // namespace

template <typename S>
ViewSynthesizer<S>::ViewSynthesizer(const ModelConfig& config, const ModelWeights<S>& weights,
                                    const std::vector<PosedImage>& inputs)
    : config_(config), weights_(weights) {
  config.validate();
  if (inputs.empty()) throw ShapeError("synthesize: need at least one input view");
  int h = inputs[0].image.height, w = inputs[0].image.width;
  for (const PosedImage& in : inputs)
    if (in.image.height != h || in.image.width != w)
      throw ShapeError("synthesize: input views must share one resolution");
  if (h % config.patch_size != 0 || w % config.patch_size != 0)
    throw ShapeError("synthesize: resolution not divisible by patch size");

  std::vector<CameraPose> poses;
  for (const PosedImage& in : inputs) poses.push_back(in.camera.pose);
  NormalizedCameras norm = normalize_cameras(poses, choose_reference_view(poses));
  transform_ = norm.transform;

  std::vector<PluckerMap> rays;
  rays.reserve(inputs.size());
  std::vector<std::pair<const Image*, const PluckerMap*>> views;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    rays.push_back(compute_plucker_map(norm.poses[i], inputs[i].camera.intrinsics, h, w));
    views.push_back({&inputs[i].image, nullptr});
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) views[i].second = &rays[i];

  input_patch_rows_ = input_patch_matrix<S>(views, config.patch_size);
  input_token_count_ = input_patch_rows_.rows();

  if (config.architecture == Architecture::EncoderDecoder) {
    Tape<S> tape;
    ModelVars vars = bind_model(tape, weights_);
    TapeVar tokens = tape.matmul(tape.input(input_patch_rows_), vars.input_proj);
    TapeVar z = encode_context(tape, config, vars, tokens);
    latent_state_ = tape.value(z);
  }
}

template <typename S>
Image ViewSynthesizer<S>::render(const CameraModel& target) const {
  int p = config_.patch_size;
  const CameraIntrinsics& ti = target.intrinsics;
  if (ti.height % p != 0 || ti.width % p != 0)
    throw ShapeError("synthesize: target resolution not divisible by patch size");
  CameraPose mapped = transform_.apply(target.pose);
  PluckerMap target_rays = compute_plucker_map(mapped, ti, ti.height, ti.width);

  Tape<S> tape;
  ModelVars vars = bind_model(tape, weights_);
  TokenSequence<S> targets =
      tokenize_target_view<S>(tape, target_rays, vars.target_proj, p);
  TapeVar context = config_.architecture == Architecture::EncoderDecoder
                        ? tape.input(latent_state_)
                        : tape.matmul(tape.input(input_patch_rows_), vars.input_proj);
  TapeVar y =
      decode_with_context(tape, config_, vars, context, targets.tokens, config_.variant);
  TokenSequence<S> out{y, targets.meta};
  out.meta.kind = TokenKind::Output;
  TapeVar img = decode_output_head(tape, out, vars.output_proj);
  return tensor_to_image(tape.value(img));
}

template <typename S>
Image synthesize_view(const ModelConfig& config, const ModelWeights<S>& weights,
                      const std::vector<PosedImage>& inputs, const CameraModel& target) {
  return ViewSynthesizer<S>(config, weights, inputs).render(target);
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template ModelWeights<float> ModelWeights<float>::cast<float>() const;
template ModelWeights<double> ModelWeights<float>::cast<double>() const;
template ModelWeights<float> ModelWeights<double>::cast<float>() const;
template ModelWeights<double> ModelWeights<double>::cast<double>() const;
template ModelWeights<float> init_weights<float>(const ModelConfig&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const ModelConfig&, std::uint64_t);
template ModelVars bind_model<float>(Tape<float>&, ModelWeights<float>&, bool);
template ModelVars bind_model<double>(Tape<double>&, ModelWeights<double>&, bool);
template ModelVars bind_model<float>(Tape<float>&, const ModelWeights<float>&);
template ModelVars bind_model<double>(Tape<double>&, const ModelWeights<double>&);
template TapeVar transformer_layer<float>(Tape<float>&, TapeVar, const LayerVars&,
                                          const BoolMatrix*, int);
template TapeVar transformer_layer<double>(Tape<double>&, TapeVar, const LayerVars&,
                                           const BoolMatrix*, int);
template TapeVar encode_context<float>(Tape<float>&, const ModelConfig&, const ModelVars&,
                                       TapeVar);
template TapeVar encode_context<double>(Tape<double>&, const ModelConfig&, const ModelVars&,
                                        TapeVar);
template TapeVar decode_with_context<float>(Tape<float>&, const ModelConfig&, const ModelVars&,
                                            TapeVar, TapeVar, AttentionVariant);
template TapeVar decode_with_context<double>(Tape<double>&, const ModelConfig&, const ModelVars&,
                                             TapeVar, TapeVar, AttentionVariant);
template TapeVar forward_encoder_decoder<float>(Tape<float>&, const ModelConfig&,
                                                const ModelVars&, TapeVar, TapeVar,
                                                AttentionVariant);
template TapeVar forward_encoder_decoder<double>(Tape<double>&, const ModelConfig&,
                                                 const ModelVars&, TapeVar, TapeVar,
                                                 AttentionVariant);
template TapeVar forward_decoder_only<float>(Tape<float>&, const ModelConfig&, const ModelVars&,
                                             TapeVar, TapeVar, AttentionVariant);
template TapeVar forward_decoder_only<double>(Tape<double>&, const ModelConfig&, const ModelVars&,
                                              TapeVar, TapeVar, AttentionVariant);
template TapeVar forward_model<float>(Tape<float>&, const ModelConfig&, const ModelVars&, TapeVar,
                                      TapeVar, AttentionVariant);
template TapeVar forward_model<double>(Tape<double>&, const ModelConfig&, const ModelVars&,
                                       TapeVar, TapeVar, AttentionVariant);
template class ViewSynthesizer<float>;
template class ViewSynthesizer<double>;
template Image synthesize_view<float>(const ModelConfig&, const ModelWeights<float>&,
                                      const std::vector<PosedImage>&, const CameraModel&);
template Image synthesize_view<double>(const ModelConfig&, const ModelWeights<double>&,
                                       const std::vector<PosedImage>&, const CameraModel&);

}  // namespace nvs
