#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "nvs/geometry.hpp"
#include "nvs/image.hpp"
#include "nvs/tape.hpp"
#include "nvs/tokenizer.hpp"

namespace nvs {

enum class Architecture { EncoderDecoder, DecoderOnly };

// Decoder attention variants. The four kinds decompose into two switches:
// latents_updated (context rows attend among context vs. identity) and
// targets_joint (target rows attend to everything vs. context only).
enum class AttentionVariant { Full, FrozenLatents, PerPatch, PureCross };

std::string to_string(Architecture a);
std::string to_string(AttentionVariant v);
Architecture parse_architecture(const std::string& s);
AttentionVariant parse_variant(const std::string& s);

struct ModelConfig {
  Architecture architecture = Architecture::DecoderOnly;
  int encoder_layers = 0;
  int decoder_layers = 12;
  int dim = 256;
  int heads = 8;
  int mlp_ratio = 4;
  int patch_size = 8;
  int latent_count = 0;  // encoder-decoder only
  AttentionVariant variant = AttentionVariant::Full;

  int head_dim() const { return dim / heads; }
  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

template <typename S>
struct LayerWeights {
  Tensor<S> ln1_gain, wq, wk, wv, wo, qk_gain, ln2_gain, w_up, w_down;
};

// All learned parameters. No bias tensors exist anywhere.
template <typename S>
struct ModelWeights {
  ModelConfig config;
  Tensor<S> input_proj;   // [p^2*9, d]
  Tensor<S> target_proj;  // [p^2*6, d]
  Tensor<S> output_proj;  // [d, 3*p^2]
  Tensor<S> latents;      // [l, d], encoder-decoder only
  std::vector<LayerWeights<S>> encoder, decoder;

  struct ParamRef {
    std::string name;
    Tensor<S>* tensor;
    bool decay_exempt;  // layer-norm gains
  };
  std::vector<ParamRef> params();
  std::vector<Tensor<S>*> param_tensors();
  void zero_grads();

  template <typename T>
  ModelWeights<T> cast() const;
};

// Transformer-layer weights drawn from Normal(0, sigma^2) with
// sigma = 0.02 / sqrt(2 * (idx + 1)), idx counted across encoder then
// decoder layers; projection maps and latent tokens use sigma = 0.02;
// layer-norm gains start at 1 and QK gains at sqrt(head_dim). Bit-identical
// for equal seeds.
template <typename S>
ModelWeights<S> init_weights(const ModelConfig& config, std::uint64_t seed);

// Initialization stddev for the weight matrices of transformer layer idx.
double layer_init_sigma(int idx);

struct AttentionMask {
  BoolMatrix allowed;
  bool latents_updated = true;
  bool targets_joint = true;
};

// Realizes the decoder mask over [context | target] rows and columns, where
// context means latent tokens (encoder-decoder) or input tokens
// (decoder-only).
AttentionMask build_variant_mask(AttentionVariant kind, std::size_t context_count,
                                 std::size_t target_count);
BoolMatrix build_mask_from_flags(bool latents_updated, bool targets_joint,
                                 std::size_t context_count, std::size_t target_count);

// Per-tape handles to one layer's parameters.
struct LayerVars {
  TapeVar ln1, wq, wk, wv, wo, qk_gain, ln2, w_up, w_down;
};

struct ModelVars {
  TapeVar input_proj, target_proj, output_proj, latents;
  std::vector<LayerVars> encoder, decoder;
};

// Binds every weight tensor onto the tape; trainable binds gradient sinks,
// otherwise read-only views.
template <typename S>
ModelVars bind_model(Tape<S>& tape, ModelWeights<S>& weights, bool trainable);
template <typename S>
ModelVars bind_model(Tape<S>& tape, const ModelWeights<S>& weights);  // read-only

// Pre-norm residual block: x + Attn(LN(x)), then + MLP(LN(.)); attention is
// QK-Norm attention under the given mask (null = full), MLP is
// linear(d -> mlp*d), GELU, linear(-> d).
template <typename S>
TapeVar transformer_layer(Tape<S>& tape, TapeVar x, const LayerVars& lv, const BoolMatrix* mask,
                          int heads);

// Input-side context shared by all target views of one scene: the latent
// scene code z for the encoder-decoder architecture (runs the encoder), the
// input tokens unchanged for decoder-only.
template <typename S>
TapeVar encode_context(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                       TapeVar input_tokens);

// Target-side pass over [context | target tokens] under the variant mask;
// returns outputs at the target positions.
template <typename S>
TapeVar decode_with_context(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                            TapeVar context, TapeVar target_tokens, AttentionVariant variant);

// Encoder: full self-attention over [input tokens | latent seeds], keep the
// last l outputs as the latent scene representation z. Decoder: variant-
// masked self-attention over [z | target tokens]; returns outputs at the
// target positions.
template <typename S>
TapeVar forward_encoder_decoder(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                                TapeVar input_tokens, TapeVar target_tokens,
                                AttentionVariant variant);

// Single stream over [input tokens | target tokens]; outputs at target
// positions. Supports Full and PerPatch variants.
template <typename S>
TapeVar forward_decoder_only(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                             TapeVar input_tokens, TapeVar target_tokens,
                             AttentionVariant variant);

// Dispatches on config.architecture.
template <typename S>
TapeVar forward_model(Tape<S>& tape, const ModelConfig& config, const ModelVars& vars,
                      TapeVar input_tokens, TapeVar target_tokens, AttentionVariant variant);

struct PosedImage {
  Image image;
  CameraModel camera;
};

// Inference-side renderer. Normalizes the input cameras once (reference
// chosen order-independently, targets mapped by the same transform); for the
// encoder-decoder architecture the latent tokens are computed once in the
// constructor and every render() runs only the decoder.
template <typename S>
class ViewSynthesizer {
 public:
  ViewSynthesizer(const ModelConfig& config, const ModelWeights<S>& weights,
                  const std::vector<PosedImage>& inputs);

  Image render(const CameraModel& target) const;

 private:
  const ModelConfig& config_;
  const ModelWeights<S>& weights_;
  SimilarityTransform transform_;
  Tensor<S> latent_state_;            // encoder-decoder: encoded z values
  Tensor<S> input_patch_rows_;        // decoder-only: cached patch matrix
  std::size_t input_token_count_ = 0;
};

// One-shot convenience wrapper around ViewSynthesizer.
template <typename S>
Image synthesize_view(const ModelConfig& config, const ModelWeights<S>& weights,
                      const std::vector<PosedImage>& inputs, const CameraModel& target);

extern template struct ModelWeights<float>;
extern template struct ModelWeights<double>;
extern template class ViewSynthesizer<float>;
extern template class ViewSynthesizer<double>;

}  // namespace nvs
