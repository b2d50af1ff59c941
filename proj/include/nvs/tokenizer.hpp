#pragma once

#include <span>
#include <utility>
#include <vector>

#include "nvs/geometry.hpp"
#include "nvs/image.hpp"
#include "nvs/tape.hpp"

namespace nvs {

// Non-overlapping p x p patches in row-major grid order; within a patch,
// row-major over pixels, channel-contiguous per pixel. Lossless with respect
// to the source array.
template <typename T>
struct PatchGrid {
  int patch_size = 0;
  int channels = 0;
  int grid_h = 0, grid_w = 0;
  std::vector<T> data;  // count x len, one flattened patch per row

  std::size_t count() const { return static_cast<std::size_t>(grid_h) * grid_w; }
  std::size_t len() const {
    return static_cast<std::size_t>(patch_size) * patch_size * channels;
  }
};

template <typename T>
PatchGrid<T> patchify(const Volume<T>& vol, int p);

template <typename T>
Volume<T> unpatchify(const PatchGrid<T>& grid);

// Flat index map realizing unpatchify: out[i] = patches[index[i]].
std::vector<std::size_t> unpatchify_index(int grid_h, int grid_w, int p, int channels);

Volume<double> plucker_volume(const PluckerMap& map);

enum class TokenKind { InputImage, TargetQuery, Latent, Output };

struct TokenMeta {
  TokenKind kind = TokenKind::InputImage;
  int views = 0;
  int patches_per_view = 0;
  int grid_h = 0, grid_w = 0;
  int patch_size = 0;
};

// Ordered token sequence living on a tape; tokens has shape [L, d].
template <typename S>
struct TokenSequence {
  TapeVar tokens;
  TokenMeta meta;

  std::size_t length() const {
    return static_cast<std::size_t>(meta.views ? meta.views : 1) * meta.patches_per_view;
  }
};

// Constant patch matrices fed to the projections: one row per patch.
template <typename S>
Tensor<S> input_patch_matrix(std::span<const std::pair<const Image*, const PluckerMap*>> views,
                             int p);
template <typename S>
Tensor<S> target_patch_matrix(const PluckerMap& rays, int p);

// One view's patch tokens: per patch, [image patch | ray patch] flattened to
// p^2*9 values and mapped through the bias-free input projection [p^2*9, d].
template <typename S>
TokenSequence<S> tokenize_input_view(Tape<S>& tape, const Image& image, const PluckerMap& rays,
                                     TapeVar input_proj, int p);

// All views concatenated view-major into one sequence of length N*H*W/p^2.
template <typename S>
TokenSequence<S> tokenize_input_views(Tape<S>& tape,
                                      std::span<const std::pair<const Image*, const PluckerMap*>> views,
                                      TapeVar input_proj, int p);

// Target-pose ray tokens; projection is [p^2*6, d], length H*W/p^2.
template <typename S>
TokenSequence<S> tokenize_target_view(Tape<S>& tape, const PluckerMap& rays, TapeVar target_proj,
                                      int p);

// sigmoid(output_proj(y_j)) per token, patches placed by the inverse of
// patchify's ordering. Returns an [H, W, 3] tensor with values in (0, 1).
template <typename S>
TapeVar decode_output_head(Tape<S>& tape, const TokenSequence<S>& outputs, TapeVar output_proj);

}  // namespace nvs
