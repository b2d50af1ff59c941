#include "nvs/tokenizer.hpp"

#include <string>

namespace nvs {

template <typename T>
PatchGrid<T> patchify(const Volume<T>& vol, int p) {
  if (p < 1 || vol.height % p != 0 || vol.width % p != 0)
    throw ShapeError("patchify: " + std::to_string(vol.height) + "x" +
                     std::to_string(vol.width) + " not divisible by patch size " +
                     std::to_string(p));
  PatchGrid<T> grid;
  grid.patch_size = p;
  grid.channels = vol.channels;
  grid.grid_h = vol.height / p;
  grid.grid_w = vol.width / p;
  grid.data.resize(grid.count() * grid.len());
  std::size_t idx = 0;
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < vol.channels; ++c)
            grid.data[idx++] = vol.at(gy * p + py, gx * p + px, c);
  return grid;
}

template <typename T>
Volume<T> unpatchify(const PatchGrid<T>& grid) {
  int p = grid.patch_size;
  Volume<T> vol(grid.grid_h * p, grid.grid_w * p, grid.channels);
  std::size_t idx = 0;
  for (int gy = 0; gy < grid.grid_h; ++gy)
    for (int gx = 0; gx < grid.grid_w; ++gx)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int c = 0; c < grid.channels; ++c)
            vol.at(gy * p + py, gx * p + px, c) = grid.data[idx++];
  return vol;
}

template PatchGrid<float> patchify(const Volume<float>&, int);
template PatchGrid<double> patchify(const Volume<double>&, int);
template Volume<float> unpatchify(const PatchGrid<float>&);
template Volume<double> unpatchify(const PatchGrid<double>&);

std::vector<std::size_t> unpatchify_index(int grid_h, int grid_w, int p, int channels) {
  int height = grid_h * p, width = grid_w * p;
  std::vector<std::size_t> index(static_cast<std::size_t>(height) * width * channels);
  std::size_t len = static_cast<std::size_t>(p) * p * channels;
  for (int v = 0; v < height; ++v)
    for (int u = 0; u < width; ++u)
      for (int c = 0; c < channels; ++c) {
        std::size_t patch = static_cast<std::size_t>(v / p) * grid_w + (u / p);
        std::size_t within = (static_cast<std::size_t>(v % p) * p + (u % p)) * channels + c;
        index[(static_cast<std::size_t>(v) * width + u) * channels + c] = patch * len + within;
      }
  return index;
}

Volume<double> plucker_volume(const PluckerMap& map) {
  Volume<double> vol(map.height, map.width, 6);
  vol.data = map.values;
  return vol;
}

namespace {

// Builds the constant patch matrix for one input view: row j is
// [image patch | ray patch], length p^2*9.
template <typename S>
void append_input_patch_rows(const Image& image, const PluckerMap& rays, int p,
                             std::vector<S>& out) {
  if (image.height != rays.height || image.width != rays.width)
    throw ShapeError("tokenize: image and ray map sizes differ");
  if (image.channels != 3) throw ShapeError("tokenize: input image must have 3 channels");
  PatchGrid<float> img_patches = patchify(image, p);
  PatchGrid<double> ray_patches = patchify(plucker_volume(rays), p);
  std::size_t count = img_patches.count();
  std::size_t img_len = img_patches.len(), ray_len = ray_patches.len();
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t i = 0; i < img_len; ++i)
      out.push_back(static_cast<S>(img_patches.data[j * img_len + i]));
    for (std::size_t i = 0; i < ray_len; ++i)
      out.push_back(static_cast<S>(ray_patches.data[j * ray_len + i]));
  }
}

}  // namespace

template <typename S>
Tensor<S> input_patch_matrix(std::span<const std::pair<const Image*, const PluckerMap*>> views,
                             int p) {
  if (views.empty()) throw ShapeError("tokenize: need at least one input view");
  std::size_t in_dim = static_cast<std::size_t>(p) * p * 9;
  std::vector<S> rows;
  for (const auto& [image, rays] : views) append_input_patch_rows<S>(*image, *rays, p, rows);
  std::size_t total = rows.size() / in_dim;
  return Tensor<S>({total, in_dim}, std::move(rows));
}

template <typename S>
Tensor<S> target_patch_matrix(const PluckerMap& rays, int p) {
  PatchGrid<double> ray_patches = patchify(plucker_volume(rays), p);
  std::vector<S> rows(ray_patches.data.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = static_cast<S>(ray_patches.data[i]);
  return Tensor<S>({ray_patches.count(), ray_patches.len()}, std::move(rows));
}

template <typename S>
TokenSequence<S> tokenize_input_views(
    Tape<S>& tape, std::span<const std::pair<const Image*, const PluckerMap*>> views,
    TapeVar input_proj, int p) {
  const Tensor<S>& w = tape.value(input_proj);
  std::size_t in_dim = static_cast<std::size_t>(p) * p * 9;
  if (w.shape.size() != 2 || w.shape[0] != in_dim)
    throw ShapeError("tokenize: input projection must be [" + std::to_string(in_dim) + ", d]");
  Tensor<S> rows = input_patch_matrix<S>(views, p);
  std::size_t total = rows.rows();
  TapeVar patches = tape.constant(std::move(rows));
  TokenSequence<S> seq;
  seq.tokens = tape.matmul(patches, input_proj);
  seq.meta.kind = TokenKind::InputImage;
  seq.meta.views = static_cast<int>(views.size());
  seq.meta.patches_per_view = static_cast<int>(total / views.size());
  seq.meta.grid_h = views[0].first->height / p;
  seq.meta.grid_w = views[0].first->width / p;
  seq.meta.patch_size = p;
  return seq;
}

template <typename S>
TokenSequence<S> tokenize_input_view(Tape<S>& tape, const Image& image, const PluckerMap& rays,
                                     TapeVar input_proj, int p) {
  std::pair<const Image*, const PluckerMap*> one{&image, &rays};
  return tokenize_input_views<S>(tape, std::span(&one, 1), input_proj, p);
}

template <typename S>
TokenSequence<S> tokenize_target_view(Tape<S>& tape, const PluckerMap& rays, TapeVar target_proj,
                                      int p) {
  const Tensor<S>& w = tape.value(target_proj);
  std::size_t in_dim = static_cast<std::size_t>(p) * p * 6;
  if (w.shape.size() != 2 || w.shape[0] != in_dim)
    throw ShapeError("tokenize: target projection must be [" + std::to_string(in_dim) + ", d]");
  if (rays.height % p != 0 || rays.width % p != 0)
    throw ShapeError("tokenize: ray map size not divisible by patch size");
  TapeVar patches = tape.constant(target_patch_matrix<S>(rays, p));
  TokenSequence<S> seq;
  seq.tokens = tape.matmul(patches, target_proj);
  seq.meta.kind = TokenKind::TargetQuery;
  seq.meta.views = 1;
  seq.meta.patches_per_view = static_cast<int>(tape.value(patches).rows());
  seq.meta.grid_h = rays.height / p;
  seq.meta.grid_w = rays.width / p;
  seq.meta.patch_size = p;
  return seq;
}

template <typename S>
TapeVar decode_output_head(Tape<S>& tape, const TokenSequence<S>& outputs, TapeVar output_proj) {
  const Tensor<S>& y = tape.value(outputs.tokens);
  const Tensor<S>& w = tape.value(output_proj);
  int p = outputs.meta.patch_size;
  std::size_t out_dim = static_cast<std::size_t>(p) * p * 3;
  std::size_t expect = static_cast<std::size_t>(outputs.meta.grid_h) * outputs.meta.grid_w;
  if (y.shape.size() != 2 || y.rows() != expect)
    throw ShapeError("decode: expected " + std::to_string(expect) + " output tokens, got " +
                     shape_str(y.shape));
  if (w.shape.size() != 2 || w.shape[0] != y.cols() || w.shape[1] != out_dim)
    throw ShapeError("decode: output projection must be [d, " + std::to_string(out_dim) + "]");
  TapeVar rgb = tape.sigmoid(tape.matmul(outputs.tokens, output_proj));
  std::vector<std::size_t> index =
      unpatchify_index(outputs.meta.grid_h, outputs.meta.grid_w, p, 3);
  Shape img_shape = {static_cast<std::size_t>(outputs.meta.grid_h * p),
                     static_cast<std::size_t>(outputs.meta.grid_w * p), 3};
  return tape.gather(rgb, std::move(index), img_shape);
}

template Tensor<float> input_patch_matrix(
    std::span<const std::pair<const Image*, const PluckerMap*>>, int);
template Tensor<double> input_patch_matrix(
    std::span<const std::pair<const Image*, const PluckerMap*>>, int);
template Tensor<float> target_patch_matrix(const PluckerMap&, int);
template Tensor<double> target_patch_matrix(const PluckerMap&, int);
template TokenSequence<float> tokenize_input_views(
    Tape<float>&, std::span<const std::pair<const Image*, const PluckerMap*>>, TapeVar, int);
template TokenSequence<double> tokenize_input_views(
    Tape<double>&, std::span<const std::pair<const Image*, const PluckerMap*>>, TapeVar, int);
template TokenSequence<float> tokenize_input_view(Tape<float>&, const Image&, const PluckerMap&,
                                                  TapeVar, int);
template TokenSequence<double> tokenize_input_view(Tape<double>&, const Image&, const PluckerMap&,
                                                   TapeVar, int);
template TokenSequence<float> tokenize_target_view(Tape<float>&, const PluckerMap&, TapeVar, int);
template TokenSequence<double> tokenize_target_view(Tape<double>&, const PluckerMap&, TapeVar,
                                                    int);
template TapeVar decode_output_head(Tape<float>&, const TokenSequence<float>&, TapeVar);
template TapeVar decode_output_head(Tape<double>&, const TokenSequence<double>&, TapeVar);

}  // namespace nvs
