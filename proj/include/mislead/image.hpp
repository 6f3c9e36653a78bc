#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "mislead/common.hpp"
#include "mislead/rng.hpp"
#include "mislead/tensor.hpp"

namespace mislead::img {

struct ImageIOError : DataError {
    using DataError::DataError;
};

// 8-bit RGB PNG in, 3xHxW tensor in [0,1] out. Grayscale and alpha inputs are
// expanded/stripped to RGB.
Tensor load_png(const std::filesystem::path& path);

// Quantizes to 8-bit RGB (round(v*255), clamped) and writes with fixed encoder
// settings; identical pixels produce byte-identical files.
void save_png(const std::filesystem::path& path, const Tensor& image);

// --- shared pixel-space ops (synthgen, augmentation, perturbations) ---

Tensor flip_horizontal(const Tensor& im);

// Rotation about the image center, bilinear sampling, reflect-101 border.
Tensor rotate(const Tensor& im, double degrees);

// Rotation about the center followed by a (dx, dy) pixel shift, one bilinear
// resampling pass, reflect-101 border. All-zero parameters are the identity.
Tensor affine(const Tensor& im, double degrees, double dx, double dy);

// Separable Gaussian blur, radius ceil(3*sigma), reflect-101 border.
// sigma <= 0 returns the input unchanged.
Tensor gaussian_blur(const Tensor& im, double sigma);

// out = 0.5 + contrast*(in - 0.5) + brightness, clamped to [0,1].
Tensor adjust_brightness_contrast(const Tensor& im, double brightness, double contrast);

// Blend toward per-pixel luma: s=1 identity, s=0 grayscale. Clamped.
Tensor adjust_saturation(const Tensor& im, double s);

// Row-major 3x3 luminance-preserving hue rotation matrix.
std::array<double, 9> hue_rotation_matrix(double degrees);

// Hue rotation via the standard RGB rotation matrix, clamped to [0,1].
Tensor rotate_hue(const Tensor& im, double degrees);

// Average-pool k x k blocks and write the mean back over each block.
Tensor pixelate(const Tensor& im, int block);

// Blockwise 8x8 DCT quantise/dequantise per channel with the standard
// luminance table scaled by `quality` in [1,100]. A deterministic stand-in for
// JPEG round-tripping; operates on whole 8x8 tiles, edges are processed with
// clamped tiles.
Tensor jpeg_like_compress(const Tensor& im, int quality);

// Clamp every value into [0,1].
void clamp01(Tensor& im);

}  // namespace mislead::img
