#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mislead/tensor.hpp"

namespace mislead::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// All convolutions here are cross-correlations with stride 1 and reflect-101
// padding, so output spatial size equals input size.

// Patch index map for one channel of an h x w input: entry [r*h*w + j] is the
// flat input index feeding patch row r (r < K*K) at output position j.
// Shared across channels; the caller adds per-channel offsets.
std::vector<std::int32_t> make_patch_map(int h, int w, int K);

// cols: (c_in*K*K) x (h*w); column j holds the input patch at output j.
void im2col(const Tensor& in, int K, const std::vector<std::int32_t>& map,
            Eigen::MatrixXd& cols);

// Transpose of im2col: scatter-adds column gradients back onto din (accumulates,
// caller zeroes). Reflected border positions receive multiple contributions.
void col2im(const Eigen::MatrixXd& dcols, int K, const std::vector<std::int32_t>& map,
            Tensor& din);

// out (c_out x h x w) = weights (c_out x c_in*K*K row-major) * cols [+ bias].
// bias may be null.
void conv_forward(const Eigen::MatrixXd& cols, const double* weights, const double* bias,
                  int c_out, Tensor& out);

}  // namespace mislead::nn
