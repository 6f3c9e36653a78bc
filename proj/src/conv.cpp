#include "mislead/conv.hpp"

#include <cassert>

namespace mislead::nn {

namespace {
// reflect-101 index: period 2(n-1), never repeats the border sample
inline int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}
}  // namespace

std::vector<std::int32_t> make_patch_map(int h, int w, int K) {
    const int pad = K / 2, hw = h * w;
    std::vector<std::int32_t> map(std::size_t(K) * K * hw);
    std::size_t r = 0;
    for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx, ++r) {
            std::int32_t* row = map.data() + r * hw;
            for (int y = 0; y < h; ++y) {
                const int sy = reflect(y + ky - pad, h);
                for (int x = 0; x < w; ++x)
                    row[y * w + x] = std::int32_t(sy * w + reflect(x + kx - pad, w));
            }
        }
    return map;
}

void im2col(const Tensor& in, int K, const std::vector<std::int32_t>& map,
            Eigen::MatrixXd& cols) {
    const int hw = in.h * in.w, kk = K * K;
    assert(map.size() == std::size_t(kk) * hw);
    cols.resize(std::size_t(in.c) * kk, hw);
    // row-major fill: each (channel, patch-row) pair is one gather pass
    for (int c = 0; c < in.c; ++c) {
        const double* src = in.v.data() + std::size_t(c) * hw;
        for (int r = 0; r < kk; ++r) {
            const std::int32_t* idx = map.data() + std::size_t(r) * hw;
            const Eigen::Index row = Eigen::Index(c) * kk + r;
            for (int j = 0; j < hw; ++j) cols(row, j) = src[idx[j]];
        }
    }
}

void col2im(const Eigen::MatrixXd& dcols, int K, const std::vector<std::int32_t>& map,
            Tensor& din) {
    const int hw = din.h * din.w, kk = K * K;
    assert(dcols.rows() == Eigen::Index(din.c) * kk && dcols.cols() == hw);
    for (int c = 0; c < din.c; ++c) {
        double* dst = din.v.data() + std::size_t(c) * hw;
        for (int r = 0; r < kk; ++r) {
            const std::int32_t* idx = map.data() + std::size_t(r) * hw;
            const Eigen::Index row = Eigen::Index(c) * kk + r;
            for (int j = 0; j < hw; ++j) dst[idx[j]] += dcols(row, j);
        }
    }
}

void conv_forward(const Eigen::MatrixXd& cols, const double* weights, const double* bias,
                  int c_out, Tensor& out) {
    const Eigen::Index ckk = cols.rows(), hw = cols.cols();
    Eigen::Map<const MatRM> wm(weights, c_out, ckk);
    Eigen::Map<MatRM> om(out.v.data(), c_out, hw);
    om.noalias() = wm * cols;
    if (bias)
        for (int c = 0; c < c_out; ++c) om.row(c).array() += bias[c];
}

}  // namespace mislead::nn
