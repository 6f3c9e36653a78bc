#pragma once

#include <unistd.h>

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "mislead/tensor.hpp"

namespace testsup {

// Unique scratch directory, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("mislead-" + tag + "-" + std::to_string(::getpid()) + "-" +
                 std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

// Brute-force pairwise AUC oracle with the tie convention frozen as the exact
// expression (2*wins + ties) / (2*n_pos*n_neg).
inline double oracle_auc(const std::vector<double>& neg, const std::vector<double>& pos) {
    std::uint64_t wins = 0, ties = 0;
    for (const double p : pos)
        for (const double n : neg) {
            if (p > n)
                ++wins;
            else if (p == n)
                ++ties;
        }
    return double(2 * wins + ties) / double(2 * std::uint64_t(pos.size()) * neg.size());
}

inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

// Direct 5x5 cross-correlation of one output channel, reflect-101 border.
// Independent of the production im2col path.
inline mislead::Tensor naive_filter5(const mislead::Tensor& im,
                                     const double* k /* [3][5][5] */) {
    mislead::Tensor out(1, im.h, im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
            double acc = 0.0;
            for (int c = 0; c < 3; ++c)
                for (int ky = 0; ky < 5; ++ky)
                    for (int kx = 0; kx < 5; ++kx) {
                        const int sy = reflect101(y + ky - 2, im.h);
                        const int sx = reflect101(x + kx - 2, im.w);
                        acc += k[c * 25 + ky * 5 + kx] * im.at(c, sy, sx);
                    }
            out.at(0, y, x) = acc;
        }
    return out;
}

// Mean |horizontal second difference| over the central half crop of the green
// channel: a fixed high-pass statistic for fingerprint detection.
inline double highpass_stat(const mislead::Tensor& im) {
    const int y0 = im.h / 4, y1 = 3 * im.h / 4;
    const int x0 = im.w / 4, x1 = 3 * im.w / 4;
    double acc = 0.0;
    int n = 0;
    for (int y = y0; y < y1; ++y)
        for (int x = x0 + 1; x + 1 < x1; ++x) {
            acc += std::abs(im.at(1, y, x - 1) - 2.0 * im.at(1, y, x) + im.at(1, y, x + 1)) /
                   2.0;
            ++n;
        }
    return acc / n;
}

// |DFT| of the green-channel central crop at one 2D frequency bin.
inline double dft_bin_mag(const mislead::Tensor& im, int kx, int ky) {
    const int y0 = im.h / 4, y1 = 3 * im.h / 4;
    const int x0 = im.w / 4, x1 = 3 * im.w / 4;
    const int H = y1 - y0, W = x1 - x0;
    std::complex<double> acc = 0.0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double ph =
                -2.0 * std::numbers::pi * (double(kx * x) / W + double(ky * y) / H);
            acc += im.at(1, y0 + y, x0 + x) * std::complex<double>(std::cos(ph), std::sin(ph));
        }
    return std::abs(acc);
}

}  // namespace testsup
