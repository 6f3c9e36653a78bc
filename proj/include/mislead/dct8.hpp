#pragma once

#include <array>
#include <cmath>
#include <numbers>

namespace mislead::detail {

// Orthonormal 8x8 DCT-II basis, M[k][n]. Forward: C = M T M^T, inverse:
// T = M^T C M; orthonormality makes inverse(forward(x)) exact up to rounding.
inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> m{};
        for (int k = 0; k < 8; ++k)
            for (int n = 0; n < 8; ++n) {
                const double scale = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
                m[k][n] = scale * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
            }
        return m;
    }();
    return basis;
}

inline void dct8_forward(const double tile[8][8], double coef[8][8]) {
    const auto& M = dct8_basis();
    double tmp[8][8];
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n) acc += M[i][n] * tile[n][j];
            tmp[i][j] = acc;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n) acc += tmp[i][n] * M[j][n];
            coef[i][j] = acc;
        }
}

inline void dct8_inverse(const double coef[8][8], double tile[8][8]) {
    const auto& M = dct8_basis();
    double tmp[8][8];
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n) acc += M[n][i] * coef[n][j];
            tmp[i][j] = acc;
        }
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            double acc = 0.0;
            for (int n = 0; n < 8; ++n) acc += tmp[i][n] * M[n][j];
            tile[i][j] = acc;
        }
}

}  // namespace mislead::detail
