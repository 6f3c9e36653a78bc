#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/tensor.hpp"

namespace mislead::srm {

struct BadChannelCount : ConfigError {
    using ConfigError::ConfigError;
};
struct ImageTooSmall : DataError {
    using DataError::DataError;
};
struct NonFiniteGradient : NumericError {
    using NumericError::NumericError;
};

inline constexpr int kKernelSize = 5;
inline constexpr int kInputChannels = 3;
inline constexpr int kKernelTypes = 3;
inline constexpr double kDefaultLambda = 1e-4;
inline constexpr double kDefaultTruncateLimit = 2.0 / 255.0;

// Residual filter bank that starts from three classic 5x5 noise-residual
// kernels and then drifts via plain gradient steps driven by the misleading
// objective. Kernels are stored [c_out][3][5][5]; output channel o carries
// kernel type o % 3 replicated across the three input channels.
struct KernelBank {
    int c_out = 30;
    std::vector<double> kernels;        // c_out * 3 * 5 * 5
    std::vector<double> init_snapshot;  // frozen copy of the initial kernels
    double lambda = kDefaultLambda;
    bool truncate = true;               // clamp residuals to +-truncate_limit
    double truncate_limit = kDefaultTruncateLimit;

    std::size_t kernel_count() const { return kernels.size(); }
    double* kernel(int o) { return kernels.data() + std::size_t(o) * 3 * 25; }
    const double* kernel(int o) const { return kernels.data() + std::size_t(o) * 3 * 25; }
};

// The three base kernels (already divided by their standard normalizers),
// each 5x5 row-major. Type order: 3x3 square residual (/4), 5x5 full-support
// residual (/12), horizontal 1D second difference (/2).
std::span<const double, 25> base_kernel(int type);

// c_out must be a positive multiple of 3 (else BadChannelCount).
KernelBank init_kernel_bank(int c_out = 30);

// Cross-correlation, stride 1, reflect-101 padding, then optional clamping to
// +-bank.truncate_limit. Input must have 3 channels and be at least 5x5.
Tensor apply_residual_filter(const KernelBank& bank, const Tensor& image);

// Same, never clamped; training keeps the pre-clamp values for the backward
// mask.
Tensor apply_residual_filter_raw(const KernelBank& bank, const Tensor& image);

// kernels <- kernels - lambda * grad. Throws NonFiniteGradient if any grad
// entry is not finite. init_snapshot is untouched.
void update_kernels(KernelBank& bank, std::span<const double> grad, double lambda);

void restore_from_snapshot(KernelBank& bank);

// Raw little-endian doubles (current kernels then snapshot) plus a JSON
// sidecar with shape and hyperparameters.
void export_kernels(const KernelBank& bank, const std::filesystem::path& path);
KernelBank import_kernels(const std::filesystem::path& path);

// Blockwise 8x8 orthonormal DCT per channel with the lowest-frequency
// coefficients (u + v <= 2, including DC) zeroed, then inverse. Idempotent on
// images whose sides are multiples of 8.
Tensor apply_dct_preprocess(const Tensor& image);

enum class Preprocess {
    astray_srm,  // learnable bank
    srm_fixed,   // same bank, never updated during training
    dct,         // blockwise DCT low-frequency removal
    none,        // raw pixels
};

std::string to_string(Preprocess p);
Preprocess parse_preprocess(const std::string& s);

// Channel count a backbone sees after preprocessing 3-channel input.
int preprocess_channels(Preprocess p, const KernelBank& bank);

Tensor apply_preprocess(Preprocess p, const KernelBank& bank, const Tensor& image);

}  // namespace mislead::srm
