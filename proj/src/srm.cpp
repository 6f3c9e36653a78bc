#include "mislead/srm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "mislead/conv.hpp"
#include "mislead/dct8.hpp"

namespace mislead::srm {

namespace {

// 3x3 square residual embedded in 5x5, divisor 4.
constexpr double kSquare[25] = {
    0, 0,  0, 0, 0,  //
    0, -1. / 4, 2. / 4, -1. / 4, 0,  //
    0, 2. / 4,  -4. / 4, 2. / 4, 0,  //
    0, -1. / 4, 2. / 4, -1. / 4, 0,  //
    0, 0,  0, 0, 0};

// Full-support 5x5 residual, divisor 12.
constexpr double kFull[25] = {
    -1. / 12, 2. / 12,  -2. / 12,  2. / 12,  -1. / 12,  //
    2. / 12,  -6. / 12, 8. / 12,   -6. / 12, 2. / 12,   //
    -2. / 12, 8. / 12,  -12. / 12, 8. / 12,  -2. / 12,  //
    2. / 12,  -6. / 12, 8. / 12,   -6. / 12, 2. / 12,   //
    -1. / 12, 2. / 12,  -2. / 12,  2. / 12,  -1. / 12};

// Horizontal 1D second difference, divisor 2.
constexpr double kLine[25] = {
    0, 0, 0,       0, 0,  //
    0, 0, 0,       0, 0,  //
    0, 1. / 2, -2. / 2, 1. / 2, 0,  //
    0, 0, 0,       0, 0,  //
    0, 0, 0,       0, 0};

const double* kBase[kKernelTypes] = {kSquare, kFull, kLine};

void check_input(const Tensor& image) {
    if (image.c != kInputChannels)
        throw BadChannelCount("residual filter expects 3-channel input, got " +
                              std::to_string(image.c));
    if (image.h < kKernelSize || image.w < kKernelSize)
        throw ImageTooSmall("residual filter needs at least 5x5 input, got " +
                            std::to_string(image.h) + "x" + std::to_string(image.w));
}

}  // namespace

std::span<const double, 25> base_kernel(int type) {
    return std::span<const double, 25>(kBase[type], 25);
}

KernelBank init_kernel_bank(int c_out) {
    if (c_out <= 0 || c_out % kKernelTypes != 0)
        throw BadChannelCount("kernel bank size must be a positive multiple of 3, got " +
                              std::to_string(c_out));
    KernelBank bank;
    bank.c_out = c_out;
    bank.kernels.resize(std::size_t(c_out) * kInputChannels * 25);
    for (int o = 0; o < c_out; ++o) {
        const double* base = kBase[o % kKernelTypes];
        for (int i = 0; i < kInputChannels; ++i)
            std::memcpy(bank.kernel(o) + i * 25, base, 25 * sizeof(double));
    }
    bank.init_snapshot = bank.kernels;
    return bank;
}

Tensor apply_residual_filter_raw(const KernelBank& bank, const Tensor& image) {
    check_input(image);
    const auto map = nn::make_patch_map(image.h, image.w, kKernelSize);
    Eigen::MatrixXd cols;
    nn::im2col(image, kKernelSize, map, cols);
    Tensor out(bank.c_out, image.h, image.w);
    nn::conv_forward(cols, bank.kernels.data(), nullptr, bank.c_out, out);
    return out;
}

Tensor apply_residual_filter(const KernelBank& bank, const Tensor& image) {
    Tensor out = apply_residual_filter_raw(bank, image);
    if (bank.truncate) {
        const double t = bank.truncate_limit;
        for (double& v : out.v) v = std::clamp(v, -t, t);
    }
    return out;
}

void update_kernels(KernelBank& bank, std::span<const double> grad, double lambda) {
    if (grad.size() != bank.kernels.size())
        throw DataError("kernel gradient size " + std::to_string(grad.size()) +
                        " does not match bank size " + std::to_string(bank.kernels.size()));
    for (const double g : grad)
        if (!std::isfinite(g))
            throw NonFiniteGradient("non-finite kernel gradient entry");
    for (std::size_t i = 0; i < grad.size(); ++i) bank.kernels[i] -= lambda * grad[i];
}

void restore_from_snapshot(KernelBank& bank) { bank.kernels = bank.init_snapshot; }

void export_kernels(const KernelBank& bank, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    static_assert(std::endian::native == std::endian::little);
    out.write(reinterpret_cast<const char*>(bank.kernels.data()),
              std::streamsize(bank.kernels.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(bank.init_snapshot.data()),
              std::streamsize(bank.init_snapshot.size() * sizeof(double)));
    if (!out) throw DataError("short write to " + path.string());
    out.close();

    nlohmann::json meta = {{"c_out", bank.c_out},
                           {"in_channels", kInputChannels},
                           {"kernel_size", kKernelSize},
                           {"lambda", bank.lambda},
                           {"truncate", bank.truncate},
                           {"truncate_limit", bank.truncate_limit}};
    std::ofstream js(path.string() + ".json");
    if (!js) throw DataError("cannot open " + path.string() + ".json for writing");
    js << meta.dump(2) << "\n";
}

KernelBank import_kernels(const std::filesystem::path& path) {
    std::ifstream js(path.string() + ".json");
    if (!js) throw DataError("missing kernel sidecar " + path.string() + ".json");
    nlohmann::json meta;
    try {
        js >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad kernel sidecar: " + std::string(e.what()));
    }
    KernelBank bank;
    bank.c_out = meta.at("c_out").get<int>();
    if (bank.c_out <= 0 || bank.c_out % kKernelTypes != 0)
        throw BadChannelCount("kernel sidecar declares invalid c_out " +
                              std::to_string(bank.c_out));
    bank.lambda = meta.at("lambda").get<double>();
    bank.truncate = meta.at("truncate").get<bool>();
    bank.truncate_limit = meta.at("truncate_limit").get<double>();

    const std::size_t count = std::size_t(bank.c_out) * kInputChannels * 25;
    bank.kernels.resize(count);
    bank.init_snapshot.resize(count);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    in.read(reinterpret_cast<char*>(bank.kernels.data()),
            std::streamsize(count * sizeof(double)));
    in.read(reinterpret_cast<char*>(bank.init_snapshot.data()),
            std::streamsize(count * sizeof(double)));
    if (!in || in.gcount() != std::streamsize(count * sizeof(double)))
        throw DataError("kernel file " + path.string() + " is truncated");
    return bank;
}

Tensor apply_dct_preprocess(const Tensor& image) {
    if (image.h < 8 || image.w < 8)
        throw ImageTooSmall("DCT preprocess needs at least 8x8 input, got " +
                            std::to_string(image.h) + "x" + std::to_string(image.w));
    Tensor out(image.c, image.h, image.w);
    double tile[8][8], coef[8][8];
    for (int c = 0; c < image.c; ++c)
        for (int by = 0; by < image.h; by += 8)
            for (int bx = 0; bx < image.w; bx += 8) {
                // tail blocks anchor at the far edge so every block is full
                const int y0 = std::min(by, image.h - 8);
                const int x0 = std::min(bx, image.w - 8);
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) tile[i][j] = image.at(c, y0 + i, x0 + j);
                detail::dct8_forward(tile, coef);
                for (int u = 0; u <= 2; ++u)
                    for (int v = 0; u + v <= 2; ++v) coef[u][v] = 0.0;
                detail::dct8_inverse(coef, tile);
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) out.at(c, y0 + i, x0 + j) = tile[i][j];
            }
    return out;
}

std::string to_string(Preprocess p) {
    switch (p) {
        case Preprocess::astray_srm: return "astray_srm";
        case Preprocess::srm_fixed: return "srm_fixed";
        case Preprocess::dct: return "dct";
        case Preprocess::none: return "none";
    }
    throw ConfigError("bad preprocess value");
}

Preprocess parse_preprocess(const std::string& s) {
    if (s == "astray_srm") return Preprocess::astray_srm;
    if (s == "srm_fixed") return Preprocess::srm_fixed;
    if (s == "dct") return Preprocess::dct;
    if (s == "none") return Preprocess::none;
    throw ConfigError("unknown preprocess '" + s +
                      "' (expected astray_srm, srm_fixed, dct, none)");
}

int preprocess_channels(Preprocess p, const KernelBank& bank) {
    switch (p) {
        case Preprocess::astray_srm:
        case Preprocess::srm_fixed: return bank.c_out;
        case Preprocess::dct:
        case Preprocess::none: return 3;
    }
    throw ConfigError("bad preprocess value");
}

Tensor apply_preprocess(Preprocess p, const KernelBank& bank, const Tensor& image) {
    switch (p) {
        case Preprocess::astray_srm:
        case Preprocess::srm_fixed: return apply_residual_filter(bank, image);
        case Preprocess::dct: return apply_dct_preprocess(image);
        case Preprocess::none: return image;
    }
    throw ConfigError("bad preprocess value");
}

}  // namespace mislead::srm
