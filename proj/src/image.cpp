#include "mislead/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

#include "mislead/dct8.hpp"

namespace mislead::img {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// reflect-101 index: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int reflect(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

}  // namespace

Tensor load_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw ImageIOError("cannot open image: " + path.string());

    png_structp png =
        png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageIOError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw ImageIOError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ImageIOError("failed to decode PNG: " + path.string());
    }

    png_init_io(png, fp.get());
    png_read_info(png, info);

    const png_uint_32 width = png_get_image_width(png, info);
    const png_uint_32 height = png_get_image_height(png, info);
    const png_byte color_type = png_get_color_type(png, info);
    const png_byte bit_depth = png_get_bit_depth(png, info);

    if (bit_depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Tensor out(3, static_cast<int>(height), static_cast<int>(width));
    for (png_uint_32 y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < width; ++x) {
            for (int ch = 0; ch < 3; ++ch)
                out.at(ch, static_cast<int>(y), static_cast<int>(x)) =
                    row[3 * x + ch] / 255.0;
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void save_png(const std::filesystem::path& path, const Tensor& image) {
    if (image.c != 3) throw ImageIOError("save_png expects a 3-channel image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw ImageIOError("cannot write image: " + path.string());

    png_structp png =
        png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw ImageIOError("libpng init failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw ImageIOError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw ImageIOError("failed to encode PNG: " + path.string());
    }

    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, image.w, image.h, 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_byte> row(static_cast<std::size_t>(image.w) * 3);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                const double v = std::clamp(image.at(ch, y, x), 0.0, 1.0);
                row[3 * x + ch] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Tensor flip_horizontal(const Tensor& im) {
    Tensor out(im.c, im.h, im.w);
    for (int c = 0; c < im.c; ++c)
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) out.at(c, y, x) = im.at(c, y, im.w - 1 - x);
    return out;
}

Tensor rotate(const Tensor& im, double degrees) { return affine(im, degrees, 0.0, 0.0); }

Tensor affine(const Tensor& im, double degrees, double tx, double ty) {
    if (degrees == 0.0 && tx == 0.0 && ty == 0.0) return im;
    const double a = degrees * kPi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double cy = (im.h - 1) / 2.0, cx = (im.w - 1) / 2.0;
    Tensor out(im.c, im.h, im.w);
    for (int y = 0; y < im.h; ++y) {
        for (int x = 0; x < im.w; ++x) {
            // inverse map: undo the shift, then rotate destination coords
            // back into the source
            const double dx = x - tx - cx, dy = y - ty - cy;
            const double sx = ca * dx + sa * dy + cx;
            const double sy = -sa * dx + ca * dy + cy;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0, fy = sy - y0;
            const int x0r = reflect(x0, im.w), x1r = reflect(x0 + 1, im.w);
            const int y0r = reflect(y0, im.h), y1r = reflect(y0 + 1, im.h);
            for (int c = 0; c < im.c; ++c) {
                const double v00 = im.at(c, y0r, x0r), v01 = im.at(c, y0r, x1r);
                const double v10 = im.at(c, y1r, x0r), v11 = im.at(c, y1r, x1r);
                out.at(c, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                  fy * ((1 - fx) * v10 + fx * v11);
            }
        }
    }
    return out;
}

Tensor gaussian_blur(const Tensor& im, double sigma) {
    if (sigma <= 0.0) return im;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;

    Tensor tmp(im.c, im.h, im.w), out(im.c, im.h, im.w);
    for (int c = 0; c < im.c; ++c) {
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * im.at(c, y, reflect(x + i, im.w));
                tmp.at(c, y, x) = acc;
            }
        for (int y = 0; y < im.h; ++y)
            for (int x = 0; x < im.w; ++x) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += k[i + radius] * tmp.at(c, reflect(y + i, im.h), x);
                out.at(c, y, x) = acc;
            }
    }
    return out;
}

Tensor adjust_brightness_contrast(const Tensor& im, double brightness, double contrast) {
    Tensor out(im.c, im.h, im.w);
    for (std::size_t i = 0; i < im.v.size(); ++i)
        out.v[i] = std::clamp(0.5 + contrast * (im.v[i] - 0.5) + brightness, 0.0, 1.0);
    return out;
}

Tensor adjust_saturation(const Tensor& im, double s) {
    Tensor out(3, im.h, im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
            const double r = im.at(0, y, x), g = im.at(1, y, x), b = im.at(2, y, x);
            const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
            out.at(0, y, x) = std::clamp(luma + s * (r - luma), 0.0, 1.0);
            out.at(1, y, x) = std::clamp(luma + s * (g - luma), 0.0, 1.0);
            out.at(2, y, x) = std::clamp(luma + s * (b - luma), 0.0, 1.0);
        }
    return out;
}

std::array<double, 9> hue_rotation_matrix(double degrees) {
    // standard luminance-preserving hue-rotate matrix
    const double a = degrees * kPi / 180.0;
    const double c = std::cos(a), s = std::sin(a);
    return {0.213 + c * 0.787 - s * 0.213, 0.715 - c * 0.715 - s * 0.715,
            0.072 - c * 0.072 + s * 0.928, 0.213 - c * 0.213 + s * 0.143,
            0.715 + c * 0.285 + s * 0.140, 0.072 - c * 0.072 - s * 0.283,
            0.213 - c * 0.213 - s * 0.787, 0.715 - c * 0.715 + s * 0.715,
            0.072 + c * 0.928 + s * 0.072};
}

Tensor rotate_hue(const Tensor& im, double degrees) {
    const auto m = hue_rotation_matrix(degrees);
    Tensor out(3, im.h, im.w);
    for (int y = 0; y < im.h; ++y)
        for (int x = 0; x < im.w; ++x) {
            const double rgb[3] = {im.at(0, y, x), im.at(1, y, x), im.at(2, y, x)};
            for (int ch = 0; ch < 3; ++ch) {
                const double v = m[ch * 3 + 0] * rgb[0] + m[ch * 3 + 1] * rgb[1] +
                                 m[ch * 3 + 2] * rgb[2];
                out.at(ch, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    return out;
}

Tensor pixelate(const Tensor& im, int block) {
    if (block <= 1) return im;
    Tensor out(im.c, im.h, im.w);
    for (int c = 0; c < im.c; ++c)
        for (int by = 0; by < im.h; by += block)
            for (int bx = 0; bx < im.w; bx += block) {
                const int y1 = std::min(by + block, im.h);
                const int x1 = std::min(bx + block, im.w);
                double acc = 0.0;
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) acc += im.at(c, y, x);
                const double mean = acc / ((y1 - by) * (x1 - bx));
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) out.at(c, y, x) = mean;
            }
    return out;
}

namespace {

// JPEG Annex K luminance quantisation table.
constexpr int kQuantBase[8][8] = {
    {16, 11, 10, 16, 24, 40, 51, 61},     {12, 12, 14, 19, 26, 58, 60, 55},
    {14, 13, 16, 24, 40, 57, 69, 56},     {14, 17, 22, 29, 51, 87, 80, 62},
    {18, 22, 37, 56, 68, 109, 103, 77},   {24, 35, 55, 64, 81, 104, 113, 92},
    {49, 64, 78, 87, 103, 121, 120, 101}, {72, 92, 95, 98, 112, 100, 103, 99}};

}  // namespace

Tensor jpeg_like_compress(const Tensor& im, int quality) {
    quality = std::clamp(quality, 1, 100);
    const double scale = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
    double q[8][8];
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
            q[i][j] = std::max(1.0, std::floor((kQuantBase[i][j] * scale + 50.0) / 100.0));

    Tensor out(im.c, im.h, im.w);
    double tile[8][8], coef[8][8];
    for (int c = 0; c < im.c; ++c)
        for (int by = 0; by < im.h; by += 8)
            for (int bx = 0; bx < im.w; bx += 8) {
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        tile[i][j] = 255.0 * im.at(c, std::min(by + i, im.h - 1),
                                                   std::min(bx + j, im.w - 1)) -
                                     128.0;
                detail::dct8_forward(tile, coef);
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j)
                        coef[i][j] = std::round(coef[i][j] / q[i][j]) * q[i][j];
                detail::dct8_inverse(coef, tile);
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        const int y = by + i, x = bx + j;
                        if (y < im.h && x < im.w)
                            out.at(c, y, x) =
                                std::clamp((tile[i][j] + 128.0) / 255.0, 0.0, 1.0);
                    }
            }
    return out;
}

void clamp01(Tensor& im) {
    for (double& v : im.v) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace mislead::img
