#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace mislead {

// Dense channel-major (CHW) tensor of doubles. Images use c=3 with values in
// [0,1]; residual maps and feature maps use whatever channel count their
// producer declares.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_, double fill = 0.0)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, fill) {}

    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

    double& at(int ch, int y, int x) {
        assert(ch >= 0 && ch < c && y >= 0 && y < h && x >= 0 && x < w);
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }
    double at(int ch, int y, int x) const {
        assert(ch >= 0 && ch < c && y >= 0 && y < h && x >= 0 && x < w);
        return v[(static_cast<std::size_t>(ch) * h + y) * w + x];
    }

    double* plane(int ch) { return v.data() + static_cast<std::size_t>(ch) * h * w; }
    const double* plane(int ch) const {
        return v.data() + static_cast<std::size_t>(ch) * h * w;
    }
};

}  // namespace mislead
