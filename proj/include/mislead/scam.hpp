#pragma once

#include <span>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/nets.hpp"
#include "mislead/rng.hpp"
#include "mislead/tensor.hpp"

namespace mislead::scam {

// One fusion stage: a shared bottleneck transform T (C -> C/4 -> C, SiLU
// hidden) driving channel attention, plus a 1x1 fuse conv mapping the
// channel-concat of the redundant map and the enhanced map back to C channels.
struct ScamStage {
    int c = 0;
    int hidden = 0;
    std::size_t t1_w = 0, t1_b = 0;      // hidden x C, hidden
    std::size_t t2_w = 0, t2_b = 0;      // C x hidden, C
    std::size_t fuse_w = 0, fuse_b = 0;  // C x 2C (v_red half first), C
    nets::Store* store = nullptr;
};

inline constexpr int kReduction = 4;
// Keeps attention entries strictly inside (0,1) even when the sigmoid
// saturates in double precision.
inline constexpr double kAttentionClamp = 1e-12;
// Fuse init keeps the enhanced path near identity and the redundant path near
// zero so training starts close to the pretrained detector's behavior.
inline constexpr double kFuseInitEps = 0.05;

ScamStage make_scam_stage(nets::Store& store, int channels, const std::string& name,
                          rng::Stream& init);

// Fuse-only stage (no attention parameters): the plain concat + 1x1 conv
// fusion used when channel attention is ablated away.
ScamStage make_fuse_only(nets::Store& store, int channels, const std::string& name,
                         rng::Stream& init);

struct ScamCache {
    std::vector<double> mean_pool, max_pool;
    std::vector<int> max_idx;              // flat spatial argmax per channel
    std::vector<double> h_mean_in, h_mean_out, h_max_in, h_max_out;
    std::vector<double> sc;
    Tensor v_sub, v_red, v_sc;
    int h = 0, w = 0;
};

// sc = sigmoid(T(mean_pool(v_sub)) + T(max_pool(v_sub))), entries in (0,1).
std::vector<double> channel_attention(const ScamStage& stage, const Tensor& v_sub,
                                      ScamCache* cache = nullptr);

// v_sc = v_sub + sc (x) v_sub, channel-wise broadcast over space.
Tensor enhance(const Tensor& v_sub, std::span<const double> sc);

// v_aug = conv1x1(concat_channels(v_red, v_sc)); linear in both inputs.
Tensor fuse_hybrid(const ScamStage& stage, const Tensor& v_red, const Tensor& v_sc);

// Composition: fuse_hybrid(v_red, enhance(v_sub, channel_attention(v_sub))).
Tensor scam_forward(const ScamStage& stage, const Tensor& v_red, const Tensor& v_sub,
                    ScamCache* cache = nullptr);

// Accumulates parameter grads into gbuf (may be null) and returns the gradient
// w.r.t. v_sub. The v_red input feeds a frozen extractor, so its gradient is
// not propagated.
Tensor scam_backward(const ScamStage& stage, const Tensor& dout,
                     const ScamCache& cache, double* gbuf);

// Backward of fuse_hybrid alone; returns the gradient w.r.t. v_sc.
Tensor fuse_backward(const ScamStage& stage, const Tensor& dout, const Tensor& v_red,
                     const Tensor& v_sc, double* gbuf);

}  // namespace mislead::scam
