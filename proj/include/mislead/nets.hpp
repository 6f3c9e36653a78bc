#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/rng.hpp"
#include "mislead/tensor.hpp"

namespace mislead::nets {

struct StageIndexOutOfRange : ConfigError {
    using ConfigError::ConfigError;
};

// Flat named parameter storage. Every layer owns an offset range inside one
// Store, so serialization, digests and optimizer state all operate on a single
// contiguous array. Gradient buffers mirror the layout 1:1.
class Store {
  public:
    struct Seg {
        std::string name;
        std::vector<int> shape;
        std::size_t offset = 0;
        std::size_t count = 0;
    };

    std::size_t add(std::string name, std::vector<int> shape);
    double* at(std::size_t offset) { return data.data() + offset; }
    const double* at(std::size_t offset) const { return data.data() + offset; }
    std::size_t size() const { return data.size(); }
    const Seg* find(const std::string& name) const;

    std::vector<double> data;
    std::vector<Seg> segs;
};

// SHA-256 over the little-endian byte image of [begin, end).
std::string digest_range(const Store& store, std::size_t begin, std::size_t end);

struct BackboneConfig {
    int stages = 4;
    std::vector<int> widths = {16, 32, 64, 128};
    int input_channels = 3;
    int feature_dim = 128;
    std::uint64_t seed = 0;
};

// Per-stage maps after downsampling plus the projected final feature vector.
struct FeatureStack {
    std::vector<Tensor> stage_maps;
    std::vector<double> final;
};

// Everything the backward pass needs from one stage's forward pass.
struct StageCache {
    Eigen::MatrixXd cols;          // im2col of the stage input
    int in_h = 0, in_w = 0, in_c = 0;
    std::vector<double> mean, invstd;  // instance-norm statistics per channel
    Tensor norm_xhat;              // normalized pre-affine values
    Tensor act_in;                 // instance-norm output = activation input
    Tensor act_out;                // post-activation, pooling input
};

struct BackboneCache {
    std::vector<StageCache> stages;
    std::vector<double> gap;       // global average pool of the last map
    int last_h = 0, last_w = 0;
};

// conv3x3 (stride 1, reflect) -> instance norm -> SiLU -> 2x2 avg pool per
// stage, then global average pool and a linear projection to feature_dim.
class Backbone {
  public:
    Backbone(const BackboneConfig& cfg, Store& store, std::string prefix, bool frozen);

    FeatureStack forward(const Tensor& input, BackboneCache* cache = nullptr) const;

    // Stage-wise path used when fusion callbacks rewrite stage maps.
    Tensor stage_forward(int s, const Tensor& in, StageCache* cache) const;
    // Accumulates parameter grads into gbuf (trainable-store layout; may be
    // null for frozen nets) and returns the gradient w.r.t. the stage input.
    Tensor stage_backward(int s, const Tensor& dout, const StageCache& cache,
                          double* gbuf) const;

    std::vector<double> project_final(const Tensor& last_map, BackboneCache* cache) const;
    Tensor project_backward(std::span<const double> dfinal, const BackboneCache& cache,
                            double* gbuf) const;

    const BackboneConfig& config() const { return cfg_; }
    bool frozen() const { return frozen_; }
    // Re-point at a store that has moved; offsets stay valid.
    void rebind(Store& store) { store_ = &store; }
    std::size_t param_begin() const { return begin_; }
    std::size_t param_end() const { return end_; }
    std::size_t param_count() const { return end_ - begin_; }
    std::string digest() const;

  private:
    struct StageParams {
        std::size_t w, b, gamma, beta;
        int in_c, out_c;
    };
    BackboneConfig cfg_;
    Store* store_;
    bool frozen_;
    std::size_t begin_, end_;
    std::vector<StageParams> stages_;
    std::size_t proj_w_, proj_b_;
    // patch maps keyed by input spatial size, built lazily
    mutable std::map<std::pair<int, int>, std::vector<std::int32_t>> patch_maps_;
    const std::vector<std::int32_t>& patch_map(int h, int w) const;
};

struct Head {
    int in_dim = 0;
    std::size_t w = 0, b = 0;
    Store* store = nullptr;
};

Head make_head(Store& store, int in_dim, std::string name, rng::Stream& init);

// sigmoid(w . feature + b)
double classify(const Head& head, std::span<const double> feature);
double head_logit(const Head& head, std::span<const double> feature);
// Accumulates dW/db into gbuf and returns d(feature).
std::vector<double> head_backward(const Head& head, std::span<const double> feature,
                                  double dlogit, double* gbuf);

using StageFusion = std::function<Tensor(const Tensor& stage_map)>;

// Forward through the frozen redundant extractor; requires the frozen flag.
FeatureStack extract_red_features(const Backbone& e_red, const Tensor& image);

// Plain forward when `injected` is empty; otherwise each listed stage's output
// map is replaced by its callback's result before flowing onward.
FeatureStack forward_dsub(const Backbone& d_sub, const Tensor& residual_input,
                          const std::map<int, StageFusion>& injected = {});

FeatureStack forward_daux(const Backbone& d_aux, const Tensor& image);

double sigmoid(double z);

}  // namespace mislead::nets
