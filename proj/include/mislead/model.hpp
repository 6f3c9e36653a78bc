#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/losses.hpp"
#include "mislead/nets.hpp"
#include "mislead/scam.hpp"
#include "mislead/srm.hpp"
#include "mislead/tensor.hpp"

namespace mislead::model {

// The frozen redundant extractor is seeded independently of the run seed so
// every run shares one redundant environment, mirroring a fixed pretrained
// backbone.
inline constexpr std::uint64_t kDefaultEredSeed = 0xE4ED5EEDULL;

struct ModelConfig {
    srm::Preprocess preprocess = srm::Preprocess::astray_srm;
    int input_size = 64;
    int feature_dim = 128;
    std::vector<int> dsub_widths = {16, 32, 64, 128};
    std::vector<int> daux_widths = {8, 16};
    std::vector<int> scam_stages = {2, 3};  // fused D_sub stages, ascending
    bool use_scam = true;
    bool truncate_residual = true;
    std::uint64_t seed = 0;
    std::uint64_t ered_seed = kDefaultEredSeed;

    bool operator==(const ModelConfig&) const = default;
};

// Trainable store layout (in order): D_sub, D_aux, fusion stages, heads.
// E_red lives in its own frozen store; the kernel bank is separate because it
// follows the plain descent rule, not Adam.
struct Model {
    ModelConfig cfg;
    nets::Store trainable;
    nets::Store frozen;
    srm::KernelBank bank;
    std::unique_ptr<nets::Backbone> dsub, daux, ered;
    std::vector<scam::ScamStage> fusions;  // one per cfg.scam_stages (use_scam)
    scam::ScamStage variantc{};            // fuse-only at the last stage (!use_scam)
    nets::Head head_sub{}, head_fused{};

    // The nets point back into the stores, so moves must re-point them.
    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&& o) noexcept { *this = std::move(o); }
    Model& operator=(Model&& o) noexcept;
    void rebind();
};

Model build_model(const ModelConfig& cfg);

// 3-channel [0,1] image -> detector input per the configured preprocessing.
// For the filter-bank modes `raw` (pre-clamp values) is also filled when
// non-null; other modes leave it equal to the output.
Tensor preprocess_input(const Model& m, const Tensor& image, Tensor* raw = nullptr);

// Everything one sample's backward pass needs.
struct SamplePass {
    Tensor image;                           // the (augmented) input image
    Tensor residual;                        // preprocess output, D_sub input
    Tensor raw_residual;                    // pre-clamp filter response
    nets::BackboneCache dsub;
    std::map<int, scam::ScamCache> fused;   // per injected stage (use_scam)
    Tensor vc_red, vc_sub;                  // last-stage fuse inputs (!use_scam)
    nets::BackboneCache daux;
    std::vector<double> vsub_final, vaux_final;
    bool injected = false;
};

// Pretraining path: preprocess -> D_sub -> subtle head. Returns the score.
double forward_pretrain(const Model& m, const Tensor& image, SamplePass* cache);

// dlogit is already batch-normalized. Gradients go into gbuf (trainable-store
// layout). The kernel bank receives no updates during pretraining.
void backward_pretrain(const Model& m, const SamplePass& cache, double dlogit,
                       double* gbuf);

// Misleading-stage scores for one sample. When `red` is non-null the stage
// maps of the frozen extractor are fused into D_sub at the configured stages;
// when null D_sub runs plain. D_aux always sees the raw image.
struct MisleadScores {
    double s_mis = 0.0;  // subtle head on V_sub_final
    double s_fin = 0.0;  // fused head on concat(V_sub_final, V_aux_final)
};
MisleadScores forward_mislead(const Model& m, const Tensor& image,
                              const nets::FeatureStack* red, SamplePass* cache);

// dlogit_mis drives the subtle head (zero for samples without the misleading
// loss), dlogit_fin the fused head, dfinal_extra adds straight onto the
// V_sub_final gradient (the contrastive term; may be empty). bank_grad, when
// non-null, accumulates the filter-bank gradient in kernel layout.
void backward_mislead(const Model& m, const SamplePass& cache, double dlogit_mis,
                      double dlogit_fin, std::span<const double> dfinal_extra,
                      double* gbuf, double* bank_grad);

// Deterministic inference paths (no injection ever).
double infer_pretrain(const Model& m, const Tensor& image);  // subtle head only
double infer_fused(const Model& m, const Tensor& image);     // fused head

// v / max(|v|, 1e-12)
std::vector<double> l2_normalize(std::span<const double> v);

// Contrastive term with anchor == positive on normalized features:
// loss = max(margin - |a_hat - n_hat|, 0). On return danchor holds the
// gradient w.r.t. the unnormalized anchor (zero when inactive or degenerate).
double triplet_anchor_grad(std::span<const double> anchor,
                           std::span<const double> negative, double margin,
                           std::vector<double>& danchor);

// Adam over the trainable store. Gradient buffers mirror the store layout.
struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t t = 0;
    std::vector<double> m, v;

    explicit Adam(std::size_t n, double lr_ = 1e-3)
        : lr(lr_), m(n, 0.0), v(n, 0.0) {}
    void step(std::span<double> params, std::span<const double> grad);
};

}  // namespace mislead::model
