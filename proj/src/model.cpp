#include "mislead/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "mislead/conv.hpp"

namespace mislead::model {

namespace {

void validate_config(const ModelConfig& cfg) {
    if (cfg.dsub_widths.empty() || cfg.daux_widths.empty())
        throw ConfigError("backbone width lists must be non-empty");
    for (const int w : cfg.dsub_widths)
        if (w <= 0) throw ConfigError("dsub widths must be positive");
    for (const int w : cfg.daux_widths)
        if (w <= 0) throw ConfigError("daux widths must be positive");
    if (cfg.feature_dim <= 0) throw ConfigError("feature_dim must be positive");
    if (cfg.input_size < 16) throw ConfigError("input_size must be at least 16");
    int s = cfg.input_size;
    for (std::size_t i = 0; i < cfg.dsub_widths.size(); ++i) {
        if (s < 2 || s % 2)
            throw ConfigError("input_size must halve through every stage");
        s /= 2;
    }
    s = cfg.input_size;
    for (std::size_t i = 0; i < cfg.daux_widths.size(); ++i) {
        if (s < 2 || s % 2)
            throw ConfigError("input_size must halve through every auxiliary stage");
        s /= 2;
    }
    const int n_stages = int(cfg.dsub_widths.size());
    std::set<int> seen;
    for (const int st : cfg.scam_stages) {
        if (st < 0 || st >= n_stages)
            throw nets::StageIndexOutOfRange("fusion stage " + std::to_string(st) +
                                             " outside [0, " +
                                             std::to_string(n_stages) + ")");
        if (!seen.insert(st).second)
            throw ConfigError("duplicate fusion stage " + std::to_string(st));
    }
}

bool uses_bank(srm::Preprocess p) {
    return p == srm::Preprocess::astray_srm || p == srm::Preprocess::srm_fixed;
}

// Backward through the D_sub stage chain of one recorded forward, undoing
// fusion at the stages that applied it. Returns the residual-input gradient.
Tensor backward_dsub_chain(const Model& m, const SamplePass& cache, Tensor dmap,
                           double* gbuf) {
    const int n_stages = int(m.cfg.dsub_widths.size());
    for (int s = n_stages - 1; s >= 0; --s) {
        if (cache.injected) {
            if (m.cfg.use_scam) {
                const auto it = cache.fused.find(s);
                if (it != cache.fused.end()) {
                    std::size_t idx = 0;
                    while (m.cfg.scam_stages[idx] != s) ++idx;
                    dmap = scam_backward(m.fusions[idx], dmap, it->second, gbuf);
                }
            } else if (s == n_stages - 1) {
                dmap = fuse_backward(m.variantc, dmap, cache.vc_red, cache.vc_sub,
                                     gbuf);
            }
        }
        dmap = m.dsub->stage_backward(s, dmap, cache.dsub.stages[s], gbuf);
    }
    return dmap;
}

void accumulate_bank_grad(const Model& m, const SamplePass& cache,
                          const Tensor& d_residual, double* bank_grad) {
    const int hw = cache.image.h * cache.image.w;
    Tensor masked = d_residual;
    if (m.bank.truncate) {
        const double lim = m.bank.truncate_limit;
        for (std::size_t i = 0; i < masked.v.size(); ++i)
            if (std::abs(cache.raw_residual.v[i]) > lim) masked.v[i] = 0.0;
    }
    const auto map = nn::make_patch_map(cache.image.h, cache.image.w, 5);
    Eigen::MatrixXd cols;
    nn::im2col(cache.image, 5, map, cols);
    Eigen::Map<nn::MatRM> dk(bank_grad, m.bank.c_out, 75);
    Eigen::Map<const nn::MatRM> dm(masked.v.data(), m.bank.c_out, hw);
    dk.noalias() += dm * cols.transpose();
}

}  // namespace

Model& Model::operator=(Model&& o) noexcept {
    cfg = std::move(o.cfg);
    trainable = std::move(o.trainable);
    frozen = std::move(o.frozen);
    bank = std::move(o.bank);
    dsub = std::move(o.dsub);
    daux = std::move(o.daux);
    ered = std::move(o.ered);
    fusions = std::move(o.fusions);
    variantc = std::move(o.variantc);
    head_sub = std::move(o.head_sub);
    head_fused = std::move(o.head_fused);
    rebind();
    return *this;
}

void Model::rebind() {
    if (dsub) dsub->rebind(trainable);
    if (daux) daux->rebind(trainable);
    if (ered) ered->rebind(frozen);
    for (auto& f : fusions) f.store = &trainable;
    if (variantc.store) variantc.store = &trainable;
    if (head_sub.store) head_sub.store = &trainable;
    if (head_fused.store) head_fused.store = &trainable;
}

Model build_model(const ModelConfig& cfg) {
    validate_config(cfg);
    Model m;
    m.cfg = cfg;
    std::sort(m.cfg.scam_stages.begin(), m.cfg.scam_stages.end());
    m.bank = srm::init_kernel_bank();
    m.bank.truncate = cfg.truncate_residual;

    nets::BackboneConfig sub;
    sub.stages = int(cfg.dsub_widths.size());
    sub.widths = cfg.dsub_widths;
    sub.input_channels = srm::preprocess_channels(cfg.preprocess, m.bank);
    sub.feature_dim = cfg.feature_dim;
    sub.seed = rng::derive(cfg.seed, 1);
    m.dsub = std::make_unique<nets::Backbone>(sub, m.trainable, "dsub", false);

    nets::BackboneConfig aux;
    aux.stages = int(cfg.daux_widths.size());
    aux.widths = cfg.daux_widths;
    aux.input_channels = 3;
    aux.feature_dim = cfg.feature_dim;
    aux.seed = rng::derive(cfg.seed, 2);
    m.daux = std::make_unique<nets::Backbone>(aux, m.trainable, "daux", false);

    rng::Stream fuse_init(rng::derive(cfg.seed, 3));
    if (cfg.use_scam) {
        for (const int s : m.cfg.scam_stages)
            m.fusions.push_back(scam::make_scam_stage(m.trainable,
                                                      cfg.dsub_widths[s],
                                                      "scam" + std::to_string(s),
                                                      fuse_init));
    } else {
        m.variantc = scam::make_fuse_only(m.trainable, cfg.dsub_widths.back(),
                                          "fuse_final", fuse_init);
    }

    rng::Stream head_init(rng::derive(cfg.seed, 4));
    m.head_sub = nets::make_head(m.trainable, cfg.feature_dim, "head_sub", head_init);
    m.head_fused =
        nets::make_head(m.trainable, 2 * cfg.feature_dim, "head_fused", head_init);

    nets::BackboneConfig red = sub;
    red.input_channels = 3;
    red.seed = cfg.ered_seed;
    m.ered = std::make_unique<nets::Backbone>(red, m.frozen, "ered", true);
    return m;
}

Tensor preprocess_input(const Model& m, const Tensor& image, Tensor* raw) {
    if (image.c != 3)
        throw ShapeMismatch("preprocessing expects 3-channel images, got " +
                            std::to_string(image.c));
    if (uses_bank(m.cfg.preprocess)) {
        Tensor r = srm::apply_residual_filter_raw(m.bank, image);
        Tensor out = r;
        if (m.bank.truncate) {
            const double lim = m.bank.truncate_limit;
            for (auto& v : out.v) v = std::clamp(v, -lim, lim);
        }
        if (raw) *raw = std::move(r);
        return out;
    }
    Tensor out = m.cfg.preprocess == srm::Preprocess::dct
                     ? srm::apply_dct_preprocess(image)
                     : image;
    if (raw) *raw = out;
    return out;
}

double forward_pretrain(const Model& m, const Tensor& image, SamplePass* cache) {
    SamplePass local;
    SamplePass& sp = cache ? *cache : local;
    sp.injected = false;
    sp.image = image;
    sp.residual = preprocess_input(m, image, &sp.raw_residual);
    const nets::FeatureStack fs = m.dsub->forward(sp.residual, &sp.dsub);
    sp.vsub_final = fs.final;
    return nets::classify(m.head_sub, sp.vsub_final);
}

void backward_pretrain(const Model& m, const SamplePass& cache, double dlogit,
                       double* gbuf) {
    const auto dfinal = nets::head_backward(m.head_sub, cache.vsub_final, dlogit, gbuf);
    Tensor dmap = m.dsub->project_backward(dfinal, cache.dsub, gbuf);
    backward_dsub_chain(m, cache, std::move(dmap), gbuf);
}

MisleadScores forward_mislead(const Model& m, const Tensor& image,
                              const nets::FeatureStack* red, SamplePass* cache) {
    SamplePass local;
    SamplePass& sp = cache ? *cache : local;
    sp.injected = red != nullptr;
    sp.image = image;
    sp.residual = preprocess_input(m, image, &sp.raw_residual);

    const int n_stages = int(m.cfg.dsub_widths.size());
    sp.dsub.stages.resize(n_stages);
    Tensor cur = sp.residual;
    for (int s = 0; s < n_stages; ++s) {
        cur = m.dsub->stage_forward(s, cur, &sp.dsub.stages[s]);
        if (!sp.injected) continue;
        if (m.cfg.use_scam) {
            const auto it = std::find(m.cfg.scam_stages.begin(),
                                      m.cfg.scam_stages.end(), s);
            if (it != m.cfg.scam_stages.end()) {
                const std::size_t idx = std::size_t(it - m.cfg.scam_stages.begin());
                cur = scam::scam_forward(m.fusions[idx], red->stage_maps[s], cur,
                                         &sp.fused[s]);
            }
        } else if (s == n_stages - 1) {
            sp.vc_red = red->stage_maps[s];
            sp.vc_sub = cur;
            cur = scam::fuse_hybrid(m.variantc, sp.vc_red, sp.vc_sub);
        }
    }
    sp.vsub_final = m.dsub->project_final(cur, &sp.dsub);

    const nets::FeatureStack aux = m.daux->forward(image, &sp.daux);
    sp.vaux_final = aux.final;

    std::vector<double> concat = sp.vsub_final;
    concat.insert(concat.end(), sp.vaux_final.begin(), sp.vaux_final.end());

    MisleadScores out;
    out.s_mis = nets::classify(m.head_sub, sp.vsub_final);
    out.s_fin = nets::classify(m.head_fused, concat);
    return out;
}

void backward_mislead(const Model& m, const SamplePass& cache, double dlogit_mis,
                      double dlogit_fin, std::span<const double> dfinal_extra,
                      double* gbuf, double* bank_grad) {
    const int fd = m.cfg.feature_dim;
    std::vector<double> concat = cache.vsub_final;
    concat.insert(concat.end(), cache.vaux_final.begin(), cache.vaux_final.end());

    std::vector<double> dvsub(fd, 0.0), dvaux(fd, 0.0);
    if (dlogit_fin != 0.0) {
        const auto dconcat =
            nets::head_backward(m.head_fused, concat, dlogit_fin, gbuf);
        for (int i = 0; i < fd; ++i) {
            dvsub[i] = dconcat[i];
            dvaux[i] = dconcat[fd + i];
        }
    }
    if (dlogit_mis != 0.0) {
        const auto d =
            nets::head_backward(m.head_sub, cache.vsub_final, dlogit_mis, gbuf);
        for (int i = 0; i < fd; ++i) dvsub[i] += d[i];
    }
    if (!dfinal_extra.empty()) {
        if (int(dfinal_extra.size()) != fd)
            throw DimMismatch("extra final gradient has wrong dimension");
        for (int i = 0; i < fd; ++i) dvsub[i] += dfinal_extra[i];
    }

    Tensor dmap_aux = m.daux->project_backward(dvaux, cache.daux, gbuf);
    for (int s = int(m.cfg.daux_widths.size()) - 1; s >= 0; --s)
        dmap_aux = m.daux->stage_backward(s, dmap_aux, cache.daux.stages[s], gbuf);

    Tensor dmap = m.dsub->project_backward(dvsub, cache.dsub, gbuf);
    const Tensor d_residual = backward_dsub_chain(m, cache, std::move(dmap), gbuf);

    if (bank_grad && uses_bank(m.cfg.preprocess))
        accumulate_bank_grad(m, cache, d_residual, bank_grad);
}

double infer_pretrain(const Model& m, const Tensor& image) {
    return nets::classify(m.head_sub,
                          m.dsub->forward(preprocess_input(m, image)).final);
}

double infer_fused(const Model& m, const Tensor& image) {
    const auto sub = m.dsub->forward(preprocess_input(m, image)).final;
    const auto aux = m.daux->forward(image).final;
    std::vector<double> concat = sub;
    concat.insert(concat.end(), aux.begin(), aux.end());
    return nets::classify(m.head_fused, concat);
}

std::vector<double> l2_normalize(std::span<const double> v) {
    double n = 0.0;
    for (const double x : v) n += x * x;
    n = std::max(std::sqrt(n), 1e-12);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

double triplet_anchor_grad(std::span<const double> anchor,
                           std::span<const double> negative, double margin,
                           std::vector<double>& danchor) {
    if (anchor.size() != negative.size())
        throw DimMismatch("triplet vectors must share one dimension");
    danchor.assign(anchor.size(), 0.0);
    double na = 0.0;
    for (const double x : anchor) na += x * x;
    na = std::sqrt(na);
    const auto a_hat = l2_normalize(anchor);
    const auto n_hat = l2_normalize(negative);
    double dist2 = 0.0;
    for (std::size_t i = 0; i < a_hat.size(); ++i) {
        const double d = a_hat[i] - n_hat[i];
        dist2 += d * d;
    }
    const double dist = std::sqrt(dist2);
    const double loss = std::max(margin - dist, 0.0);
    if (loss <= 0.0 || dist < 1e-12 || na < 1e-12) return loss;

    // dL/da_hat = -(a_hat - n_hat)/dist, mapped through the normalization
    // Jacobian (I - a_hat a_hat^T)/|a|.
    double dot = 0.0;
    for (std::size_t i = 0; i < a_hat.size(); ++i)
        dot += a_hat[i] * (a_hat[i] - n_hat[i]);
    for (std::size_t i = 0; i < a_hat.size(); ++i) {
        const double dl = -(a_hat[i] - n_hat[i]) / dist;
        const double proj = dl + a_hat[i] * dot / dist;
        danchor[i] = proj / na;
    }
    return loss;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
    if (params.size() != m.size() || grad.size() != m.size())
        throw DimMismatch("optimizer state does not match parameter count");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, double(t));
    const double bc2 = 1.0 - std::pow(beta2, double(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        params[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
}

}  // namespace mislead::model
