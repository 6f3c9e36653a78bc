#include "mislead/nets.hpp"

#include <cmath>
#include <utility>

#include "mislead/conv.hpp"
#include "mislead/digest.hpp"

namespace mislead::nets {

using nn::MatRM;

namespace {
constexpr double kNormEps = 1e-5;

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}
}  // namespace

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::size_t Store::add(std::string name, std::vector<int> shape) {
    Seg seg;
    seg.name = std::move(name);
    seg.shape = std::move(shape);
    seg.offset = data.size();
    seg.count = 1;
    for (const int d : seg.shape) seg.count *= std::size_t(d);
    data.resize(seg.offset + seg.count, 0.0);
    segs.push_back(seg);
    return segs.back().offset;
}

const Store::Seg* Store::find(const std::string& name) const {
    for (const auto& s : segs)
        if (s.name == name) return &s;
    return nullptr;
}

std::string digest_range(const Store& store, std::size_t begin, std::size_t end) {
    return sha256_hex(std::span<const double>(store.data.data() + begin, end - begin));
}

Backbone::Backbone(const BackboneConfig& cfg, Store& store, std::string prefix,
                   bool frozen)
    : cfg_(cfg), store_(&store), frozen_(frozen) {
    if (cfg_.stages <= 0 || int(cfg_.widths.size()) != cfg_.stages)
        throw ConfigError("backbone needs one width per stage");
    for (const int w : cfg_.widths)
        if (w <= 0) throw ConfigError("backbone widths must be positive");
    if (cfg_.input_channels <= 0 || cfg_.feature_dim <= 0)
        throw ConfigError("backbone channel counts must be positive");

    rng::Stream st(cfg_.seed);
    begin_ = store.size();
    int in_c = cfg_.input_channels;
    for (int s = 0; s < cfg_.stages; ++s) {
        const int out_c = cfg_.widths[s];
        StageParams p;
        p.in_c = in_c;
        p.out_c = out_c;
        const std::string base = prefix + ".stage" + std::to_string(s);
        p.w = store.add(base + ".w", {out_c, in_c, 3, 3});
        p.b = store.add(base + ".b", {out_c});
        p.gamma = store.add(base + ".gamma", {out_c});
        p.beta = store.add(base + ".beta", {out_c});
        const double std_w = std::sqrt(2.0 / (in_c * 9.0));
        for (std::size_t i = 0; i < std::size_t(out_c) * in_c * 9; ++i)
            store.at(p.w)[i] = st.normal(0.0, std_w);
        for (int i = 0; i < out_c; ++i) store.at(p.gamma)[i] = 1.0;
        stages_.push_back(p);
        in_c = out_c;
    }
    proj_w_ = store.add(prefix + ".proj.w", {cfg_.feature_dim, in_c});
    proj_b_ = store.add(prefix + ".proj.b", {cfg_.feature_dim});
    const double std_p = std::sqrt(1.0 / in_c);
    for (std::size_t i = 0; i < std::size_t(cfg_.feature_dim) * in_c; ++i)
        store_->at(proj_w_)[i] = st.normal(0.0, std_p);
    end_ = store.size();
}

const std::vector<std::int32_t>& Backbone::patch_map(int h, int w) const {
    auto it = patch_maps_.find({h, w});
    if (it == patch_maps_.end())
        it = patch_maps_.emplace(std::make_pair(h, w), nn::make_patch_map(h, w, 3)).first;
    return it->second;
}

Tensor Backbone::stage_forward(int s, const Tensor& in, StageCache* cache) const {
    if (s < 0 || s >= cfg_.stages)
        throw StageIndexOutOfRange("stage " + std::to_string(s) + " out of range");
    const StageParams& p = stages_[s];
    if (in.c != p.in_c)
        throw ShapeMismatch("stage " + std::to_string(s) + " expects " +
                            std::to_string(p.in_c) + " channels, got " +
                            std::to_string(in.c));
    if (in.h < 2 || in.w < 2 || in.h % 2 || in.w % 2)
        throw ShapeMismatch("stage input sides must be even and >= 2, got " +
                            std::to_string(in.h) + "x" + std::to_string(in.w));

    const auto& map = patch_map(in.h, in.w);
    Eigen::MatrixXd local_cols;
    Eigen::MatrixXd& cols = cache ? cache->cols : local_cols;
    nn::im2col(in, 3, map, cols);

    Tensor z(p.out_c, in.h, in.w);
    nn::conv_forward(cols, store_->at(p.w), store_->at(p.b), p.out_c, z);

    // instance norm: per-channel statistics over this sample's spatial plane
    const int hw = in.h * in.w;
    std::vector<double> mean(p.out_c), invstd(p.out_c);
    Tensor xhat(p.out_c, in.h, in.w);
    for (int c = 0; c < p.out_c; ++c) {
        const double* zc = z.v.data() + std::size_t(c) * hw;
        double m = 0.0;
        for (int i = 0; i < hw; ++i) m += zc[i];
        m /= hw;
        double var = 0.0;
        for (int i = 0; i < hw; ++i) var += (zc[i] - m) * (zc[i] - m);
        var /= hw;
        const double is = 1.0 / std::sqrt(var + kNormEps);
        mean[c] = m;
        invstd[c] = is;
        const double g = store_->at(p.gamma)[c], be = store_->at(p.beta)[c];
        double* xc = xhat.v.data() + std::size_t(c) * hw;
        double* zc_mut = z.v.data() + std::size_t(c) * hw;
        for (int i = 0; i < hw; ++i) {
            xc[i] = (zc_mut[i] - m) * is;
            zc_mut[i] = g * xc[i] + be;  // z now holds the norm output
        }
    }

    Tensor act(p.out_c, in.h, in.w);
    for (std::size_t i = 0; i < z.v.size(); ++i) act.v[i] = silu(z.v[i]);

    Tensor out(p.out_c, in.h / 2, in.w / 2);
    for (int c = 0; c < p.out_c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x)
                out.at(c, y, x) = 0.25 * (act.at(c, 2 * y, 2 * x) +
                                          act.at(c, 2 * y, 2 * x + 1) +
                                          act.at(c, 2 * y + 1, 2 * x) +
                                          act.at(c, 2 * y + 1, 2 * x + 1));
    if (cache) {
        cache->in_h = in.h;
        cache->in_w = in.w;
        cache->in_c = in.c;
        cache->mean = std::move(mean);
        cache->invstd = std::move(invstd);
        cache->norm_xhat = std::move(xhat);
        cache->act_in = std::move(z);
        cache->act_out = std::move(act);
    }
    return out;
}

Tensor Backbone::stage_backward(int s, const Tensor& dout, const StageCache& cache,
                                double* gbuf) const {
    const StageParams& p = stages_[s];
    const int h = cache.in_h, w = cache.in_w, hw = h * w;

    // un-pool: spread each gradient over its 2x2 source window
    Tensor dact(p.out_c, h, w);
    for (int c = 0; c < p.out_c; ++c)
        for (int y = 0; y < dout.h; ++y)
            for (int x = 0; x < dout.w; ++x) {
                const double g = 0.25 * dout.at(c, y, x);
                dact.at(c, 2 * y, 2 * x) = g;
                dact.at(c, 2 * y, 2 * x + 1) = g;
                dact.at(c, 2 * y + 1, 2 * x) = g;
                dact.at(c, 2 * y + 1, 2 * x + 1) = g;
            }

    // SiLU backward on the cached pre-activation
    Tensor dz(p.out_c, h, w);
    for (std::size_t i = 0; i < dz.v.size(); ++i)
        dz.v[i] = dact.v[i] * silu_grad(cache.act_in.v[i]);

    // instance-norm backward
    Tensor dx(p.out_c, h, w);
    for (int c = 0; c < p.out_c; ++c) {
        const double* dzc = dz.v.data() + std::size_t(c) * hw;
        const double* xc = cache.norm_xhat.v.data() + std::size_t(c) * hw;
        const double g = store_->at(p.gamma)[c];
        double dgamma = 0.0, dbeta = 0.0, s1 = 0.0, s2 = 0.0;
        for (int i = 0; i < hw; ++i) {
            dgamma += dzc[i] * xc[i];
            dbeta += dzc[i];
            const double dxh = dzc[i] * g;
            s1 += dxh;
            s2 += dxh * xc[i];
        }
        if (gbuf) {
            gbuf[p.gamma + c] += dgamma;
            gbuf[p.beta + c] += dbeta;
        }
        const double is = cache.invstd[c];
        double* dxc = dx.v.data() + std::size_t(c) * hw;
        for (int i = 0; i < hw; ++i) {
            const double dxh = dzc[i] * g;
            dxc[i] = is * (dxh - s1 / hw - xc[i] * s2 / hw);
        }
    }

    // conv backward
    const Eigen::Index ckk = Eigen::Index(p.in_c) * 9;
    Eigen::Map<const MatRM> dxm(dx.v.data(), p.out_c, hw);
    Eigen::Map<const MatRM> wm(store_->at(p.w), p.out_c, ckk);
    if (gbuf) {
        Eigen::Map<MatRM> dwm(gbuf + p.w, p.out_c, ckk);
        dwm.noalias() += dxm * cache.cols.transpose();
        // Scalar loop: Eigen's redux over an unaligned map peels by runtime
        // address, which makes the summation order depend on where the
        // tensor landed. Gradients must not.
        for (int c = 0; c < p.out_c; ++c) {
            const double* row = dx.v.data() + std::size_t(c) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += row[i];
            gbuf[p.b + c] += acc;
        }
    }
    Eigen::MatrixXd dcols = wm.transpose() * dxm;
    Tensor din(p.in_c, h, w);
    nn::col2im(dcols, 3, patch_map(h, w), din);
    return din;
}

std::vector<double> Backbone::project_final(const Tensor& last_map,
                                            BackboneCache* cache) const {
    const int c_last = cfg_.widths.back();
    if (last_map.c != c_last)
        throw ShapeMismatch("final map has " + std::to_string(last_map.c) +
                            " channels, expected " + std::to_string(c_last));
    const int hw = last_map.h * last_map.w;
    std::vector<double> gap(c_last, 0.0);
    for (int c = 0; c < c_last; ++c) {
        const double* mc = last_map.v.data() + std::size_t(c) * hw;
        for (int i = 0; i < hw; ++i) gap[c] += mc[i];
        gap[c] /= hw;
    }
    std::vector<double> out(cfg_.feature_dim);
    const double* wp = store_->at(proj_w_);
    const double* bp = store_->at(proj_b_);
    for (int o = 0; o < cfg_.feature_dim; ++o) {
        double acc = bp[o];
        const double* row = wp + std::size_t(o) * c_last;
        for (int c = 0; c < c_last; ++c) acc += row[c] * gap[c];
        out[o] = acc;
    }
    if (cache) {
        cache->gap = gap;
        cache->last_h = last_map.h;
        cache->last_w = last_map.w;
    }
    return out;
}

Tensor Backbone::project_backward(std::span<const double> dfinal,
                                  const BackboneCache& cache, double* gbuf) const {
    const int c_last = cfg_.widths.back();
    const int hw = cache.last_h * cache.last_w;
    const double* wp = store_->at(proj_w_);
    std::vector<double> dgap(c_last, 0.0);
    for (int o = 0; o < cfg_.feature_dim; ++o) {
        const double d = dfinal[o];
        const double* row = wp + std::size_t(o) * c_last;
        if (gbuf) {
            gbuf[proj_b_ + o] += d;
            double* grow = gbuf + proj_w_ + std::size_t(o) * c_last;
            for (int c = 0; c < c_last; ++c) grow[c] += d * cache.gap[c];
        }
        for (int c = 0; c < c_last; ++c) dgap[c] += d * row[c];
    }
    Tensor dmap(c_last, cache.last_h, cache.last_w);
    for (int c = 0; c < c_last; ++c) {
        const double g = dgap[c] / hw;
        double* mc = dmap.v.data() + std::size_t(c) * hw;
        for (int i = 0; i < hw; ++i) mc[i] = g;
    }
    return dmap;
}

FeatureStack Backbone::forward(const Tensor& input, BackboneCache* cache) const {
    if (cache) cache->stages.resize(cfg_.stages);
    FeatureStack stack;
    Tensor cur = input;
    for (int s = 0; s < cfg_.stages; ++s) {
        cur = stage_forward(s, cur, cache ? &cache->stages[s] : nullptr);
        stack.stage_maps.push_back(cur);
    }
    stack.final = project_final(cur, cache);
    return stack;
}

std::string Backbone::digest() const { return digest_range(*store_, begin_, end_); }

Head make_head(Store& store, int in_dim, std::string name, rng::Stream& init) {
    Head h;
    h.in_dim = in_dim;
    h.store = &store;
    h.w = store.add(name + ".w", {in_dim});
    h.b = store.add(name + ".b", {1});
    const double std_w = std::sqrt(1.0 / in_dim);
    for (int i = 0; i < in_dim; ++i) store.at(h.w)[i] = init.normal(0.0, std_w);
    return h;
}

double head_logit(const Head& head, std::span<const double> feature) {
    if (int(feature.size()) != head.in_dim)
        throw DimMismatch("head expects " + std::to_string(head.in_dim) +
                          " inputs, got " + std::to_string(feature.size()));
    const double* w = head.store->at(head.w);
    double acc = head.store->at(head.b)[0];
    for (int i = 0; i < head.in_dim; ++i) acc += w[i] * feature[i];
    return acc;
}

double classify(const Head& head, std::span<const double> feature) {
    return sigmoid(head_logit(head, feature));
}

std::vector<double> head_backward(const Head& head, std::span<const double> feature,
                                  double dlogit, double* gbuf) {
    const double* w = head.store->at(head.w);
    std::vector<double> dfeat(head.in_dim);
    for (int i = 0; i < head.in_dim; ++i) {
        dfeat[i] = dlogit * w[i];
        if (gbuf) gbuf[head.w + i] += dlogit * feature[i];
    }
    if (gbuf) gbuf[head.b] += dlogit;
    return dfeat;
}

FeatureStack extract_red_features(const Backbone& e_red, const Tensor& image) {
    if (!e_red.frozen())
        throw ConfigError("redundant extractor must be frozen before use");
    return e_red.forward(image);
}

FeatureStack forward_dsub(const Backbone& d_sub, const Tensor& residual_input,
                          const std::map<int, StageFusion>& injected) {
    for (const auto& [s, fn] : injected)
        if (s < 0 || s >= d_sub.config().stages)
            throw StageIndexOutOfRange("fusion stage " + std::to_string(s) +
                                       " out of range");
    FeatureStack stack;
    Tensor cur = residual_input;
    for (int s = 0; s < d_sub.config().stages; ++s) {
        cur = d_sub.stage_forward(s, cur, nullptr);
        const auto it = injected.find(s);
        if (it != injected.end()) cur = it->second(cur);
        stack.stage_maps.push_back(cur);
    }
    stack.final = d_sub.project_final(cur, nullptr);
    return stack;
}

FeatureStack forward_daux(const Backbone& d_aux, const Tensor& image) {
    return d_aux.forward(image);
}

}  // namespace mislead::nets
