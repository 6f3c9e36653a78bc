#include "mislead/scam.hpp"

#include <algorithm>
#include <cmath>

namespace mislead::scam {

namespace {

double silu(double z) { return z / (1.0 + std::exp(-z)); }

double silu_grad(double z) {
    const double s = 1.0 / (1.0 + std::exp(-z));
    return s * (1.0 + z * (1.0 - s));
}

// T(p) = W2 silu(W1 p + b1) + b2; hidden pre/post activations go to the caches.
std::vector<double> bottleneck(const ScamStage& st, std::span<const double> p,
                               std::vector<double>* h_in, std::vector<double>* h_out) {
    const nets::Store& s = *st.store;
    std::vector<double> hi(st.hidden), ho(st.hidden), out(st.c);
    for (int h = 0; h < st.hidden; ++h) {
        double acc = s.at(st.t1_b)[h];
        const double* row = s.at(st.t1_w) + std::size_t(h) * st.c;
        for (int c = 0; c < st.c; ++c) acc += row[c] * p[c];
        hi[h] = acc;
        ho[h] = silu(acc);
    }
    for (int o = 0; o < st.c; ++o) {
        double acc = s.at(st.t2_b)[o];
        const double* row = s.at(st.t2_w) + std::size_t(o) * st.hidden;
        for (int h = 0; h < st.hidden; ++h) acc += row[h] * ho[h];
        out[o] = acc;
    }
    if (h_in) *h_in = std::move(hi);
    if (h_out) *h_out = std::move(ho);
    return out;
}

// Backward through T for one branch; d_p is the gradient w.r.t. the pooled
// input. Shared parameters accumulate across both branches.
std::vector<double> bottleneck_backward(const ScamStage& st,
                                        std::span<const double> d_t,
                                        std::span<const double> pool,
                                        const std::vector<double>& h_in,
                                        const std::vector<double>& h_out,
                                        double* gbuf) {
    const nets::Store& s = *st.store;
    std::vector<double> d_hout(st.hidden, 0.0);
    for (int o = 0; o < st.c; ++o) {
        const double d = d_t[o];
        const double* row = s.at(st.t2_w) + std::size_t(o) * st.hidden;
        if (gbuf) {
            gbuf[st.t2_b + o] += d;
            double* grow = gbuf + st.t2_w + std::size_t(o) * st.hidden;
            for (int h = 0; h < st.hidden; ++h) grow[h] += d * h_out[h];
        }
        for (int h = 0; h < st.hidden; ++h) d_hout[h] += d * row[h];
    }
    std::vector<double> d_p(st.c, 0.0);
    for (int h = 0; h < st.hidden; ++h) {
        const double d_hin = d_hout[h] * silu_grad(h_in[h]);
        const double* row = s.at(st.t1_w) + std::size_t(h) * st.c;
        if (gbuf) {
            gbuf[st.t1_b + h] += d_hin;
            double* grow = gbuf + st.t1_w + std::size_t(h) * st.c;
            for (int c = 0; c < st.c; ++c) grow[c] += d_hin * pool[c];
        }
        for (int c = 0; c < st.c; ++c) d_p[c] += d_hin * row[c];
    }
    return d_p;
}

}  // namespace

namespace {

void init_fuse(nets::Store& store, ScamStage& st, const std::string& name,
               rng::Stream& init) {
    st.fuse_w = store.add(name + ".fuse.w", {st.c, 2 * st.c});
    st.fuse_b = store.add(name + ".fuse.b", {st.c});
    const double eps = kFuseInitEps / std::sqrt(double(st.c));
    for (int o = 0; o < st.c; ++o) {
        double* row = store.at(st.fuse_w) + std::size_t(o) * 2 * st.c;
        for (int k = 0; k < 2 * st.c; ++k) row[k] = init.normal(0.0, eps);
        row[st.c + o] += 1.0;  // identity on the enhanced half
    }
}

}  // namespace

ScamStage make_scam_stage(nets::Store& store, int channels, const std::string& name,
                          rng::Stream& init) {
    if (channels <= 0) throw ConfigError("scam stage needs positive channel count");
    ScamStage st;
    st.c = channels;
    st.hidden = std::max(1, channels / kReduction);
    st.store = &store;
    st.t1_w = store.add(name + ".t1.w", {st.hidden, st.c});
    st.t1_b = store.add(name + ".t1.b", {st.hidden});
    st.t2_w = store.add(name + ".t2.w", {st.c, st.hidden});
    st.t2_b = store.add(name + ".t2.b", {st.c});

    const double s1 = std::sqrt(1.0 / st.c), s2 = std::sqrt(1.0 / st.hidden);
    for (std::size_t i = 0; i < std::size_t(st.hidden) * st.c; ++i)
        store.at(st.t1_w)[i] = init.normal(0.0, s1);
    for (std::size_t i = 0; i < std::size_t(st.c) * st.hidden; ++i)
        store.at(st.t2_w)[i] = init.normal(0.0, s2);
    init_fuse(store, st, name, init);
    return st;
}

ScamStage make_fuse_only(nets::Store& store, int channels, const std::string& name,
                         rng::Stream& init) {
    if (channels <= 0) throw ConfigError("fuse stage needs positive channel count");
    ScamStage st;
    st.c = channels;
    st.hidden = 0;
    st.store = &store;
    init_fuse(store, st, name, init);
    return st;
}

std::vector<double> channel_attention(const ScamStage& stage, const Tensor& v_sub,
                                      ScamCache* cache) {
    if (v_sub.c != stage.c)
        throw ShapeMismatch("attention expects " + std::to_string(stage.c) +
                            " channels, got " + std::to_string(v_sub.c));
    const int hw = v_sub.h * v_sub.w;
    if (hw <= 0) throw ShapeMismatch("attention input has no spatial extent");

    std::vector<double> mean_pool(stage.c), max_pool(stage.c);
    std::vector<int> max_idx(stage.c);
    for (int c = 0; c < stage.c; ++c) {
        const double* vc = v_sub.v.data() + std::size_t(c) * hw;
        double m = 0.0, mx = vc[0];
        int mi = 0;
        for (int i = 0; i < hw; ++i) {
            m += vc[i];
            if (vc[i] > mx) {
                mx = vc[i];
                mi = i;
            }
        }
        mean_pool[c] = m / hw;
        max_pool[c] = mx;
        max_idx[c] = mi;
    }

    std::vector<double> hmi, hmo, hxi, hxo;
    const auto t_mean = bottleneck(stage, mean_pool, &hmi, &hmo);
    const auto t_max = bottleneck(stage, max_pool, &hxi, &hxo);
    std::vector<double> sc(stage.c);
    for (int c = 0; c < stage.c; ++c)
        sc[c] = std::clamp(nets::sigmoid(t_mean[c] + t_max[c]), kAttentionClamp,
                           1.0 - kAttentionClamp);

    if (cache) {
        cache->mean_pool = std::move(mean_pool);
        cache->max_pool = std::move(max_pool);
        cache->max_idx = std::move(max_idx);
        cache->h_mean_in = std::move(hmi);
        cache->h_mean_out = std::move(hmo);
        cache->h_max_in = std::move(hxi);
        cache->h_max_out = std::move(hxo);
        cache->sc = sc;
        cache->h = v_sub.h;
        cache->w = v_sub.w;
    }
    return sc;
}

Tensor enhance(const Tensor& v_sub, std::span<const double> sc) {
    if (int(sc.size()) != v_sub.c)
        throw ShapeMismatch("enhance needs one attention weight per channel");
    Tensor out(v_sub.c, v_sub.h, v_sub.w);
    const int hw = v_sub.h * v_sub.w;
    for (int c = 0; c < v_sub.c; ++c) {
        const double g = 1.0 + sc[c];
        const double* in = v_sub.v.data() + std::size_t(c) * hw;
        double* o = out.v.data() + std::size_t(c) * hw;
        for (int i = 0; i < hw; ++i) o[i] = g * in[i];
    }
    return out;
}

Tensor fuse_hybrid(const ScamStage& stage, const Tensor& v_red, const Tensor& v_sc) {
    if (v_red.c != stage.c || v_sc.c != stage.c || v_red.h != v_sc.h ||
        v_red.w != v_sc.w)
        throw ShapeMismatch("fuse inputs must share the stage shape");
    const int hw = v_red.h * v_red.w;
    const nets::Store& s = *stage.store;
    Tensor out(stage.c, v_red.h, v_red.w);
    for (int o = 0; o < stage.c; ++o) {
        const double* row = s.at(stage.fuse_w) + std::size_t(o) * 2 * stage.c;
        double* oc = out.v.data() + std::size_t(o) * hw;
        const double b = s.at(stage.fuse_b)[o];
        for (int i = 0; i < hw; ++i) oc[i] = b;
        for (int k = 0; k < stage.c; ++k) {
            const double wr = row[k], ws = row[stage.c + k];
            const double* rc = v_red.v.data() + std::size_t(k) * hw;
            const double* sc_ = v_sc.v.data() + std::size_t(k) * hw;
            for (int i = 0; i < hw; ++i) oc[i] += wr * rc[i] + ws * sc_[i];
        }
    }
    return out;
}

Tensor scam_forward(const ScamStage& stage, const Tensor& v_red, const Tensor& v_sub,
                    ScamCache* cache) {
    const auto sc = channel_attention(stage, v_sub, cache);
    Tensor v_sc = enhance(v_sub, sc);
    Tensor out = fuse_hybrid(stage, v_red, v_sc);
    if (cache) {
        cache->v_sub = v_sub;
        cache->v_red = v_red;
        cache->v_sc = std::move(v_sc);
    }
    return out;
}

Tensor fuse_backward(const ScamStage& stage, const Tensor& dout, const Tensor& v_red,
                     const Tensor& v_sc, double* gbuf) {
    const int hw = dout.h * dout.w;
    const nets::Store& s = *stage.store;
    Tensor d_vsc(stage.c, dout.h, dout.w);
    for (int o = 0; o < stage.c; ++o) {
        const double* doc = dout.v.data() + std::size_t(o) * hw;
        const double* row = s.at(stage.fuse_w) + std::size_t(o) * 2 * stage.c;
        if (gbuf) {
            double dsum = 0.0;
            for (int i = 0; i < hw; ++i) dsum += doc[i];
            gbuf[stage.fuse_b + o] += dsum;
            double* grow = gbuf + stage.fuse_w + std::size_t(o) * 2 * stage.c;
            for (int k = 0; k < stage.c; ++k) {
                const double* rc = v_red.v.data() + std::size_t(k) * hw;
                const double* sc_ = v_sc.v.data() + std::size_t(k) * hw;
                double ar = 0.0, as = 0.0;
                for (int i = 0; i < hw; ++i) {
                    ar += doc[i] * rc[i];
                    as += doc[i] * sc_[i];
                }
                grow[k] += ar;
                grow[stage.c + k] += as;
            }
        }
        for (int k = 0; k < stage.c; ++k) {
            const double ws = row[stage.c + k];
            double* dk = d_vsc.v.data() + std::size_t(k) * hw;
            for (int i = 0; i < hw; ++i) dk[i] += ws * doc[i];
        }
    }
    return d_vsc;
}

Tensor scam_backward(const ScamStage& stage, const Tensor& dout,
                     const ScamCache& cache, double* gbuf) {
    const int hw = cache.h * cache.w;
    const Tensor d_vsc = fuse_backward(stage, dout, cache.v_red, cache.v_sc, gbuf);

    // enhance backward: v_sc = (1+sc_c) * v_sub
    Tensor d_vsub(stage.c, cache.h, cache.w);
    std::vector<double> d_sc(stage.c, 0.0);
    for (int c = 0; c < stage.c; ++c) {
        const double g = 1.0 + cache.sc[c];
        const double* dc = d_vsc.v.data() + std::size_t(c) * hw;
        const double* vs = cache.v_sub.v.data() + std::size_t(c) * hw;
        double* dv = d_vsub.v.data() + std::size_t(c) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) {
            dv[i] = g * dc[i];
            acc += dc[i] * vs[i];
        }
        d_sc[c] = acc;
    }

    // attention backward through the shared bottleneck and both pools
    std::vector<double> d_u(stage.c);
    for (int c = 0; c < stage.c; ++c)
        d_u[c] = d_sc[c] * cache.sc[c] * (1.0 - cache.sc[c]);
    const auto d_mean = bottleneck_backward(stage, d_u, cache.mean_pool,
                                            cache.h_mean_in, cache.h_mean_out, gbuf);
    const auto d_max = bottleneck_backward(stage, d_u, cache.max_pool,
                                           cache.h_max_in, cache.h_max_out, gbuf);
    for (int c = 0; c < stage.c; ++c) {
        double* dv = d_vsub.v.data() + std::size_t(c) * hw;
        const double dm = d_mean[c] / hw;
        for (int i = 0; i < hw; ++i) dv[i] += dm;
        dv[cache.max_idx[c]] += d_max[c];
    }
    return d_vsub;
}

}  // namespace mislead::scam
