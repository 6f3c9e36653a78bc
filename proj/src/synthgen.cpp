#include "mislead/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <system_error>

#include "mislead/image.hpp"
#include "mislead/rng.hpp"

namespace mislead::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stable per-subgroup appearance parameters, indexed by position in
// data::all_keys() so "M-W" looks the same no matter which subgroups a config
// activates. Hue/luma shifts are what raw-pixel extractors see; the oriented
// texture is what survives high-pass residual filtering.
struct SubgroupLook {
    double hue_deg;
    double luma;
    double tex_angle;  // radians
    double tex_freq;   // cycles per pixel
};

SubgroupLook subgroup_look(data::DemographicKey key, double strength) {
    const auto keys = data::all_keys();
    const auto it = std::find(keys.begin(), keys.end(), key);
    const int g = int(it - keys.begin());
    SubgroupLook look;
    look.hue_deg = strength * (g * 45.0);
    look.luma = strength * ((g / 7.0) - 0.5) * 0.20;
    look.tex_angle = g * (std::numbers::pi / 8.0);
    look.tex_freq = 0.09 + 0.015 * (g % 4);
    return look;
}

double smooth01(double t) {
    t = std::clamp(t, 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Soft ellipse mask: 1 well inside, 0 outside, ~2 px smooth edge.
double ellipse_mask(double x, double y, double cx, double cy, double ax, double ay) {
    const double dx = (x - cx) / ax, dy = (y - cy) / ay;
    const double d = std::sqrt(dx * dx + dy * dy);
    return smooth01((1.05 - d) / 0.12);
}

Tensor render_face(const SynthConfig& cfg, data::DemographicKey key, rng::Stream& st) {
    const int S = cfg.image_size;
    const SubgroupLook look = subgroup_look(key, cfg.attribute_signal_strength);
    Tensor im(3, S, S);

    // background: smooth diagonal gradient between two random colors
    double bg0[3], bg1[3];
    for (int c = 0; c < 3; ++c) bg0[c] = st.uniform(0.25, 0.75);
    for (int c = 0; c < 3; ++c) bg1[c] = st.uniform(0.25, 0.75);
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double t = double(x + y) / double(2 * (S - 1));
            for (int c = 0; c < 3; ++c)
                im.at(c, y, x) = bg0[c] + t * (bg1[c] - bg0[c]);
        }

    // subgroup skin tone: fixed base rotated in hue, shifted in luma
    const auto hm = img::hue_rotation_matrix(look.hue_deg);
    const double base[3] = {0.78, 0.62, 0.50};
    double skin[3];
    for (int c = 0; c < 3; ++c)
        skin[c] = hm[c * 3 + 0] * base[0] + hm[c * 3 + 1] * base[1] +
                  hm[c * 3 + 2] * base[2] + look.luma;

    const double cx = S / 2.0 + st.uniform(-2.0, 2.0);
    const double cy = S / 2.0 + st.uniform(-2.0, 2.0);
    const double ax = S * (0.30 + st.uniform(-0.02, 0.02));
    const double ay = S * (0.38 + st.uniform(-0.02, 0.02));

    const double tex_phase = st.uniform(0.0, kTwoPi);
    const double tex_amp = 0.08 * cfg.attribute_signal_strength;
    const double ca = std::cos(look.tex_angle), sa = std::sin(look.tex_angle);

    // identity blobs: smooth per-image color variation inside the face
    struct Blob {
        double bx, by, sigma, amp[3];
    };
    Blob blobs[3];
    for (Blob& b : blobs) {
        b.bx = cx + st.uniform(-0.6, 0.6) * ax;
        b.by = cy + st.uniform(-0.6, 0.6) * ay;
        b.sigma = S * st.uniform(0.08, 0.18);
        for (int c = 0; c < 3; ++c) b.amp[c] = st.uniform(-0.06, 0.06);
    }

    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double m = ellipse_mask(x, y, cx, cy, ax, ay);
            if (m <= 0.0) continue;
            const double tex =
                tex_amp * std::sin(kTwoPi * look.tex_freq * (x * ca + y * sa) + tex_phase);
            double add[3] = {tex, tex, tex};
            for (const Blob& b : blobs) {
                const double dx = x - b.bx, dy = y - b.by;
                const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
                for (int c = 0; c < 3; ++c) add[c] += b.amp[c] * g;
            }
            for (int c = 0; c < 3; ++c) {
                const double face = skin[c] + add[c];
                im.at(c, y, x) = im.at(c, y, x) * (1.0 - m) + face * m;
            }
        }

    // soft facial features: two eyes and a mouth
    const double eye_y = cy - 0.25 * ay;
    for (const double ex : {cx - 0.38 * ax, cx + 0.38 * ax})
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double m = ellipse_mask(x, y, ex, eye_y, 0.16 * ax, 0.10 * ay);
                if (m <= 0.0) continue;
                for (int c = 0; c < 3; ++c) im.at(c, y, x) -= 0.25 * m;
            }
    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double m =
                ellipse_mask(x, y, cx, cy + 0.45 * ay, 0.30 * ax, 0.06 * ay);
            if (m <= 0.0) continue;
            im.at(0, y, x) += 0.05 * m;
            im.at(1, y, x) -= 0.08 * m;
            im.at(2, y, x) -= 0.08 * m;
        }

    // sensor noise floor
    for (double& v : im.v) v += st.normal(0.0, 0.01);
    img::clamp01(im);
    return im;
}

std::string split_prefix(data::Split s) { return data::to_string(s); }

}  // namespace

Tensor plant_fingerprint(const Tensor& image, double strength, std::uint64_t seed) {
    if (strength < 0.0) throw NegativeStrength("fingerprint strength must be >= 0");
    Tensor out = image;
    if (strength == 0.0) return out;
    rng::Stream st(seed);
    const double phase_x = st.uniform(0.0, kTwoPi);
    const double phase_y = st.uniform(0.0, kTwoPi);
    const int y0 = image.h / 4, y1 = 3 * image.h / 4;
    const int x0 = image.w / 4, x1 = 3 * image.w / 4;
    for (int y = y0; y < y1; ++y) {
        const double sy = std::sin(kTwoPi * y / kFingerprintPeriod + phase_y);
        for (int x = x0; x < x1; ++x) {
            const double p =
                strength * sy * std::sin(kTwoPi * x / kFingerprintPeriod + phase_x);
            for (int c = 0; c < out.c; ++c)
                out.at(c, y, x) = std::clamp(out.at(c, y, x) + p, 0.0, 1.0);
        }
    }
    return out;
}

data::DatasetManifest generate_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir) {
    if (cfg.image_size < 16)
        throw DegenerateConfig("image_size must be at least 16, got " +
                               std::to_string(cfg.image_size));
    if (cfg.fingerprint_strength < 0.0)
        throw NegativeStrength("fingerprint_strength must be >= 0");
    if (cfg.attribute_signal_strength < 0.0)
        throw DegenerateConfig("attribute_signal_strength must be >= 0");
    if (cfg.fake_fraction < 0.0 || cfg.fake_fraction > 1.0)
        throw DegenerateConfig("fake_fraction must be in [0,1]");

    std::vector<data::DemographicKey> groups;
    std::vector<double> weights;
    for (const auto& [key, p] : cfg.subgroup_proportions) {
        if (p < 0.0) throw DegenerateConfig("negative proportion for " + format_key(key));
        if (p > 0.0) {
            groups.push_back(key);
            weights.push_back(p);
        }
    }
    if (groups.size() < 2)
        throw DegenerateConfig("need at least two subgroups with positive proportion");

    std::vector<double> fake_rate(groups.size(), cfg.fake_fraction);
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const auto it = cfg.fake_fraction_per_subgroup.find(groups[i]);
        if (it != cfg.fake_fraction_per_subgroup.end()) {
            if (it->second < 0.0 || it->second > 1.0)
                throw DegenerateConfig("fake fraction for " + format_key(groups[i]) +
                                       " must be in [0,1]");
            fake_rate[i] = it->second;
        }
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir / "images", ec);
    if (ec || !std::filesystem::is_directory(out_dir / "images"))
        throw UnwritableDir("cannot create output directory " + out_dir.string());

    const std::uint64_t fp_seed = rng::derive(cfg.seed, 0xF19E0001u);

    data::DatasetManifest manifest;
    manifest.root = out_dir;
    for (const auto split :
         {data::Split::train, data::Split::val, data::Split::test}) {
        const auto nit = cfg.n_per_split.find(split);
        const int n = nit == cfg.n_per_split.end() ? 0 : nit->second;
        if (n < 0) throw DegenerateConfig("negative sample count for split");
        for (int i = 0; i < n; ++i) {
            rng::Stream st(rng::derive(cfg.seed, std::uint64_t(split) + 1, i));
            const std::size_t g = st.categorical(weights);
            const bool fake = st.bernoulli(fake_rate[g]);

            Tensor im = render_face(cfg, groups[g], st);
            if (fake) im = plant_fingerprint(im, cfg.fingerprint_strength, fp_seed);

            char name[32];
            std::snprintf(name, sizeof(name), "%s-%06d", split_prefix(split).c_str(), i);
            data::ManifestEntry e;
            e.id = name;
            e.path = std::string("images/") + name + ".png";
            e.label = fake ? data::Label::fake : data::Label::real;
            e.subgroup = groups[g];
            if (fake) e.method = data::Method::SYNTH;
            e.split = split;
            img::save_png(out_dir / e.path, im);
            manifest.entries.push_back(std::move(e));
        }
    }
    data::write_manifest(manifest, out_dir / "manifest.csv");
    return manifest;
}

}  // namespace mislead::synth
