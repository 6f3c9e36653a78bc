#include "mislead/perturb.hpp"

#include <algorithm>
#include <charconv>
#include <string>

#include "mislead/image.hpp"
#include "mislead/rng.hpp"

namespace mislead::perturb {

std::string to_string(Kind k) {
    switch (k) {
        case Kind::GN: return "GN";
        case Kind::GB: return "GB";
        case Kind::BWN: return "BWN";
        case Kind::PX: return "PX";
        case Kind::CC: return "CC";
        case Kind::CS: return "CS";
        case Kind::IC: return "IC";
        case Kind::AT: return "AT";
    }
    throw ConfigError("unknown disturbance kind");
}

Kind parse_kind(const std::string& s) {
    for (const Kind k : kAllKinds)
        if (to_string(k) == s) return k;
    throw ConfigError("unknown disturbance kind \"" + s + "\"");
}

std::string to_string(const Disturbance& d) {
    return to_string(d.kind) + ":" + std::to_string(d.intensity);
}

Disturbance parse_disturbance(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("disturbance spec must look like KIND:INTENSITY, got \"" +
                          s + "\"");
    Disturbance d;
    d.kind = parse_kind(s.substr(0, colon));
    const std::string tail = s.substr(colon + 1);
    int v = 0;
    const auto [p, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), v);
    if (ec != std::errc{} || p != tail.data() + tail.size())
        throw ConfigError("disturbance intensity must be an integer, got \"" + tail +
                          "\"");
    if (v < 0 || v > 5)
        throw BadIntensity("disturbance intensity must be in 0..5, got " + tail);
    d.intensity = v;
    return d;
}

namespace {

Tensor gaussian_noise(const Tensor& im, double sigma, std::uint64_t seed) {
    rng::Stream s(seed);
    Tensor out = im;
    for (double& v : out.v) v += sigma * s.normal();
    img::clamp01(out);
    return out;
}

// White-noise squares at random positions; all channels of a square are hit
// so the corruption mask is channel-aligned.
Tensor block_noise(const Tensor& im, int count, std::uint64_t seed) {
    rng::Stream s(seed);
    Tensor out = im;
    const int bs = std::min({kNoiseBlockSize, im.h, im.w});
    for (int b = 0; b < count; ++b) {
        const int top = s.uniform_int(0, im.h - bs);
        const int left = s.uniform_int(0, im.w - bs);
        for (int y = top; y < top + bs; ++y)
            for (int x = left; x < left + bs; ++x)
                for (int c = 0; c < out.c; ++c) out.at(c, y, x) = s.uniform();
    }
    return out;
}

}  // namespace

Tensor apply_disturbance(const Tensor& image, const Disturbance& d,
                         std::uint64_t seed) {
    if (d.intensity < 0 || d.intensity > 5)
        throw BadIntensity("disturbance intensity must be in 0..5, got " +
                           std::to_string(d.intensity));
    if (d.intensity == 0) return image;
    const int i = d.intensity - 1;
    switch (d.kind) {
        case Kind::GN: return gaussian_noise(image, kNoiseSigma[i], seed);
        case Kind::GB: return img::gaussian_blur(image, kBlurSigma[i]);
        case Kind::BWN: return block_noise(image, kNoiseBlockCount[i], seed);
        case Kind::PX: return img::pixelate(image, kPixelateBlock[i]);
        case Kind::CC:
            return img::adjust_brightness_contrast(image, 0.0, kContrastScale[i]);
        case Kind::CS: return img::adjust_saturation(image, kSaturationScale[i]);
        case Kind::IC: return img::jpeg_like_compress(image, kCompressQuality[i]);
        case Kind::AT:
            return img::affine(image, kAffineRotateDeg[i],
                               kAffineShiftPct[i] / 100.0 * image.w,
                               kAffineShiftPct[i] / 100.0 * image.h);
    }
    throw ConfigError("unknown disturbance kind");
}

std::vector<metrics::PredictionRecord> disturbed_inference(
    const train::Checkpoint& ckpt, const data::DatasetManifest& manifest,
    data::Split split, const Disturbance& d, std::uint64_t seed) {
    const auto hook = [&](Tensor& im, const data::ManifestEntry& e) {
        im = apply_disturbance(im, d, rng::derive(seed, rng::fnv1a64(e.id)));
    };
    return train::run_inference(ckpt, manifest, split, hook);
}

metrics::MetricsReport perturbed_eval(const train::Checkpoint& ckpt,
                                      const data::DatasetManifest& manifest,
                                      data::Split split, const Disturbance& d,
                                      std::uint64_t seed, double threshold,
                                      metrics::GroupBy group_by) {
    const auto records = disturbed_inference(ckpt, manifest, split, d, seed);
    auto report = metrics::subgroup_report(records, threshold, group_by);
    report.disturbance = to_string(d);
    return report;
}

}  // namespace mislead::perturb
