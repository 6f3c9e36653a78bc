#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/data.hpp"
#include "mislead/metrics.hpp"
#include "mislead/tensor.hpp"
#include "mislead/trainer.hpp"

namespace mislead::perturb {

struct BadIntensity : ConfigError {
    using ConfigError::ConfigError;
};

// The eight robustness disturbances: Gaussian noise, Gaussian blur,
// block-wise noise, pixelation, color contrast, color saturation, image
// compression, affine transform.
enum class Kind { GN, GB, BWN, PX, CC, CS, IC, AT };

inline constexpr Kind kAllKinds[] = {Kind::GN, Kind::GB, Kind::BWN, Kind::PX,
                                     Kind::CC, Kind::CS, Kind::IC,  Kind::AT};

struct Disturbance {
    Kind kind = Kind::GN;
    int intensity = 0;  // 0..5, 0 = identity
    bool operator==(const Disturbance&) const = default;
};

std::string to_string(Kind k);
Kind parse_kind(const std::string& s);
// CLI spec string, e.g. "GB:3".
std::string to_string(const Disturbance& d);
Disturbance parse_disturbance(const std::string& s);

// Five-level intensity ladders, indexed by intensity - 1. These values are
// the project's published schedule; changing them invalidates recorded
// robustness numbers.
inline constexpr double kNoiseSigma[5] = {0.01, 0.025, 0.05, 0.10, 0.15};
inline constexpr double kBlurSigma[5] = {0.5, 1.0, 2.0, 3.0, 4.0};
inline constexpr int kNoiseBlockCount[5] = {2, 4, 8, 16, 32};
inline constexpr int kNoiseBlockSize = 8;
inline constexpr int kPixelateBlock[5] = {2, 4, 8, 16, 32};
inline constexpr double kContrastScale[5] = {0.85, 0.70, 0.55, 0.40, 0.25};
inline constexpr double kSaturationScale[5] = {0.8, 0.6, 0.4, 0.2, 0.0};
inline constexpr int kCompressQuality[5] = {90, 75, 60, 45, 30};
inline constexpr double kAffineRotateDeg[5] = {2.0, 4.0, 8.0, 12.0, 16.0};
inline constexpr double kAffineShiftPct[5] = {1.0, 2.0, 4.0, 6.0, 8.0};

// Intensity 0 returns the input unchanged for every kind. Only GN and BWN
// draw from the seed; everything else is a pure function of the image.
Tensor apply_disturbance(const Tensor& image, const Disturbance& d,
                         std::uint64_t seed);

// run_inference over disturbed copies of the split's images. Per-image seeds
// derive from `seed` and the sample id, so scoring order does not matter.
std::vector<metrics::PredictionRecord> disturbed_inference(
    const train::Checkpoint& ckpt, const data::DatasetManifest& manifest,
    data::Split split, const Disturbance& d, std::uint64_t seed);

// disturbed_inference followed by a subgroup report; the report's disturbance
// field records the spec string.
metrics::MetricsReport perturbed_eval(
    const train::Checkpoint& ckpt, const data::DatasetManifest& manifest,
    data::Split split, const Disturbance& d, std::uint64_t seed,
    double threshold = metrics::kDefaultThreshold,
    metrics::GroupBy group_by = metrics::GroupBy::subgroup);

}  // namespace mislead::perturb
