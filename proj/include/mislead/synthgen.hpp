#pragma once

#include <cstdint>
#include <filesystem>
#include <map>

#include "mislead/data.hpp"
#include "mislead/tensor.hpp"

namespace mislead::synth {

struct UnwritableDir : DataError {
    using DataError::DataError;
};
struct DegenerateConfig : ConfigError {
    using ConfigError::ConfigError;
};
struct NegativeStrength : ConfigError {
    using ConfigError::ConfigError;
};

// Face-proxy dataset with controllable demographic skew. Each subgroup gets a
// deterministic hue shift plus an oriented texture so subgroup identity is
// visible both to raw-pixel extractors and through high-pass residuals; fakes
// are reals with a shared high-frequency fingerprint planted in the center.
struct SynthConfig {
    int image_size = 64;
    std::map<data::Split, int> n_per_split = {
        {data::Split::train, 800}, {data::Split::val, 100}, {data::Split::test, 300}};
    std::map<data::DemographicKey, double> subgroup_proportions;
    double fake_fraction = 0.5;
    // Correlated bias mode: per-subgroup fake rates; overrides fake_fraction
    // for the listed subgroups.
    std::map<data::DemographicKey, double> fake_fraction_per_subgroup;
    double fingerprint_strength = 0.15;
    double attribute_signal_strength = 0.6;
    std::uint64_t seed = 0;
};

// Additive fixed-frequency grid confined to the central crop. The pattern
// depends only on (strength, seed); |out - in| <= strength everywhere before
// clipping, output clipped to [0,1].
Tensor plant_fingerprint(const Tensor& image, double strength, std::uint64_t seed);

// Writes PNGs plus manifest.csv under out_dir and returns the manifest.
// Deterministic: same cfg (including seed) -> byte-identical outputs.
data::DatasetManifest generate_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir);

// Period (pixels) of the planted fingerprint carrier, for band-energy checks.
constexpr int kFingerprintPeriod = 4;

}  // namespace mislead::synth
