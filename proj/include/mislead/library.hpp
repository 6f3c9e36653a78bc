#pragma once

#include <map>
#include <vector>

#include "mislead/data.hpp"
#include "mislead/rng.hpp"

namespace mislead::redlib {

struct ZeroProportion : ConfigError {
    using ConfigError::ConfigError;
};
struct InsufficientSubgroups : DataError {
    using DataError::DataError;
};
struct NoEligibleSubgroup : DataError {
    using DataError::DataError;
};

// Inverse-proportion selection bias: bias(g) = (1/D_g) / sum_i (1/D_i).
// Input values are unnormalized positive weights (scale does not matter).
std::map<data::DemographicKey, double> compute_selection_bias(
    const std::map<data::DemographicKey, double>& proportions);

// Real samples of one split bucketed by subgroup, with selection bias derived
// from the bucket sizes. Entries point into the backing manifest.
struct RedundantLibrary {
    const data::DatasetManifest* manifest = nullptr;
    std::map<data::DemographicKey, std::vector<const data::ManifestEntry*>> buckets;
    std::map<data::DemographicKey, double> bias;
};

// extra, when given, contributes its real samples (any split) on top of the
// primary manifest's chosen split.
RedundantLibrary build_library(const data::DatasetManifest& manifest, data::Split split,
                               const data::DatasetManifest* extra = nullptr);

// Draws a bucket != query_subgroup (bias-weighted over eligible buckets when
// biased, uniform otherwise), then a sample uniformly within it.
const data::ManifestEntry& select_redundant(const RedundantLibrary& lib,
                                            data::DemographicKey query_subgroup,
                                            rng::Stream& stream, bool biased = true);

}  // namespace mislead::redlib
