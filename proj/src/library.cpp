#include "mislead/library.hpp"

#include <cmath>

namespace mislead::redlib {

std::map<data::DemographicKey, double> compute_selection_bias(
    const std::map<data::DemographicKey, double>& proportions) {
    if (proportions.empty()) throw DataError("selection bias needs at least one subgroup");
    double denom = 0.0;
    for (const auto& [key, p] : proportions) {
        if (!(p > 0.0))
            throw ZeroProportion("proportion for " + format_key(key) +
                                 " must be > 0, got " + std::to_string(p));
        denom += 1.0 / p;
    }
    std::map<data::DemographicKey, double> bias;
    for (const auto& [key, p] : proportions) bias[key] = (1.0 / p) / denom;
    return bias;
}

RedundantLibrary build_library(const data::DatasetManifest& manifest, data::Split split,
                               const data::DatasetManifest* extra) {
    RedundantLibrary lib;
    lib.manifest = &manifest;
    for (const auto& e : manifest.entries)
        if (e.split == split && e.label == data::Label::real)
            lib.buckets[e.subgroup].push_back(&e);
    if (extra)
        for (const auto& e : extra->entries)
            if (e.label == data::Label::real) lib.buckets[e.subgroup].push_back(&e);

    std::size_t total = 0;
    std::map<data::DemographicKey, double> counts;
    for (const auto& [key, bucket] : lib.buckets)
        if (!bucket.empty()) {
            counts[key] = double(bucket.size());
            total += bucket.size();
        }
    if (counts.size() < 2)
        throw InsufficientSubgroups(
            "redundant library needs real samples from at least two subgroups, got " +
            std::to_string(counts.size()));
    for (auto& [key, c] : counts) c /= double(total);
    lib.bias = compute_selection_bias(counts);
    return lib;
}

const data::ManifestEntry& select_redundant(const RedundantLibrary& lib,
                                            data::DemographicKey query_subgroup,
                                            rng::Stream& stream, bool biased) {
    std::vector<const std::vector<const data::ManifestEntry*>*> eligible;
    std::vector<double> weights;
    for (const auto& [key, bucket] : lib.buckets) {
        if (key == query_subgroup || bucket.empty()) continue;
        eligible.push_back(&bucket);
        weights.push_back(biased ? lib.bias.at(key) : 1.0);
    }
    if (eligible.empty())
        throw NoEligibleSubgroup("no redundant samples outside subgroup " +
                                 format_key(query_subgroup));
    const std::size_t b = stream.categorical(weights);
    const auto& bucket = *eligible[b];
    return *bucket[stream.uniform_u64(0, bucket.size() - 1)];
}

}  // namespace mislead::redlib
