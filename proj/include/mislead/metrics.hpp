#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mislead/common.hpp"
#include "mislead/data.hpp"

namespace mislead::metrics {

struct SingleClass : DataError {
    using DataError::DataError;
};
struct NoRealSamples : DataError {
    using DataError::DataError;
};
struct FewerThanTwoGroups : DataError {
    using DataError::DataError;
};
struct NoValidGroupPair : DataError {
    using DataError::DataError;
};
struct MismatchedReports : ConfigError {
    using ConfigError::ConfigError;
};

struct PredictionRecord {
    std::string sample_id;
    double score = 0.0;
    int label = 0;  // 1 = fake
    data::DemographicKey subgroup{};
    std::optional<data::Method> method;
};

// method grouping reproduces the per-forgery sub-dataset layout: each method
// group holds that method's fakes plus every real record.
enum class GroupBy { subgroup, method };
std::string to_string(GroupBy g);
GroupBy parse_group_by(const std::string& s);

inline constexpr double kDefaultThreshold = 0.5;

// score >= threshold predicts fake.
bool predicted_fake(double score, double threshold);

// Pairwise (Mann-Whitney) AUC: P(score_fake > score_real) + P(tie)/2.
double roc_auc(std::span<const PredictionRecord> records);

double accuracy(std::span<const PredictionRecord> records, double threshold);

// Sum over groups of |FPR_g - FPR_overall|. Groups without reals are excluded
// and reported through `excluded` when non-null.
double f_fpr(std::span<const PredictionRecord> records, double threshold,
             GroupBy group_by = GroupBy::subgroup,
             std::vector<std::string>* excluded = nullptr);

enum class MagVariant { auc, acc };

// max - min of the per-group metric. Groups where the metric is undefined are
// excluded; a single computable group gives 0, none throws FewerThanTwoGroups.
double f_mag(std::span<const PredictionRecord> records, MagVariant variant,
             double threshold, GroupBy group_by = GroupBy::subgroup,
             std::vector<std::string>* excluded = nullptr);

// Largest over (predicted, true) class pairs of the max-min group gap in
// P(predict k | true k'). Groups lacking either true class are excluded; none
// valid throws NoValidGroupPair.
double f_meo(std::span<const PredictionRecord> records, double threshold,
             GroupBy group_by = GroupBy::subgroup,
             std::vector<std::string>* excluded = nullptr);

struct GroupMetrics {
    std::optional<double> auc;  // needs both classes
    double acc = 0.0;
    std::optional<double> fpr;  // needs reals
    int n_real = 0, n_fake = 0;
};

struct FairnessMetrics {
    double f_fpr = 0.0;
    double f_mag_auc = 0.0;  // reported variant
    double f_mag_acc = 0.0;  // literal-formula variant
    double f_meo = 0.0;
};

struct MetricsReport {
    GroupMetrics overall;
    std::map<std::string, GroupMetrics> per_group;
    FairnessMetrics fairness;
    std::map<std::string, std::vector<std::string>> exclusions;  // metric -> groups
    double threshold = kDefaultThreshold;
    GroupBy group_by = GroupBy::subgroup;
    // Provenance, filled by whoever ran the evaluation. Empty = unspecified;
    // disturbance uses the CLI spec string, e.g. "GB:3".
    std::string dataset;
    std::string disturbance;
};

MetricsReport subgroup_report(std::span<const PredictionRecord> records,
                              double threshold = kDefaultThreshold,
                              GroupBy group_by = GroupBy::subgroup);

struct RobustnessDelta {
    double delta_f_fpr = 0.0;
    double delta_f_mag = 0.0;  // AUC-gap variant
    double delta_auc = 0.0;
};

// perturbed minus clean; group_by and threshold must match.
RobustnessDelta robustness_delta(const MetricsReport& clean,
                                 const MetricsReport& perturbed);

std::string report_to_json(const MetricsReport& report);
// Strict inverse of report_to_json: unknown or missing keys are an error.
MetricsReport report_from_json(const std::string& text);
void write_report_json(const std::filesystem::path& path, const MetricsReport& report);
MetricsReport read_report_json(const std::filesystem::path& path);
// One row per group plus an overall row.
void write_report_csv(const std::filesystem::path& path, const MetricsReport& report);

// CSV `sample_id,score,label,gender,race,method`; scores round-trip bit-exact.
void write_predictions(const std::filesystem::path& path,
                       std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions(const std::filesystem::path& path);

}  // namespace mislead::metrics
