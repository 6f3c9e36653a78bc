#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mislead/data.hpp"
#include "mislead/losses.hpp"
#include "mislead/metrics.hpp"
#include "mislead/model.hpp"

namespace mislead::train {

struct EmptySplit : DataError {
    using DataError::DataError;
};
struct SingleClassSplit : DataError {
    using DataError::DataError;
};
struct NonFiniteLoss : NumericError {
    using NumericError::NumericError;
};
struct CheckpointError : DataError {
    using DataError::DataError;
};

struct TrainConfig {
    model::ModelConfig model;
    double lr = 1e-3;
    int batch_size = 16;
    int epochs_pretrain = 5;
    int epochs_misleading = 15;
    losses::LossWeights weights{};
    double lambda_srm = srm::kDefaultLambda;
    bool use_bias_sampling = true;  // off: partners drawn uniformly instead
    bool use_contrastive = true;    // off: l_con logged as 0, no gradient
    bool paired_reals = false;      // also inject redundant features for reals
    bool augment = true;            // train-time augmentation pipeline

    bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& cfg);

// Structured-text round trip used by checkpoints and the command line.
// Missing keys keep their defaults; unknown keys are a hard error.
std::string config_to_json_text(const TrainConfig& cfg);
TrainConfig config_from_json_text(const std::string& text);

inline constexpr const char* kStageInit = "init";
inline constexpr const char* kStagePretrain = "pretrain";
inline constexpr const char* kStageMisleading = "misleading";

// Parameters live in three arrays mirroring the model's stores. The RNG state
// is the (seed, epoch) pair: every epoch draws from streams derived from them,
// so nothing else is needed to reproduce a continuation.
struct Checkpoint {
    TrainConfig cfg;
    std::string stage = kStageInit;
    int epoch = 0;  // completed epochs within the stage
    std::vector<double> trainable;
    std::vector<double> frozen;  // E_red
    std::vector<double> bank;    // current filter kernels
    std::string trainable_digest, frozen_digest, bank_digest;
};

Checkpoint snapshot(const model::Model& m, const TrainConfig& cfg,
                    const std::string& stage, int epoch);

// Rebuilds the model from the stored config, then overwrites every parameter
// array with the stored values, so evaluation after restore is bit-identical.
model::Model restore(const Checkpoint& ckpt);

// Single file: one-line JSON header (config, stage, epoch, array shapes and
// digests), then the arrays as raw little-endian doubles in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct LogRow {
    long step = 0;
    int epoch = 0;  // 1-based within the stage
    double l_cls = 0.0, l_con = 0.0, l_final = 0.0, total = 0.0;
};

void write_log_csv(const std::filesystem::path& path, const std::vector<LogRow>& rows);
std::vector<LogRow> read_log_csv(const std::filesystem::path& path);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRow> log;
    // (query id, redundant partner id) in pairing order, for contract checks.
    std::vector<std::pair<std::string, std::string>> pairings;
};

// One deterministic draw per image: flip p=0.5, rotation within +-10 degrees,
// Gaussian blur sigma <= 1, brightness/contrast within +-10%, JPEG-style
// quality >= 60.
Tensor augment_image(const Tensor& image, rng::Stream& stream);

// Stage 3: D_sub and its head trained alone as a plain binary classifier.
// The kernel bank is not updated here.
TrainResult pretrain_dsub(const TrainConfig& cfg, const data::DatasetManifest& manifest);

// Stage 4: fakes are paired with redundant partners from other subgroups, the
// frozen extractor's stage features are injected, and the bank drifts by the
// plain descent rule once per batch. `start` must be a pretrain checkpoint
// with the same model config.
TrainResult misleading_train(const TrainConfig& cfg,
                             const data::DatasetManifest& manifest,
                             const Checkpoint& start);

// No injection, no augmentation. Pretrain checkpoints score with the subtle
// head; misleading checkpoints with the fused head. `hook`, when set, edits
// each loaded image in place before scoring (robustness evaluation).
using ImageHook = std::function<void(Tensor&, const data::ManifestEntry&)>;
std::vector<metrics::PredictionRecord> run_inference(
    const Checkpoint& ckpt, const data::DatasetManifest& manifest, data::Split split,
    const ImageHook& hook = {});

}  // namespace mislead::train
