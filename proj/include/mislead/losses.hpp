#pragma once

#include <span>

#include "mislead/common.hpp"

namespace mislead::losses {

struct CalledOnRealSample : DataError {
    using DataError::DataError;
};

struct NonFiniteComponent : NumericError {
    using NumericError::NumericError;
};

struct LossWeights {
    double alpha = 0.05;  // contrastive weight
    double beta = 1.0;    // final-classifier weight
    double margin = 1.0;  // triplet margin on normalized features

    bool operator==(const LossWeights&) const = default;
};

// Throws ConfigError unless all weights are finite and non-negative.
void validate(const LossWeights& w);

// Scores clamp to [1e-7, 1-1e-7] before the log.
inline constexpr double kScoreClamp = 1e-7;

double binary_cls_loss(double score, int label);
double binary_cls_loss(std::span<const double> scores, std::span<const int> labels);

// Fixed fake target on the injected stream; real samples are a contract
// violation, not a zero.
double misleading_cls_loss(double score_from_injected_final, bool is_fake);

// max(m + |a-p| - |a-n|, 0) with L2 norms.
double triplet_con_loss(std::span<const double> anchor,
                        std::span<const double> positive,
                        std::span<const double> negative, double m);

double total_misleading_loss(double l_cls, double l_con, double l_final,
                             const LossWeights& w);

}  // namespace mislead::losses
