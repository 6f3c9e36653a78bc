#include "mislead/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mislead::losses {

void validate(const LossWeights& w) {
    for (const double v : {w.alpha, w.beta, w.margin}) {
        if (!std::isfinite(v) || v < 0.0)
            throw ConfigError("loss weights must be finite and non-negative");
    }
}

double binary_cls_loss(double score, int label) {
    if (label != 0 && label != 1) throw DataError("label must be 0 or 1");
    const double s = std::clamp(score, kScoreClamp, 1.0 - kScoreClamp);
    return label ? -std::log(s) : -std::log(1.0 - s);
}

double binary_cls_loss(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        throw DimMismatch("need one label per score");
    if (scores.empty()) throw DataError("empty score batch");
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i)
        acc += binary_cls_loss(scores[i], labels[i]);
    return acc / double(scores.size());
}

double misleading_cls_loss(double score_from_injected_final, bool is_fake) {
    if (!is_fake)
        throw CalledOnRealSample("misleading loss is defined on fake samples only");
    return binary_cls_loss(score_from_injected_final, 1);
}

double triplet_con_loss(std::span<const double> anchor,
                        std::span<const double> positive,
                        std::span<const double> negative, double m) {
    if (anchor.size() != positive.size() || anchor.size() != negative.size())
        throw DimMismatch("triplet vectors must share one dimension");
    double dp = 0.0, dn = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        const double ep = anchor[i] - positive[i];
        const double en = anchor[i] - negative[i];
        dp += ep * ep;
        dn += en * en;
    }
    return std::max(m + std::sqrt(dp) - std::sqrt(dn), 0.0);
}

double total_misleading_loss(double l_cls, double l_con, double l_final,
                             const LossWeights& w) {
    for (const double v : {l_cls, l_con, l_final}) {
        if (!std::isfinite(v))
            throw NonFiniteComponent("loss component is not finite: " +
                                     std::to_string(v));
    }
    return l_cls + w.alpha * l_con + w.beta * l_final;
}

}  // namespace mislead::losses
