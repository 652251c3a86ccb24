#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace tdlm {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
};

/// Binary confusion counts with class 1 as positive.
ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> labels);

double accuracy(std::span<const int> predictions, std::span<const int> labels);
/// Micro-averaged F1 over all classes (pooled TP/FP/FN).
double f1_micro(std::span<const int> predictions, std::span<const int> labels);
/// Zero when any marginal is empty.
double matthews_corr(std::span<const int> predictions, std::span<const int> labels);

/// Fractional ranks (1-based, ties share their average rank).
std::vector<double> fractional_ranks(std::span<const double> x);
/// Pearson correlation of fractional ranks; nullopt when either input is constant.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

} // namespace tdlm
