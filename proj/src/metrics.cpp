#include "tdlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>

#include "tdlm/errors.hpp"

namespace tdlm {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) {
        throw ValidationError(std::string(what) + ": " + std::to_string(a) + " predictions for " +
                              std::to_string(b) + " labels");
    }
    if (a == 0) throw ValidationError(std::string(what) + ": empty input");
}

} // namespace

ConfusionCounts confusion(std::span<const int> predictions, std::span<const int> labels)
{
    check_lengths(predictions.size(), labels.size(), "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool p = predictions[i] == 1, y = labels[i] == 1;
        if (p && y) ++c.tp;
        else if (p) ++c.fp;
        else if (y) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels)
{
    check_lengths(predictions.size(), labels.size(), "accuracy");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double f1_micro(std::span<const int> predictions, std::span<const int> labels)
{
    check_lengths(predictions.size(), labels.size(), "f1_micro");
    std::set<int> classes(labels.begin(), labels.end());
    classes.insert(predictions.begin(), predictions.end());
    std::size_t tp = 0, fp = 0, fn = 0;
    for (int c : classes) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            const bool p = predictions[i] == c, y = labels[i] == c;
            tp += p && y;
            fp += p && !y;
            fn += !p && y;
        }
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

double matthews_corr(std::span<const int> predictions, std::span<const int> labels)
{
    for (int v : predictions)
        if (v != 0 && v != 1) throw ValidationError("matthews_corr: predictions must be binary");
    for (int v : labels)
        if (v != 0 && v != 1) throw ValidationError("matthews_corr: labels must be binary");
    const ConfusionCounts c = confusion(predictions, labels);
    const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
    const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
    const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (denom == 0.0) return 0.0;
    return (tp * tn - fp * fn) / std::sqrt(denom);
}

std::vector<double> fractional_ranks(std::span<const double> x)
{
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(x.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y)
{
    if (x.size() != y.size()) throw ValidationError("spearman_rho: lengths differ");
    if (x.size() < 2) throw ValidationError("spearman_rho: need at least two points");
    const auto rx = fractional_ranks(x), ry = fractional_ranks(y);
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
    const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace tdlm
