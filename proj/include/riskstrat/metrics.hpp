#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "riskstrat/common.hpp"

namespace riskstrat {

/// Fold index per row. Each class is shuffled separately and dealt round
/// robin; the second class starts where the first left off so fold sizes
/// also differ by at most one.
inline std::vector<int> stratified_folds(std::span<const int> labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("need at least 2 folds");
    std::vector<std::size_t> cls[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
        cls[labels[i]].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (cls[c].size() < k) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(cls[c].size()) +
                            " rows, fewer than " + std::to_string(k) + " folds");
        }
    }
    std::vector<int> fold(labels.size(), -1);
    std::size_t offset = 0;
    for (int c = 0; c < 2; ++c) {
        Rng rng(derive_seed(seed, 0x666f6c64ULL, static_cast<std::uint64_t>(c)));
        rng.shuffle(cls[c]);
        for (std::size_t i = 0; i < cls[c].size(); ++i) fold[cls[c][i]] = static_cast<int>((offset + i) % k);
        offset = (offset + cls[c].size()) % k;
    }
    return fold;
}

struct RocPoint {
    double threshold;  // score >= threshold is called positive
    double tpr;
    double fpr;
};

struct RocCurve {
    std::vector<RocPoint> points;  // (0,0) first, (1,1) last
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
    std::size_t pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::isnan(scores[i])) throw DataError("score " + std::to_string(i) + " is NaN");
        if (labels[i] != 0 && labels[i] != 1) throw DataError("labels must be 0 or 1");
        pos += static_cast<std::size_t>(labels[i]);
    }
    if (pos == 0 || pos == labels.size()) throw DataError("ROC needs both classes");
}

}  // namespace detail

inline RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    RocCurve roc;
    for (int v : labels) (v ? roc.positives : roc.negatives) += 1;
    const double P = static_cast<double>(roc.positives), N = static_cast<double>(roc.negatives);
    roc.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        roc.points.push_back({s, static_cast<double>(tp) / P, static_cast<double>(fp) / N});
    }
    return roc;
}

/// Trapezoid area under the ROC curve. Accumulated in integer counts so it
/// equals the midrank pairwise probability P(s+ > s-) + P(tie)/2.
inline double auc_from_roc(const RocCurve& roc) {
    const double P = static_cast<double>(roc.positives), N = static_cast<double>(roc.negatives);
    double twice_area = 0.0;  // in units of one positive x one negative
    for (std::size_t i = 1; i < roc.points.size(); ++i) {
        const double tp0 = std::round(roc.points[i - 1].tpr * P), tp1 = std::round(roc.points[i].tpr * P);
        const double fp0 = std::round(roc.points[i - 1].fpr * N), fp1 = std::round(roc.points[i].fpr * N);
        twice_area += (fp1 - fp0) * (tp0 + tp1);
    }
    return twice_area / (2.0 * P * N);
}

inline double auc(std::span<const double> scores, std::span<const int> labels) {
    return auc_from_roc(roc_curve(scores, labels));
}

/// Mann-Whitney form via midranks; O(n log n).
inline double auc_mann_whitney(std::span<const double> scores, std::span<const int> labels) {
    detail::check_scores(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]]) {
                rank_sum += midrank;
                ++pos;
            }
        }
        i = j;
    }
    const double P = static_cast<double>(pos), N = static_cast<double>(n - pos);
    return (rank_sum - P * (P + 1.0) / 2.0) / (P * N);
}

}  // namespace riskstrat
