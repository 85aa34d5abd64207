#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "snm/correspondence.hpp"
#include "snm/error.hpp"
#include "snm/metrics.hpp"
#include "snm/ppca.hpp"
#include "snm/rng.hpp"

namespace snm {

// Average ranks (1-based); tied values share the mean of their rank range.
inline std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
        i = j + 1;
    }
    return ranks;
}

// Mann-Whitney AUC: probability that a random positive outranks a random
// negative, ties counted half. Computed from average ranks.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size())
        fail(errc::dim_mismatch, "auc: scores and labels differ in length");
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!std::isfinite(scores[i])) fail(errc::non_finite, "auc: non-finite score");
        (labels[i] != 0 ? n_pos : n_neg) += 1;
    }
    if (n_pos == 0 || n_neg == 0)
        fail(errc::single_class, "auc: need at least one positive and one negative label");

    const std::vector<double> ranks = average_ranks(scores);
    double rank_sum_pos = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] != 0) rank_sum_pos += ranks[i];
    const double n_pos_d = static_cast<double>(n_pos);
    const double u = rank_sum_pos - n_pos_d * (n_pos_d + 1.0) / 2.0;
    return u / (n_pos_d * static_cast<double>(n_neg));
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        fail(errc::dim_mismatch, "pearson: input lengths differ");
    const std::size_t n = x.size();
    if (n < 3) fail(errc::too_few_shapes, "pearson: need at least 3 samples");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            fail(errc::non_finite, "pearson: non-finite input");
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0)
        fail(errc::zero_variance, "pearson: zero variance input");
    return sxy / std::sqrt(sxx * syy);
}

// Pearson correlation of average ranks.
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size())
        fail(errc::dim_mismatch, "spearman: input lengths differ");
    if (x.size() < 3) fail(errc::too_few_shapes, "spearman: need at least 3 samples");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
            fail(errc::non_finite, "spearman: non-finite input");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    try {
        return pearson(rx, ry);
    } catch (const error& e) {
        if (e.code() == errc::zero_variance)
            fail(errc::zero_variance, "spearman: zero variance after ranking");
        throw;
    }
}

struct CvEntry {
    int repeat = 0;
    int fold = 0;
    double auc = 0.0;
};

struct CvReport {
    std::vector<CvEntry> entries;  // repeats x folds, repeat-major
    double mean_auc = 0.0;
    int repeats = 0;
    int folds = 0;
    std::uint64_t seed = 0;
};

// Repeated k-fold protocol: per repeat, shuffle the normals and split into
// folds; per fold, fit on the other folds, score the held-out normals
// (label 0) together with all pathological shapes (label 1), and take the
// AUC. Deterministic given the seed.
inline CvReport repeated_kfold_cv(const CorrespondenceSet& normals,
                                  const CorrespondenceSet& pathologicals,
                                  int repeats, int folds, std::uint64_t seed,
                                  const DimSpec& target,
                                  ScoreVariant variant = ScoreVariant::full) {
    normals.validate();
    pathologicals.validate();
    if (repeats < 1 || folds < 2)
        fail(errc::spec_invalid, "cv: need repeats >= 1 and folds >= 2");
    if (pathologicals.n() == 0)
        fail(errc::too_few_shapes, "cv: no pathological shapes");
    if (normals.p() != pathologicals.p())
        fail(errc::dim_mismatch, "cv: normal and pathological dimensions differ");
    const int n = static_cast<int>(normals.n());
    if (n < folds) fail(errc::too_few_shapes, "cv: fewer normals than folds");

    Rng rng(seed);
    CvReport report;
    report.repeats = repeats;
    report.folds = folds;
    report.seed = seed;

    for (int rep = 0; rep < repeats; ++rep) {
        const std::vector<int> perm = rng.permutation(n);
        const int base = n / folds;
        const int extra = n % folds;
        int offset = 0;
        for (int f = 0; f < folds; ++f) {
            const int size = base + (f < extra ? 1 : 0);
            std::vector<int> heldout(perm.begin() + offset, perm.begin() + offset + size);
            std::vector<int> train;
            train.reserve(static_cast<std::size_t>(n - size));
            train.insert(train.end(), perm.begin(), perm.begin() + offset);
            train.insert(train.end(), perm.begin() + offset + size, perm.end());
            offset += size;
            if (static_cast<int>(train.size()) < 3)
                fail(errc::too_few_shapes, "cv: training split smaller than 3 shapes");

            const PpcaModel model = fit_ppca(normals.subset(train), target);
            std::vector<double> scores;
            std::vector<int> labels;
            scores.reserve(heldout.size() + static_cast<std::size_t>(pathologicals.n()));
            for (int idx : heldout) {
                scores.push_back(score_value(
                    snm_score(model, normals.data.row(idx).transpose()), variant));
                labels.push_back(0);
            }
            for (Eigen::Index i = 0; i < pathologicals.n(); ++i) {
                scores.push_back(score_value(
                    snm_score(model, pathologicals.data.row(i).transpose()), variant));
                labels.push_back(1);
            }
            report.entries.push_back({rep, f, auc(scores, labels)});
        }
    }
    double sum = 0.0;
    for (const CvEntry& e : report.entries) sum += e.auc;
    report.mean_auc = sum / static_cast<double>(report.entries.size());
    return report;
}

}  // namespace snm
