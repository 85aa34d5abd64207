#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "snm/error.hpp"
#include "snm/evaluation.hpp"

namespace snm {

struct Rating {
    int subject = 0;
    int rater = 0;
    int category = 0;  // 1..K
};

// Sparse rater x subject ordinal ratings on a K-point scale.
struct RatingsTable {
    std::vector<std::string> subjects;
    std::vector<std::string> raters;
    std::vector<Rating> ratings;
    int categories = 5;

    void validate() const {
        if (categories < 2) fail(errc::rating_range, "need at least 2 categories");
        std::vector<int> per_subject(subjects.size(), 0);
        std::vector<int> per_rater(raters.size(), 0);
        std::unordered_set<long long> seen;
        for (const Rating& r : ratings) {
            if (r.subject < 0 || r.subject >= static_cast<int>(subjects.size()) ||
                r.rater < 0 || r.rater >= static_cast<int>(raters.size()))
                fail(errc::id_mismatch, "rating references unknown subject or rater");
            if (r.category < 1 || r.category > categories)
                fail(errc::rating_range,
                     "rating " + std::to_string(r.category) + " outside [1, " +
                         std::to_string(categories) + "]");
            const long long key =
                static_cast<long long>(r.subject) * static_cast<long long>(raters.size()) +
                r.rater;
            if (!seen.insert(key).second)
                fail(errc::id_mismatch,
                     "duplicate rating for subject '" + subjects[r.subject] +
                         "' by rater '" + raters[r.rater] + "'");
            ++per_subject[r.subject];
            ++per_rater[r.rater];
        }
        // A lone rating per subject is permitted so single-rater panels can be
        // aggregated (the result is then only defined up to that rater's own
        // monotone scale).
        for (std::size_t j = 0; j < subjects.size(); ++j)
            if (per_subject[j] < 1)
                fail(errc::too_few_shapes,
                     "subject '" + subjects[j] + "' has no ratings");
    }
};

// Graded-response fit: one continuous severity per subject, one
// discrimination and K-1 ordered thresholds per rater.
struct LatentTraitFit {
    Eigen::VectorXd severity;        // per subject, standardized
    Eigen::VectorXd discrimination;  // per rater, > 0
    Eigen::MatrixXd thresholds;      // raters x (K-1), strictly increasing rows
    double log_likelihood = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<int> degenerate_raters;   // raters that used a single category
    std::vector<double> ll_trace;         // per-sweep log-likelihood
};

namespace grm {

inline double logistic(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

constexpr double kProbFloor = 1e-12;

// log P(category k) plus first/second derivatives with respect to one scalar.
// The caller supplies, per cumulative side, the response value and the
// derivative of its logit argument with respect to the scalar of interest.
struct TermDerivs {
    double ll = 0.0;
    double g = 0.0;
    double h = 0.0;
};

inline TermDerivs category_derivs(double upper_a, double darg_a, double upper_b,
                                  double darg_b) {
    // P = A - B where A = P(rating >= k), B = P(rating >= k+1); for the edge
    // categories A = 1 or B = 0, which zeroes the matching derivative terms.
    const double prob = std::max(upper_a - upper_b, kProbFloor);
    const double pa = upper_a * (1.0 - upper_a) * darg_a;
    const double pb = upper_b * (1.0 - upper_b) * darg_b;
    const double paa = upper_a * (1.0 - upper_a) * (1.0 - 2.0 * upper_a) * darg_a * darg_a;
    const double pbb = upper_b * (1.0 - upper_b) * (1.0 - 2.0 * upper_b) * darg_b * darg_b;
    TermDerivs out;
    out.ll = std::log(prob);
    const double dp = pa - pb;
    const double dpp = paa - pbb;
    out.g = dp / prob;
    out.h = dpp / prob - out.g * out.g;
    return out;
}

}  // namespace grm

namespace detail {

struct GrmProblem {
    int n_subjects = 0;
    int n_raters = 0;
    int categories = 0;
    std::vector<std::vector<std::pair<int, int>>> by_subject;  // (rater, k)
    std::vector<std::vector<std::pair<int, int>>> by_rater;    // (subject, k)
};

inline double category_logprob(double theta, double a,
                               const Eigen::VectorXd& b, int k, int K) {
    const double upper_a = k == 1 ? 1.0 : grm::logistic(a * (theta - b(k - 2)));
    const double upper_b = k == K ? 0.0 : grm::logistic(a * (theta - b(k - 1)));
    return std::log(std::max(upper_a - upper_b, grm::kProbFloor));
}

// Generic safeguarded Newton step on a 1-d block likelihood: Newton when the
// curvature is usable, a fixed uphill step otherwise, then halving until the
// block likelihood does not decrease.
template <typename Value, typename Derivs>
double ascend_scalar(double x, double lo, double hi, Value value, Derivs derivs) {
    const auto [g, h] = derivs(x);
    double step;
    if (h < -1e-12)
        step = -g / h;
    else
        step = (g > 0.0 ? 0.5 : -0.5);
    step = std::clamp(step, -2.0, 2.0);
    if (step == 0.0) return x;
    const double f0 = value(x);
    double candidate = std::clamp(x + step, lo, hi);
    for (int halving = 0; halving < 30; ++halving) {
        if (value(candidate) >= f0 - 1e-13) return candidate;
        candidate = x + 0.5 * (candidate - x);
    }
    return x;
}

}  // namespace detail

// Joint maximum-likelihood fit of the graded-response model by alternating
// coordinate ascent: rater blocks given severities, then severities given
// raters, with the severities re-standardized each sweep (the standardization
// is absorbed into the rater parameters, so the likelihood is unchanged).
inline LatentTraitFit fit_latent_trait(const RatingsTable& table, int max_iter = 500,
                                       double tol = 1e-7) {
    table.validate();
    const int S = static_cast<int>(table.subjects.size());
    const int R = static_cast<int>(table.raters.size());
    const int K = table.categories;

    detail::GrmProblem prob;
    prob.n_subjects = S;
    prob.n_raters = R;
    prob.categories = K;
    prob.by_subject.resize(S);
    prob.by_rater.resize(R);
    for (const Rating& r : table.ratings) {
        prob.by_subject[r.subject].emplace_back(r.rater, r.category);
        prob.by_rater[r.rater].emplace_back(r.subject, r.category);
    }
    for (int r = 0; r < R; ++r)
        if (static_cast<int>(prob.by_rater[r].size()) < 3)
            fail(errc::too_few_shapes,
                 "rater '" + table.raters[r] + "' rated fewer than 3 subjects");

    LatentTraitFit fit;
    fit.severity.resize(S);
    fit.discrimination = Eigen::VectorXd::Ones(R);
    fit.thresholds.resize(R, K - 1);

    // Severity init: standardized mean rating per subject.
    for (int j = 0; j < S; ++j) {
        double sum = 0.0;
        for (const auto& [r, k] : prob.by_subject[j]) sum += k;
        fit.severity(j) = sum / static_cast<double>(prob.by_subject[j].size());
    }
    {
        const double mean = fit.severity.mean();
        const double sd = std::sqrt(
            (fit.severity.array() - mean).square().sum() / static_cast<double>(S));
        if (sd > 1e-12)
            fit.severity = (fit.severity.array() - mean) / sd;
        else  // all subjects tied; deterministic spread as a starting point
            for (int j = 0; j < S; ++j)
                fit.severity(j) =
                    (static_cast<double>(j) / std::max(S - 1, 1) - 0.5) * 2.0;
    }

    // Threshold init from each rater's marginal category frequencies.
    constexpr double kGap = 1e-3;
    std::vector<bool> degenerate(R, false);
    for (int r = 0; r < R; ++r) {
        const auto& terms = prob.by_rater[r];
        bool single = true;
        for (const auto& [j, k] : terms)
            if (k != terms.front().second) single = false;
        if (single) {
            degenerate[r] = true;
            fit.degenerate_raters.push_back(r);
            fit.discrimination(r) = 1.0;  // floor
            for (int t = 0; t < K - 1; ++t)
                fit.thresholds(r, t) = static_cast<double>(t) + 1.0 - 0.5 * K;
            continue;
        }
        double prev = -1e9;
        for (int t = 0; t < K - 1; ++t) {
            int at_least = 0;
            for (const auto& [j, k] : terms)
                if (k >= t + 2) ++at_least;
            const double frac = std::clamp(
                static_cast<double>(at_least) / static_cast<double>(terms.size()),
                0.02, 0.98);
            double b = -std::log(frac / (1.0 - frac));
            b = std::max(b, prev + kGap);
            fit.thresholds(r, t) = b;
            prev = b;
        }
    }

    constexpr double kThetaLo = -10.0, kThetaHi = 10.0;
    constexpr double kDiscLo = 0.02, kDiscHi = 200.0;
    constexpr double kThreshLim = 50.0;

    const auto total_ll = [&]() {
        double ll = 0.0;
        for (int r = 0; r < R; ++r) {
            const double a = fit.discrimination(r);
            const Eigen::VectorXd b = fit.thresholds.row(r).transpose();
            for (const auto& [j, k] : prob.by_rater[r])
                ll += detail::category_logprob(fit.severity(j), a, b, k, K);
        }
        return ll;
    };

    double ll_prev = total_ll();
    fit.ll_trace.push_back(ll_prev);

    for (int sweep = 0; sweep < max_iter; ++sweep) {
        // Rater blocks.
        for (int r = 0; r < R; ++r) {
            if (degenerate[r]) continue;
            const auto& terms = prob.by_rater[r];
            Eigen::VectorXd b = fit.thresholds.row(r).transpose();

            // Discrimination.
            const auto a_value = [&](double a) {
                double ll = 0.0;
                for (const auto& [j, k] : terms)
                    ll += detail::category_logprob(fit.severity(j), a, b, k, K);
                return ll;
            };
            const auto a_derivs = [&](double a) -> std::pair<double, double> {
                double g = 0.0, h = 0.0;
                for (const auto& [j, k] : terms) {
                    const double theta = fit.severity(j);
                    const double ta = k == 1 ? 0.0 : theta - b(k - 2);
                    const double tb = k == K ? 0.0 : theta - b(k - 1);
                    const double ua = k == 1 ? 1.0 : grm::logistic(a * ta);
                    const double ub = k == K ? 0.0 : grm::logistic(a * tb);
                    const auto d = grm::category_derivs(ua, ta, ub, tb);
                    g += d.g;
                    h += d.h;
                }
                return {g, h};
            };
            fit.discrimination(r) = detail::ascend_scalar(
                fit.discrimination(r), kDiscLo, kDiscHi, a_value, a_derivs);

            // Thresholds, in order, inside their ordering box.
            const double a = fit.discrimination(r);
            for (int t = 0; t < K - 1; ++t) {
                const double lo = t == 0 ? -kThreshLim : b(t - 1) + kGap;
                const double hi = t == K - 2 ? kThreshLim : b(t + 1) - kGap;
                // Only categories t+1 (upper side) and t+2 (lower side) move.
                const auto b_value = [&](double bt) {
                    double ll = 0.0;
                    for (const auto& [j, k] : terms) {
                        if (k != t + 1 && k != t + 2) continue;
                        const double theta = fit.severity(j);
                        const double ua = k == 1 ? 1.0
                                                 : grm::logistic(a * (theta - (k - 2 == t ? bt : b(k - 2))));
                        const double ub = k == K ? 0.0
                                                 : grm::logistic(a * (theta - (k - 1 == t ? bt : b(k - 1))));
                        ll += std::log(std::max(ua - ub, grm::kProbFloor));
                    }
                    return ll;
                };
                const auto b_derivs = [&](double bt) -> std::pair<double, double> {
                    double g = 0.0, h = 0.0;
                    for (const auto& [j, k] : terms) {
                        if (k != t + 1 && k != t + 2) continue;
                        const double theta = fit.severity(j);
                        const double ua = k == 1 ? 1.0
                                                 : grm::logistic(a * (theta - (k - 2 == t ? bt : b(k - 2))));
                        const double ub = k == K ? 0.0
                                                 : grm::logistic(a * (theta - (k - 1 == t ? bt : b(k - 1))));
                        const double da = (k >= 2 && k - 2 == t) ? -a : 0.0;
                        const double db = (k <= K - 1 && k - 1 == t) ? -a : 0.0;
                        const auto d = grm::category_derivs(ua, da, ub, db);
                        g += d.g;
                        h += d.h;
                    }
                    return {g, h};
                };
                b(t) = detail::ascend_scalar(b(t), lo, hi, b_value, b_derivs);
            }
            fit.thresholds.row(r) = b.transpose();
        }

        // Subject blocks.
        for (int j = 0; j < S; ++j) {
            const auto& terms = prob.by_subject[j];
            const auto t_value = [&](double theta) {
                double ll = 0.0;
                for (const auto& [r, k] : terms)
                    ll += detail::category_logprob(theta, fit.discrimination(r),
                                                   fit.thresholds.row(r).transpose(), k, K);
                return ll;
            };
            const auto t_derivs = [&](double theta) -> std::pair<double, double> {
                double g = 0.0, h = 0.0;
                for (const auto& [r, k] : terms) {
                    const double a = fit.discrimination(r);
                    const double ua =
                        k == 1 ? 1.0 : grm::logistic(a * (theta - fit.thresholds(r, k - 2)));
                    const double ub =
                        k == K ? 0.0 : grm::logistic(a * (theta - fit.thresholds(r, k - 1)));
                    const auto d =
                        grm::category_derivs(ua, k == 1 ? 0.0 : a, ub, k == K ? 0.0 : a);
                    g += d.g;
                    h += d.h;
                }
                return {g, h};
            };
            fit.severity(j) =
                detail::ascend_scalar(fit.severity(j), kThetaLo, kThetaHi, t_value, t_derivs);
        }

        const double ll = total_ll();
        fit.ll_trace.push_back(ll);
        fit.iterations = sweep + 1;
        if (ll - ll_prev < tol) {
            fit.converged = true;
            ll_prev = ll;
            break;
        }
        ll_prev = ll;
    }

    // Identifiability: standardize severities and absorb the affine map into
    // every rater's parameters, which leaves all logits (and the likelihood)
    // unchanged. Done once at return: rescaling inside the loop feeds the
    // severity spread back into the bounded discriminations and lets
    // separable panels ratchet toward the a -> infinity degeneracy.
    const double mean = fit.severity.mean();
    const double sd = std::sqrt(
        (fit.severity.array() - mean).square().sum() / static_cast<double>(S));
    if (sd > 1e-8) {
        fit.severity = (fit.severity.array() - mean) / sd;
        fit.discrimination *= sd;
        fit.thresholds = (fit.thresholds.array() - mean) / sd;
    }
    fit.log_likelihood = total_ll();
    return fit;
}

struct PanelAucSummary {
    std::vector<double> individual;  // one AUC per rater, table order
    double individual_mean = 0.0;
    double individual_sd = 0.0;  // sample standard deviation
    double aggregated = 0.0;
};

// AUC of each rater's raw ratings against diagnosis (over the subjects they
// rated) and of the fitted severities against diagnosis (over all subjects).
inline PanelAucSummary panel_auc_summary(const LatentTraitFit& fit,
                                         const RatingsTable& table,
                                         std::span<const int> diagnosis) {
    if (diagnosis.size() != table.subjects.size())
        fail(errc::id_mismatch, "diagnosis must cover every subject");
    const int R = static_cast<int>(table.raters.size());
    std::vector<std::vector<std::pair<int, int>>> by_rater(R);
    for (const Rating& r : table.ratings)
        by_rater[r.rater].emplace_back(r.subject, r.category);

    PanelAucSummary out;
    for (int r = 0; r < R; ++r) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& [j, k] : by_rater[r]) {
            scores.push_back(static_cast<double>(k));
            labels.push_back(diagnosis[static_cast<std::size_t>(j)]);
        }
        out.individual.push_back(auc(scores, labels));
    }
    const double n = static_cast<double>(out.individual.size());
    for (double v : out.individual) out.individual_mean += v;
    out.individual_mean /= n;
    if (out.individual.size() > 1) {
        double ss = 0.0;
        for (double v : out.individual) ss += (v - out.individual_mean) * (v - out.individual_mean);
        out.individual_sd = std::sqrt(ss / (n - 1.0));
    }

    std::vector<double> sev(fit.severity.data(), fit.severity.data() + fit.severity.size());
    std::vector<int> labels(diagnosis.begin(), diagnosis.end());
    out.aggregated = auc(sev, labels);
    return out;
}

}  // namespace snm
