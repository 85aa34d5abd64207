#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "snm/correspondence.hpp"
#include "snm/error.hpp"
#include "snm/ppca.hpp"

namespace snm {

// The Shape Normality Metric and its subspace decomposition for one query.
//
// full          whole-space Mahalanobis distance under the fitted model
// latent_paper  latent-space distance with (Lambda_d + sigma2 I)^-1 weights
// latent_exact  latent-space distance with Lambda_d^-1 weights; this is the
//               variant that tiles: full^2 = latent_exact^2 + null_space^2
// null_space    residual distance outside the latent span, scaled by sigma
struct SeverityScore {
    double full = 0.0;
    double latent_paper = 0.0;
    double latent_exact = 0.0;
    double null_space = 0.0;
    int d_used = 0;
    double sigma2_used = 0.0;
};

enum class ScoreVariant { full, latent_paper, latent_exact, null_space };

inline double score_value(const SeverityScore& s, ScoreVariant v) {
    switch (v) {
        case ScoreVariant::full:         return s.full;
        case ScoreVariant::latent_paper: return s.latent_paper;
        case ScoreVariant::latent_exact: return s.latent_exact;
        case ScoreVariant::null_space:   return s.null_space;
    }
    return s.full;
}

namespace detail {

inline void check_query(const PpcaModel& model, const Eigen::VectorXd& c,
                        const std::string& label) {
    if (c.size() != model.p)
        fail(errc::dim_mismatch,
             label + ": query length " + std::to_string(c.size()) +
                 " does not match model p=" + std::to_string(model.p));
    if (!c.allFinite()) fail(errc::non_finite, label + ": query contains NaN or Inf");
}

}  // namespace detail

// Mahalanobis severity of a query shape. Everything is computed from the d
// latent projections and the residual norm; no p x p matrix is formed.
inline SeverityScore snm_score(const PpcaModel& model, const Eigen::VectorXd& c) {
    detail::check_query(model, c, "snm_score");

    const Eigen::VectorXd y = c - model.mu;
    const Eigen::VectorXd z = model.basis.transpose() * y;
    const double residual2 = std::max(y.squaredNorm() - z.squaredNorm(), 0.0);

    double latent_exact2 = 0.0;
    double latent_paper2 = 0.0;
    for (int i = 0; i < model.d; ++i) {
        const double zi2 = z(i) * z(i);
        latent_exact2 += zi2 / model.eigenvalues(i);
        latent_paper2 += zi2 / (model.eigenvalues(i) + model.sigma2);
    }
    const double null2 = residual2 / model.sigma2;

    SeverityScore s;
    s.latent_exact = std::sqrt(latent_exact2);
    s.latent_paper = std::sqrt(latent_paper2);
    s.null_space = std::sqrt(null2);
    s.full = std::sqrt(latent_exact2 + null2);
    s.d_used = model.d;
    s.sigma2_used = model.sigma2;
    return s;
}

// Per-particle deviation vectors: raw (input units) and whitened
// (dimensionless), with their L2 norms. The whitened norms tile the squared
// severity: sum_k whitened_norm_k^2 = full^2.
struct DeviationMap {
    Eigen::MatrixXd raw;       // m x 3
    Eigen::MatrixXd whitened;  // m x 3
    Eigen::VectorXd raw_norm;
    Eigen::VectorXd whitened_norm;
};

inline DeviationMap whiten(const PpcaModel& model, const Eigen::VectorXd& c) {
    detail::check_query(model, c, "whiten");

    const Eigen::VectorXd y = c - model.mu;
    const Eigen::VectorXd z = model.basis.transpose() * y;
    const double inv_sigma = 1.0 / std::sqrt(model.sigma2);

    // w = U Lambda^{-1/2} z + sigma^{-1} (y - U z), assembled as one basis
    // product: w = sigma^{-1} y + U (Lambda^{-1/2} - sigma^{-1} I) z.
    Eigen::VectorXd coeff(model.d);
    for (int i = 0; i < model.d; ++i)
        coeff(i) = z(i) * (1.0 / std::sqrt(model.eigenvalues(i)) - inv_sigma);
    Eigen::VectorXd w = inv_sigma * y;
    if (model.d > 0) w += model.basis * coeff;

    const Eigen::Index m = model.p / 3;
    DeviationMap map;
    map.raw = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
        y.data(), m, 3);
    map.whitened =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>(
            w.data(), m, 3);
    map.raw_norm = map.raw.rowwise().norm();
    map.whitened_norm = map.whitened.rowwise().norm();
    return map;
}

// Severity of every shape in a set, in input order.
inline std::vector<SeverityScore> batch_score(const PpcaModel& model,
                                              const CorrespondenceSet& set) {
    set.validate();
    if (set.p() != model.p) {
        const std::string first = set.ids.empty() ? "<empty>" : set.ids.front();
        fail(errc::dim_mismatch,
             "shape '" + first + "': dimension " + std::to_string(set.p()) +
                 " does not match model p=" + std::to_string(model.p));
    }
    std::vector<SeverityScore> out;
    out.reserve(static_cast<std::size_t>(set.n()));
    for (Eigen::Index i = 0; i < set.n(); ++i)
        out.push_back(snm_score(model, set.data.row(i).transpose()));
    return out;
}

}  // namespace snm
