#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "snm/correspondence.hpp"
#include "snm/error.hpp"

namespace snm {

// Residual variance is floored at this fraction of the leading eigenvalue so
// the null-space distance stays defined when the discarded spectrum vanishes.
inline constexpr double kSigma2FloorScale = 1e-12;

// Relative threshold below which an eigenvalue is treated as numerically zero.
inline constexpr double kEigenvalueDegeneracyScale = 1e-12;

struct DimSpec {
    bool by_ratio = true;
    int dim = 0;          // used when !by_ratio
    double ratio = 0.95;  // used when by_ratio

    static DimSpec explicit_dim(int d) { return DimSpec{false, d, 0.0}; }
    static DimSpec explained_variance(double alpha) { return DimSpec{true, 0, alpha}; }
};

// Gaussian model of normal shape variation: mean, d retained eigenpairs of
// the empirical covariance, and isotropic residual variance. Immutable once
// fitted; safe to share across concurrent scorers.
struct PpcaModel {
    Eigen::Index p = 0;
    int n_train = 0;
    int d = 0;                    // 0 is allowed only for scoring-time views
    Eigen::VectorXd mu;           // p
    Eigen::VectorXd eigenvalues;  // d, descending, > 0
    Eigen::MatrixXd basis;        // p x d, orthonormal columns
    double sigma2 = 0.0;
    Eigen::VectorXd spectrum;     // min(n_train-1, p) empirical eigenvalues, descending
    double explained_ratio = 0.0;
    std::string fingerprint;      // hash of training ids in training order

    void validate(bool allow_zero_dim = false) const {
        if (p <= 0 || mu.size() != p)
            fail(errc::dim_mismatch, "model mean length does not match p");
        if (n_train < 3) fail(errc::too_few_shapes, "model requires n_train >= 3");
        const int min_d = allow_zero_dim ? 0 : 1;
        if (d < min_d || d > n_train - 2)
            fail(errc::dim_out_of_range,
                 "latent dimension " + std::to_string(d) + " outside [" +
                     std::to_string(min_d) + ", " + std::to_string(n_train - 2) + "]");
        if (eigenvalues.size() != d || basis.rows() != p || basis.cols() != d)
            fail(errc::dim_mismatch, "eigenpair storage does not match d");
        if (spectrum.size() == 0) fail(errc::degenerate_spectrum, "empty spectrum");
        if (!(sigma2 >= kSigma2FloorScale * spectrum(0)))
            fail(errc::degenerate_spectrum, "sigma2 below its floor");
        for (int i = 0; i < d; ++i) {
            if (!(eigenvalues(i) > sigma2 - 1e-12))
                fail(errc::degenerate_spectrum,
                     "retained eigenvalue " + std::to_string(i) +
                         " not above residual variance");
            if (i > 0 && !(eigenvalues(i) <= eigenvalues(i - 1) + 1e-12))
                fail(errc::degenerate_spectrum, "eigenvalues not descending");
        }
        if (d > 0) {
            const Eigen::MatrixXd gram = basis.transpose() * basis;
            const double defect =
                (gram - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();
            if (defect > 1e-8)
                fail(errc::degenerate_spectrum, "basis columns not orthonormal");
        }
    }

    // Scoring-time view with the latent dimension reduced to new_d (0 allowed:
    // the isotropic baseline). sigma2 is re-derived from the stored spectrum.
    PpcaModel reduced(int new_d) const {
        if (new_d < 0 || new_d > d)
            fail(errc::dim_out_of_range,
                 "cannot expand model from d=" + std::to_string(d) + " to " +
                     std::to_string(new_d));
        PpcaModel out = *this;
        out.d = new_d;
        out.eigenvalues = eigenvalues.head(new_d);
        out.basis = basis.leftCols(new_d);
        const double total = spectrum.sum();
        const double kept = out.eigenvalues.sum();
        out.explained_ratio = total > 0.0 ? kept / total : 0.0;
        double tail = total - spectrum.head(new_d).sum();
        out.sigma2 = std::max(tail / (n_train - 1 - new_d),
                              kSigma2FloorScale * spectrum(0));
        return out;
    }
};

// Mean and row-centered deviations of a correspondence population.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> center(const CorrespondenceSet& set) {
    set.validate();
    if (set.n() < 3)
        fail(errc::too_few_shapes,
             "need at least 3 shapes, got " + std::to_string(set.n()));
    Eigen::VectorXd mu = set.data.colwise().mean();
    Eigen::MatrixXd deviations = set.data.rowwise() - mu.transpose();
    return {std::move(mu), std::move(deviations)};
}

struct GramEigen {
    Eigen::VectorXd eigenvalues;   // r = min(n-1, p), descending, clamped at 0
    Eigen::MatrixXd eigenvectors;  // p x r, orthonormal
};

namespace detail {

// Largest-magnitude entry positive, ties broken by lowest index.
inline void apply_sign_convention(Eigen::Ref<Eigen::MatrixXd> vectors) {
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            const double mag = std::abs(vectors(i, j));
            if (mag > best) {
                best = mag;
                arg = i;
            }
        }
        if (vectors(arg, j) < 0.0) vectors.col(j) = -vectors.col(j);
    }
}

// Deterministic orthonormal completion: orthogonalized standard-basis vector
// with the largest residual (first such index on ties).
inline Eigen::VectorXd complete_direction(const Eigen::MatrixXd& basis,
                                          Eigen::Index filled) {
    const Eigen::Index p = basis.rows();
    Eigen::VectorXd best_vec;
    double best_norm = -1.0;
    for (Eigen::Index j = 0; j < p; ++j) {
        Eigen::VectorXd cand = Eigen::VectorXd::Unit(p, j);
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < filled; ++k)
                cand -= basis.col(k).dot(cand) * basis.col(k);
        const double nrm = cand.norm();
        if (nrm > 0.5) return cand / nrm;
        if (nrm > best_norm) {
            best_norm = nrm;
            best_vec = cand;
        }
    }
    return best_vec / best_norm;
}

}  // namespace detail

// Leading eigenpairs of the empirical covariance S = Y^T Y / (n-1), computed
// from the n x n Gram matrix Y Y^T / (n-1) so the p x p matrix is never
// formed. Input rows must already be centered.
inline GramEigen gram_eigendecomposition(const Eigen::MatrixXd& deviations) {
    const Eigen::Index n = deviations.rows();
    const Eigen::Index p = deviations.cols();
    if (n < 3)
        fail(errc::too_few_shapes,
             "need at least 3 shapes, got " + std::to_string(n));
    const double denom = static_cast<double>(n - 1);
    const Eigen::MatrixXd gram = deviations * deviations.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success)
        fail(errc::degenerate_spectrum, "Gram eigendecomposition failed");

    const Eigen::Index r = std::min(n - 1, p);
    GramEigen out;
    out.eigenvalues.resize(r);
    out.eigenvectors.resize(p, r);

    // Eigen returns ascending order; re-index to descending.
    Eigen::VectorXd raw(r);
    for (Eigen::Index k = 0; k < r; ++k) {
        raw(k) = solver.eigenvalues()(n - 1 - k);
        out.eigenvalues(k) = std::max(raw(k), 0.0);
    }
    if (out.eigenvalues(0) <= 1e-14 * static_cast<double>(p))
        fail(errc::degenerate_spectrum, "all shapes are identical (zero spectrum)");

    const double degenerate = kEigenvalueDegeneracyScale * out.eigenvalues(0);
    Eigen::Index filled = 0;
    for (Eigen::Index k = 0; k < r; ++k) {
        if (raw(k) <= degenerate) break;  // descending: the rest are degenerate too
        Eigen::VectorXd u = deviations.transpose() * solver.eigenvectors().col(n - 1 - k);
        u /= std::sqrt(denom * raw(k));
        // One re-orthogonalization pass keeps round-off from accumulating in
        // near-degenerate tails.
        for (Eigen::Index j = 0; j < filled; ++j)
            u -= out.eigenvectors.col(j).dot(u) * out.eigenvectors.col(j);
        u.normalize();
        out.eigenvectors.col(filled++) = u;
    }
    for (; filled < r; ++filled)
        out.eigenvectors.col(filled) =
            detail::complete_direction(out.eigenvectors, filled);

    detail::apply_sign_convention(out.eigenvectors);
    return out;
}

struct DimChoice {
    int d = 0;
    double achieved_ratio = 0.0;
    bool clamped = false;  // ratio target required more than n-2 components
};

// Latent dimension from an explicit d or an explained-variance target. Ratio
// targets pick the smallest d whose leading eigenvalues reach the target, then
// clamp to [1, n-2].
inline DimChoice select_dim(const Eigen::VectorXd& spectrum, int n_train,
                            const DimSpec& target) {
    const auto r = static_cast<int>(spectrum.size());
    if (r == 0) fail(errc::degenerate_spectrum, "empty spectrum");
    for (int i = 0; i < r; ++i) {
        if (spectrum(i) < 0.0)
            fail(errc::degenerate_spectrum, "negative eigenvalue in spectrum");
        if (i > 0 && spectrum(i) > spectrum(i - 1) + 1e-12 * spectrum(0))
            fail(errc::degenerate_spectrum, "spectrum not descending");
    }
    const double total = spectrum.sum();
    if (total <= 0.0) fail(errc::degenerate_spectrum, "zero total variance");
    const int d_cap = std::min(n_train - 2, r);

    DimChoice choice;
    if (target.by_ratio) {
        if (!(target.ratio > 0.0) || target.ratio > 1.0)
            fail(errc::dim_out_of_range, "explained-variance ratio must be in (0, 1]");
        double cum = 0.0;
        int d = r;
        for (int i = 0; i < r; ++i) {
            cum += spectrum(i);
            if (cum + 1e-12 * total >= target.ratio * total) {
                d = i + 1;
                break;
            }
        }
        choice.clamped = d > d_cap;
        choice.d = std::clamp(d, 1, d_cap);
    } else {
        if (target.dim < 1 || target.dim > n_train - 2)
            fail(errc::dim_out_of_range,
                 "dimension " + std::to_string(target.dim) + " outside [1, " +
                     std::to_string(n_train - 2) + "]");
        if (target.dim > r)
            fail(errc::dim_out_of_range,
                 "dimension " + std::to_string(target.dim) + " exceeds the " +
                     std::to_string(r) + " available eigenpairs");
        choice.d = target.dim;
    }
    choice.achieved_ratio = spectrum.head(choice.d).sum() / total;
    return choice;
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string fingerprint_ids(const std::vector<std::string>& ids) {
    std::string joined;
    for (const auto& id : ids) {
        joined += id;
        joined += '\n';
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(joined)));
    return std::string(buf);
}

// Fit the PPCA model of normal variation: center, dual eigendecomposition,
// dimension selection, and the residual-variance estimate
// sigma2 = sum of discarded empirical eigenvalues / (n - 1 - d).
inline PpcaModel fit_ppca(const CorrespondenceSet& set, const DimSpec& target) {
    auto [mu, deviations] = center(set);
    GramEigen eig = gram_eigendecomposition(deviations);
    const auto n = static_cast<int>(set.n());
    DimChoice choice = select_dim(eig.eigenvalues, n, target);

    const double degenerate = kEigenvalueDegeneracyScale * eig.eigenvalues(0);
    if (eig.eigenvalues(choice.d - 1) <= degenerate)
        fail(errc::degenerate_spectrum,
             "requested dimension " + std::to_string(choice.d) +
                 " reaches a numerically zero eigenvalue (data rank is lower)");

    PpcaModel model;
    model.p = set.p();
    model.n_train = n;
    model.d = choice.d;
    model.mu = std::move(mu);
    model.eigenvalues = eig.eigenvalues.head(choice.d);
    model.basis = eig.eigenvectors.leftCols(choice.d);
    model.spectrum = eig.eigenvalues;
    model.explained_ratio = choice.achieved_ratio;
    const double tail = eig.eigenvalues.tail(eig.eigenvalues.size() - choice.d).sum();
    model.sigma2 = std::max(tail / (n - 1 - choice.d),
                            kSigma2FloorScale * eig.eigenvalues(0));
    model.fingerprint = fingerprint_ids(set.ids);
    model.validate();
    return model;
}

// Latent coordinates U_d^T (c - mu).
inline Eigen::VectorXd project_latent(const PpcaModel& model, const Eigen::VectorXd& c) {
    if (c.size() != model.p)
        fail(errc::dim_mismatch,
             "query length " + std::to_string(c.size()) + " does not match p=" +
                 std::to_string(model.p));
    if (!c.allFinite()) fail(errc::non_finite, "query contains NaN or Inf");
    return model.basis.transpose() * (c - model.mu);
}

}  // namespace snm
