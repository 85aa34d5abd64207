#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>
#include <Eigen/SVD>

#include "snm/correspondence.hpp"
#include "snm/error.hpp"
#include "snm/rng.hpp"

namespace snm {

enum class DeformationMode { in_span, null_space, random_direction };

inline const char* deformation_mode_name(DeformationMode m) {
    switch (m) {
        case DeformationMode::in_span:          return "in-span";
        case DeformationMode::null_space:       return "null-space";
        case DeformationMode::random_direction: return "random";
    }
    return "?";
}

// Ground-truth description of a synthetic population drawn from the linear
// Gaussian generative model C = W L + mu + eps.
struct GeneratorSpec {
    std::uint64_t seed = 0;
    int particles = 0;  // m; ambient dimension is p = 3m
    int d_true = 0;
    int n_normal = 0;
    int n_pathological = 0;
    double sigma_true = 0.0;
    std::vector<double> latent_scales;  // d_true per-direction standard deviations
    DeformationMode deformation_mode = DeformationMode::null_space;
    double deformation_amplitude = 0.0;  // in multiples of sigma_true

    void validate() const {
        if (particles < 1) fail(errc::spec_invalid, "particles must be >= 1");
        if (n_normal < 1 || n_pathological < 1)
            fail(errc::spec_invalid, "population counts must be >= 1");
        if (d_true < 1) fail(errc::spec_invalid, "d_true must be >= 1");
        if (d_true > n_normal - 2)
            fail(errc::spec_invalid, "d_true must be <= n_normal - 2");
        if (d_true > 3 * particles)
            fail(errc::spec_invalid, "d_true exceeds the ambient dimension");
        if (!(sigma_true > 0.0)) fail(errc::spec_invalid, "sigma_true must be > 0");
        if (static_cast<int>(latent_scales.size()) != d_true)
            fail(errc::spec_invalid, "latent_scales must have d_true entries");
        for (double s : latent_scales)
            if (!(s > 0.0)) fail(errc::spec_invalid, "latent_scales must be positive");
        if (deformation_amplitude < 0.0)
            fail(errc::spec_invalid, "deformation amplitude must be >= 0");
    }
};

struct GeneratorTruth {
    Eigen::VectorXd mu;                     // p
    Eigen::MatrixXd basis;                  // p x d_true, orthonormal
    Eigen::VectorXd scales;                 // d_true
    double sigma = 0.0;
    Eigen::VectorXd deformation_direction;  // p, unit norm
};

struct SyntheticPopulation {
    CorrespondenceSet normals;
    CorrespondenceSet pathologicals;
    GeneratorTruth truth;
};

namespace detail {

// Smooth seeded base shape: a closed 3-space curve built from a few low
// harmonics, so emitted deviation maps read as coherent geometry rather than
// noise.
inline Eigen::VectorXd base_shape(int particles, Rng& rng) {
    constexpr int harmonics = 3;
    double amp[3][harmonics];
    double phase[3][harmonics];
    for (int axis = 0; axis < 3; ++axis)
        for (int h = 0; h < harmonics; ++h) {
            amp[axis][h] = rng.gaussian() * 10.0 / static_cast<double>(h + 1);
            phase[axis][h] = rng.uniform01() * 2.0 * std::numbers::pi;
        }
    Eigen::VectorXd mu(3 * particles);
    for (int k = 0; k < particles; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(particles);
        for (int axis = 0; axis < 3; ++axis) {
            double v = 0.0;
            for (int h = 0; h < harmonics; ++h)
                v += amp[axis][h] *
                     std::sin(2.0 * std::numbers::pi * (h + 1) * t + phase[axis][h]);
            mu(3 * k + axis) = v;
        }
    }
    return mu;
}

inline Eigen::VectorXd gaussian_vector(Eigen::Index n, Rng& rng) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = rng.gaussian();
    return v;
}

// Orthonormal p x d basis from a seeded Gaussian draw, sign-fixed through the
// QR factor so the result is reproducible.
inline Eigen::MatrixXd random_orthonormal(Eigen::Index p, int d, Rng& rng) {
    Eigen::MatrixXd g(p, d);
    for (int j = 0; j < d; ++j) g.col(j) = gaussian_vector(p, rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p, d);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(d).triangularView<Eigen::Upper>();
    for (int j = 0; j < d; ++j)
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace detail

// Draw a normal population per the generative model and a pathological
// population offset by amplitude * sigma along one unit deformation
// direction. Bit-identical output for a given spec.
inline SyntheticPopulation generate_population(const GeneratorSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const Eigen::Index p = 3 * static_cast<Eigen::Index>(spec.particles);

    GeneratorTruth truth;
    truth.mu = detail::base_shape(spec.particles, rng);
    truth.basis = detail::random_orthonormal(p, spec.d_true, rng);
    truth.scales = Eigen::Map<const Eigen::VectorXd>(spec.latent_scales.data(),
                                                     spec.d_true);
    truth.sigma = spec.sigma_true;

    switch (spec.deformation_mode) {
        case DeformationMode::in_span: {
            Eigen::VectorXd g = detail::gaussian_vector(spec.d_true, rng);
            truth.deformation_direction = truth.basis * (g / g.norm());
            break;
        }
        case DeformationMode::null_space: {
            Eigen::VectorXd g = detail::gaussian_vector(p, rng);
            g -= truth.basis * (truth.basis.transpose() * g);
            truth.deformation_direction = g / g.norm();
            break;
        }
        case DeformationMode::random_direction: {
            Eigen::VectorXd g = detail::gaussian_vector(p, rng);
            truth.deformation_direction = g / g.norm();
            break;
        }
    }

    const auto make_id = [](const char* prefix, int i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s_%04d", prefix, i);
        return std::string(buf);
    };
    const auto draw_normal_row = [&](Eigen::VectorXd& row) {
        const Eigen::VectorXd latent = detail::gaussian_vector(spec.d_true, rng);
        row = truth.mu + truth.basis * latent.cwiseProduct(truth.scales) +
              spec.sigma_true * detail::gaussian_vector(p, rng);
    };

    SyntheticPopulation pop;
    pop.normals.data.resize(spec.n_normal, p);
    for (int i = 0; i < spec.n_normal; ++i) {
        Eigen::VectorXd row;
        draw_normal_row(row);
        pop.normals.data.row(i) = row;
        pop.normals.ids.push_back(make_id("normal", i));
    }
    const Eigen::VectorXd offset = spec.deformation_amplitude * spec.sigma_true *
                                   truth.deformation_direction;
    pop.pathologicals.data.resize(spec.n_pathological, p);
    for (int i = 0; i < spec.n_pathological; ++i) {
        Eigen::VectorXd row;
        draw_normal_row(row);
        pop.pathologicals.data.row(i) = row + offset;
        pop.pathologicals.ids.push_back(make_id("path", i));
    }
    pop.truth = std::move(truth);
    return pop;
}

// Largest principal angle between the column spans of two orthonormal bases.
inline double subspace_angle(const Eigen::MatrixXd& basis_a,
                             const Eigen::MatrixXd& basis_b) {
    if (basis_a.rows() != basis_b.rows() || basis_a.cols() != basis_b.cols())
        fail(errc::dim_mismatch, "subspace_angle: basis shapes differ");
    if (basis_a.cols() == 0) fail(errc::dim_mismatch, "subspace_angle: empty basis");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis_a.transpose() * basis_b);
    const double smallest = svd.singularValues().minCoeff();
    return std::acos(std::clamp(smallest, -1.0, 1.0));
}

}  // namespace snm
