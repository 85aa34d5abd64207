#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Core>

#include "snm/error.hpp"

namespace snm {

// A population of corresponded shapes. Row i of `data` is the flattened
// (x,y,z) triples of shape i's ordered particles; correspondence means the
// same column refers to the same anatomical location in every shape.
struct CorrespondenceSet {
    std::vector<std::string> ids;  // one per row
    Eigen::MatrixXd data;          // n x p, p = 3 * particles

    Eigen::Index n() const { return data.rows(); }
    Eigen::Index p() const { return data.cols(); }
    Eigen::Index particles() const { return data.cols() / 3; }

    void validate() const {
        if (static_cast<Eigen::Index>(ids.size()) != data.rows())
            fail(errc::dim_mismatch, "id count does not match shape count");
        if (data.cols() % 3 != 0)
            fail(errc::dim_mismatch,
                 "coordinate dimension " + std::to_string(data.cols()) +
                     " is not a multiple of 3");
        if (!data.allFinite())
            fail(errc::non_finite, "correspondence data contains NaN or Inf");
        std::unordered_set<std::string> seen;
        for (const auto& id : ids) {
            if (!seen.insert(id).second)
                fail(errc::id_mismatch, "duplicate shape id '" + id + "'");
        }
    }

    CorrespondenceSet subset(const std::vector<int>& rows) const {
        CorrespondenceSet out;
        out.ids.reserve(rows.size());
        out.data.resize(static_cast<Eigen::Index>(rows.size()), data.cols());
        Eigen::Index k = 0;
        for (int r : rows) {
            out.ids.push_back(ids[static_cast<std::size_t>(r)]);
            out.data.row(k++) = data.row(r);
        }
        return out;
    }
};

// Translation-only normalization: every shape is moved so its particle
// centroid sits at the origin. No rotation or scaling; inputs are assumed
// pre-corresponded. A model trained on centered shapes must score centered
// shapes.
inline CorrespondenceSet centroid_centered(const CorrespondenceSet& set) {
    set.validate();
    CorrespondenceSet out = set;
    const Eigen::Index m = set.particles();
    for (Eigen::Index i = 0; i < out.n(); ++i) {
        double centroid[3] = {0.0, 0.0, 0.0};
        for (Eigen::Index k = 0; k < m; ++k)
            for (int axis = 0; axis < 3; ++axis) centroid[axis] += out.data(i, 3 * k + axis);
        for (int axis = 0; axis < 3; ++axis) centroid[axis] /= static_cast<double>(m);
        for (Eigen::Index k = 0; k < m; ++k)
            for (int axis = 0; axis < 3; ++axis) out.data(i, 3 * k + axis) -= centroid[axis];
    }
    return out;
}

}  // namespace snm
