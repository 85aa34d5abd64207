#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace snm {

// Error codes double as the machine-parsable E_* identifiers emitted by the
// CLI diagnostic stream.
enum class errc {
    too_few_shapes,
    non_finite,
    degenerate_spectrum,
    dim_out_of_range,
    dim_mismatch,
    single_class,
    zero_variance,
    non_convergence,
    degenerate_rater,
    spec_invalid,
    id_mismatch,
    rating_range,
    particle_count_mismatch,
    no_input,
    model_version,
    parse_error,
    io_error,
    usage,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::too_few_shapes:          return "E_TOO_FEW_SHAPES";
        case errc::non_finite:              return "E_NON_FINITE";
        case errc::degenerate_spectrum:     return "E_DEGENERATE_SPECTRUM";
        case errc::dim_out_of_range:        return "E_DIM_OUT_OF_RANGE";
        case errc::dim_mismatch:            return "E_DIM_MISMATCH";
        case errc::single_class:            return "E_SINGLE_CLASS";
        case errc::zero_variance:           return "E_ZERO_VARIANCE";
        case errc::non_convergence:         return "E_NON_CONVERGENCE";
        case errc::degenerate_rater:        return "E_DEGENERATE_RATER";
        case errc::spec_invalid:            return "E_SPEC_INVALID";
        case errc::id_mismatch:             return "E_ID_MISMATCH";
        case errc::rating_range:            return "E_RATING_RANGE";
        case errc::particle_count_mismatch: return "E_PARTICLE_COUNT_MISMATCH";
        case errc::no_input:                return "E_NO_INPUT";
        case errc::model_version:           return "E_MODEL_VERSION";
        case errc::parse_error:             return "E_PARSE";
        case errc::io_error:                return "E_IO";
        case errc::usage:                   return "E_USAGE";
    }
    return "E_UNKNOWN";
}

class error : public std::runtime_error {
public:
    error(errc code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    errc code() const noexcept { return code_; }
    const char* code_name() const noexcept { return errc_name(code_); }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& message) {
    throw error(code, message);
}

}  // namespace snm
