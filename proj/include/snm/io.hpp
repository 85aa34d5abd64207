#pragma once

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "snm/correspondence.hpp"
#include "snm/error.hpp"
#include "snm/metrics.hpp"
#include "snm/ppca.hpp"
#include "snm/rater_panel.hpp"
#include "snm/synthetic.hpp"

namespace snm {

inline constexpr int kModelFormatVersion = 1;

// All numbers leaving the toolkit go through this: 17 significant digits
// round-trip a double exactly, and identical doubles give identical bytes.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
}

namespace detail {

inline double parse_double(const std::string& token, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (end == token.c_str() || *end != '\0' || errno == ERANGE)
        fail(errc::parse_error, where + ": cannot parse number '" + token + "'");
    return v;
}

inline long parse_long(const std::string& token, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const long v = std::strtol(token.c_str(), &end, 10);
    if (end == token.c_str() || *end != '\0' || errno == ERANGE)
        fail(errc::parse_error, where + ": cannot parse integer '" + token + "'");
    return v;
}

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream iss(line);
    std::string tok;
    while (iss >> tok) out.push_back(tok);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char c : line) {
        if (c == ',') {
            out.push_back(field);
            field.clear();
        } else if (c != '\r') {
            field += c;
        }
    }
    out.push_back(field);
    return out;
}

inline std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

inline std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(errc::io_error, "cannot open '" + path.string() + "' for writing");
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open '" + path.string() + "'");
    return in;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Particle files: one particle per line as three whitespace-separated numbers;
// lines starting with '#' are comments; the file stem is the shape id.
// ---------------------------------------------------------------------------

inline std::vector<double> read_particle_file(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path);
    std::vector<double> coords;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const auto tokens = detail::split_ws(trimmed);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (tokens.size() != 3)
            fail(errc::parse_error, where + ": expected 3 coordinates, got " +
                                        std::to_string(tokens.size()));
        for (const auto& tok : tokens) {
            const double v = detail::parse_double(tok, where);
            if (!std::isfinite(v)) fail(errc::non_finite, where + ": non-finite coordinate");
            coords.push_back(v);
        }
    }
    if (coords.empty()) fail(errc::no_input, path.string() + ": no particles");
    return coords;
}

inline void write_particle_file(const std::filesystem::path& path,
                                const Eigen::VectorXd& flat) {
    std::ofstream out = detail::open_out(path);
    for (Eigen::Index k = 0; k + 2 < flat.size(); k += 3)
        out << format_double(flat(k)) << ' ' << format_double(flat(k + 1)) << ' '
            << format_double(flat(k + 2)) << '\n';
}

// Reads every regular file of a directory (sorted by filename, hidden files
// skipped) as one correspondence set.
inline CorrespondenceSet read_particles_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
        fail(errc::no_input, "'" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename().string().front() == '.') continue;
        files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail(errc::no_input, "no particle files in '" + dir.string() + "'");

    CorrespondenceSet set;
    std::vector<std::vector<double>> rows;
    for (const auto& file : files) {
        std::vector<double> coords = read_particle_file(file);
        if (!rows.empty() && coords.size() != rows.front().size())
            fail(errc::particle_count_mismatch,
                 "'" + file.string() + "' has " + std::to_string(coords.size() / 3) +
                     " particles, expected " + std::to_string(rows.front().size() / 3));
        set.ids.push_back(file.stem().string());
        rows.push_back(std::move(coords));
    }
    set.data.resize(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            set.data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    set.validate();
    return set;
}

inline CorrespondenceSet read_particles_path(const std::filesystem::path& path) {
    if (std::filesystem::is_directory(path)) return read_particles_dir(path);
    if (!std::filesystem::is_regular_file(path))
        fail(errc::no_input, "'" + path.string() + "' does not exist");
    CorrespondenceSet set;
    std::vector<double> coords = read_particle_file(path);
    set.ids.push_back(path.stem().string());
    set.data.resize(1, static_cast<Eigen::Index>(coords.size()));
    for (std::size_t j = 0; j < coords.size(); ++j)
        set.data(0, static_cast<Eigen::Index>(j)) = coords[j];
    set.validate();
    return set;
}

inline void write_particles_dir(const std::filesystem::path& dir,
                                const CorrespondenceSet& set) {
    std::filesystem::create_directories(dir);
    for (Eigen::Index i = 0; i < set.n(); ++i)
        write_particle_file(dir / (set.ids[static_cast<std::size_t>(i)] + ".particles"),
                            set.data.row(i).transpose());
}

// ---------------------------------------------------------------------------
// Model files: a line-oriented text document, version-gated, numbers at 17
// significant digits so deserialization reproduces the model exactly.
// ---------------------------------------------------------------------------

inline void save_model(const PpcaModel& model, const std::filesystem::path& path) {
    std::ofstream out = detail::open_out(path);
    out << "snm_model " << kModelFormatVersion << '\n';
    out << "p " << model.p << '\n';
    out << "n_train " << model.n_train << '\n';
    out << "d " << model.d << '\n';
    out << "sigma2 " << format_double(model.sigma2) << '\n';
    out << "explained_ratio " << format_double(model.explained_ratio) << '\n';
    out << "fingerprint " << (model.fingerprint.empty() ? "-" : model.fingerprint) << '\n';
    const auto write_vector = [&](const char* key, const Eigen::VectorXd& v) {
        out << key;
        for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << format_double(v(i));
        out << '\n';
    };
    write_vector("spectrum", model.spectrum);
    write_vector("mu", model.mu);
    write_vector("eigenvalues", model.eigenvalues);
    for (int j = 0; j < model.d; ++j) {
        out << "basis";
        for (Eigen::Index i = 0; i < model.p; ++i)
            out << ' ' << format_double(model.basis(i, j));
        out << '\n';
    }
    out << "end\n";
    if (!out) fail(errc::io_error, "write failed for '" + path.string() + "'");
}

inline PpcaModel load_model(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path);
    const std::string where = path.string();
    std::string line;
    if (!std::getline(in, line))
        fail(errc::model_version, where + ": empty model file");
    {
        const auto head = detail::split_ws(line);
        if (head.size() != 2 || head[0] != "snm_model")
            fail(errc::model_version, where + ": not an snm model file");
        if (detail::parse_long(head[1], where) != kModelFormatVersion)
            fail(errc::model_version,
                 where + ": unsupported model format version " + head[1]);
    }

    PpcaModel model;
    const auto next_fields = [&](const char* key) {
        if (!std::getline(in, line))
            fail(errc::parse_error, where + ": truncated model file (missing '" +
                                        std::string(key) + "')");
        auto tokens = detail::split_ws(line);
        if (tokens.empty() || tokens.front() != key)
            fail(errc::parse_error, where + ": expected '" + std::string(key) + "' line");
        tokens.erase(tokens.begin());
        return tokens;
    };
    const auto scalar = [&](const char* key) {
        const auto f = next_fields(key);
        if (f.size() != 1) fail(errc::parse_error, where + ": malformed '" + key + "'");
        return f.front();
    };
    const auto to_vector = [&](const std::vector<std::string>& tokens) {
        Eigen::VectorXd v(static_cast<Eigen::Index>(tokens.size()));
        for (std::size_t i = 0; i < tokens.size(); ++i)
            v(static_cast<Eigen::Index>(i)) = detail::parse_double(tokens[i], where);
        return v;
    };

    model.p = detail::parse_long(scalar("p"), where);
    model.n_train = static_cast<int>(detail::parse_long(scalar("n_train"), where));
    model.d = static_cast<int>(detail::parse_long(scalar("d"), where));
    model.sigma2 = detail::parse_double(scalar("sigma2"), where);
    model.explained_ratio = detail::parse_double(scalar("explained_ratio"), where);
    model.fingerprint = scalar("fingerprint");
    if (model.fingerprint == "-") model.fingerprint.clear();
    model.spectrum = to_vector(next_fields("spectrum"));
    model.mu = to_vector(next_fields("mu"));
    model.eigenvalues = to_vector(next_fields("eigenvalues"));
    if (model.mu.size() != model.p)
        fail(errc::parse_error, where + ": mu length does not match p");
    if (model.eigenvalues.size() != model.d)
        fail(errc::parse_error, where + ": eigenvalue count does not match d");
    model.basis.resize(model.p, model.d);
    for (int j = 0; j < model.d; ++j) {
        const auto row = next_fields("basis");
        if (static_cast<Eigen::Index>(row.size()) != model.p)
            fail(errc::parse_error, where + ": basis row length does not match p");
        for (Eigen::Index i = 0; i < model.p; ++i)
            model.basis(i, j) = detail::parse_double(row[static_cast<std::size_t>(i)], where);
    }
    if (!std::getline(in, line) || detail::trim(line) != "end")
        fail(errc::parse_error, where + ": truncated model file (missing 'end')");
    model.validate(/*allow_zero_dim=*/true);
    return model;
}

// ---------------------------------------------------------------------------
// CSV surfaces.
// ---------------------------------------------------------------------------

inline constexpr const char* kScoresCsvHeader =
    "id,snm_full,snm_latent_paper,snm_latent_exact,snm_null";

inline void write_scores_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& ids,
                             const std::vector<SeverityScore>& scores) {
    if (ids.size() != scores.size())
        fail(errc::dim_mismatch, "scores csv: id/score count mismatch");
    std::ofstream out = detail::open_out(path);
    out << kScoresCsvHeader << '\n';
    for (std::size_t i = 0; i < ids.size(); ++i)
        out << ids[i] << ',' << format_double(scores[i].full) << ','
            << format_double(scores[i].latent_paper) << ','
            << format_double(scores[i].latent_exact) << ','
            << format_double(scores[i].null_space) << '\n';
}

struct ScoreColumn {
    std::vector<std::string> ids;
    std::vector<double> values;
};

inline ScoreColumn read_score_column(const std::filesystem::path& path,
                                     const std::string& column) {
    std::ifstream in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line))
        fail(errc::parse_error, path.string() + ": empty scores csv");
    const auto header = detail::split_csv_line(detail::trim(line));
    std::size_t col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == column) col = i;
    if (col == header.size() || header.empty() || header[0] != "id")
        fail(errc::parse_error,
             path.string() + ": scores csv must have an 'id' column and a '" + column +
                 "' column");
    ScoreColumn out;
    std::unordered_set<std::string> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != header.size())
            fail(errc::parse_error, where + ": wrong field count");
        if (!seen.insert(fields[0]).second)
            fail(errc::id_mismatch, where + ": duplicate id '" + fields[0] + "'");
        const double value = detail::parse_double(fields[col], where);
        if (!std::isfinite(value)) fail(errc::non_finite, where + ": non-finite score");
        out.ids.push_back(fields[0]);
        out.values.push_back(value);
    }
    if (out.ids.empty()) fail(errc::no_input, path.string() + ": no score rows");
    return out;
}

struct LabelsTable {
    std::vector<std::string> ids;
    std::vector<int> diagnosis;
    std::optional<std::vector<double>> severity;

    // Index lookup with E_ID_MISMATCH on absence.
    int index_of(const std::string& id) const {
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] == id) return static_cast<int>(i);
        fail(errc::id_mismatch, "id '" + id + "' missing from labels");
    }
};

inline LabelsTable read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line))
        fail(errc::parse_error, path.string() + ": empty labels csv");
    const auto header = detail::split_csv_line(detail::trim(line));
    const bool has_severity = header.size() == 3 && header[2] == "severity";
    if (!(header.size() == 2 || has_severity) || header[0] != "id" ||
        header[1] != "diagnosis")
        fail(errc::parse_error,
             path.string() + ": labels csv header must be 'id,diagnosis[,severity]'");
    LabelsTable out;
    if (has_severity) out.severity.emplace();
    std::unordered_set<std::string> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != header.size())
            fail(errc::parse_error, where + ": wrong field count");
        if (!seen.insert(fields[0]).second)
            fail(errc::id_mismatch, where + ": duplicate id '" + fields[0] + "'");
        out.ids.push_back(fields[0]);
        const long diag = detail::parse_long(fields[1], where);
        if (diag != 0 && diag != 1)
            fail(errc::parse_error, where + ": diagnosis must be 0 or 1");
        out.diagnosis.push_back(static_cast<int>(diag));
        if (has_severity) out.severity->push_back(detail::parse_double(fields[2], where));
    }
    if (out.ids.empty()) fail(errc::no_input, path.string() + ": no label rows");
    return out;
}

inline void write_labels_csv(const std::filesystem::path& path,
                             const std::vector<std::string>& ids,
                             const std::vector<int>& diagnosis) {
    std::ofstream out = detail::open_out(path);
    out << "id,diagnosis\n";
    for (std::size_t i = 0; i < ids.size(); ++i)
        out << ids[i] << ',' << diagnosis[i] << '\n';
}

inline RatingsTable read_ratings_csv(const std::filesystem::path& path, int categories) {
    std::ifstream in = detail::open_in(path);
    std::string line;
    if (!std::getline(in, line))
        fail(errc::parse_error, path.string() + ": empty ratings csv");
    const auto header = detail::split_csv_line(detail::trim(line));
    if (header.size() != 3 || header[0] != "subject_id" || header[1] != "rater_id" ||
        header[2] != "rating")
        fail(errc::parse_error,
             path.string() + ": ratings csv header must be 'subject_id,rater_id,rating'");
    RatingsTable table;
    table.categories = categories;
    std::unordered_map<std::string, int> subject_index;
    std::unordered_map<std::string, int> rater_index;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 3) fail(errc::parse_error, where + ": wrong field count");
        const long rating = detail::parse_long(fields[2], where);
        if (rating < 1 || rating > categories)
            fail(errc::rating_range,
                 where + ": rating " + std::to_string(rating) + " outside [1, " +
                     std::to_string(categories) + "]");
        auto [sit, s_new] = subject_index.try_emplace(
            fields[0], static_cast<int>(table.subjects.size()));
        if (s_new) table.subjects.push_back(fields[0]);
        auto [rit, r_new] =
            rater_index.try_emplace(fields[1], static_cast<int>(table.raters.size()));
        if (r_new) table.raters.push_back(fields[1]);
        table.ratings.push_back({sit->second, rit->second, static_cast<int>(rating)});
    }
    if (table.ratings.empty()) fail(errc::no_input, path.string() + ": no ratings");
    table.validate();
    return table;
}

inline void write_deviation_csv(const std::filesystem::path& path, const DeviationMap& map) {
    std::ofstream out = detail::open_out(path);
    out << "particle_index,x,y,z,wx,wy,wz,raw_norm,whitened_norm\n";
    for (Eigen::Index k = 0; k < map.raw.rows(); ++k) {
        out << k;
        for (int c = 0; c < 3; ++c) out << ',' << format_double(map.raw(k, c));
        for (int c = 0; c < 3; ++c) out << ',' << format_double(map.whitened(k, c));
        out << ',' << format_double(map.raw_norm(k)) << ','
            << format_double(map.whitened_norm(k)) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Generator config: 'key = value' lines, '#' comments. Errors carry line
// numbers.
// ---------------------------------------------------------------------------

inline GeneratorSpec read_generator_config(const std::filesystem::path& path,
                                           std::optional<std::uint64_t> fallback_seed) {
    std::ifstream in = detail::open_in(path);
    GeneratorSpec spec;
    bool have_seed = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string trimmed = detail::trim(line);
        if (trimmed.empty() || trimmed[0] == '#') continue;
        const auto eq = trimmed.find('=');
        const std::string where = path.string() + ": line " + std::to_string(line_no);
        if (eq == std::string::npos)
            fail(errc::spec_invalid, where + ": expected 'key = value'");
        const std::string key = detail::trim(trimmed.substr(0, eq));
        const std::string value = detail::trim(trimmed.substr(eq + 1));
        if (value.empty()) fail(errc::spec_invalid, where + ": empty value");

        if (key == "seed") {
            spec.seed = static_cast<std::uint64_t>(detail::parse_long(value, where));
            have_seed = true;
        } else if (key == "particles") {
            spec.particles = static_cast<int>(detail::parse_long(value, where));
        } else if (key == "d_true") {
            spec.d_true = static_cast<int>(detail::parse_long(value, where));
        } else if (key == "n_normal") {
            spec.n_normal = static_cast<int>(detail::parse_long(value, where));
        } else if (key == "n_pathological") {
            spec.n_pathological = static_cast<int>(detail::parse_long(value, where));
        } else if (key == "sigma") {
            spec.sigma_true = detail::parse_double(value, where);
        } else if (key == "latent_scales") {
            spec.latent_scales.clear();
            for (const auto& tok : detail::split_ws(value))
                spec.latent_scales.push_back(detail::parse_double(tok, where));
        } else if (key == "deformation_mode") {
            if (value == "in-span")
                spec.deformation_mode = DeformationMode::in_span;
            else if (value == "null-space")
                spec.deformation_mode = DeformationMode::null_space;
            else if (value == "random")
                spec.deformation_mode = DeformationMode::random_direction;
            else
                fail(errc::spec_invalid, where + ": unknown deformation mode '" + value +
                                             "' (in-span | null-space | random)");
        } else if (key == "deformation_amplitude") {
            spec.deformation_amplitude = detail::parse_double(value, where);
        } else {
            fail(errc::spec_invalid, where + ": unknown key '" + key + "'");
        }
    }
    if (!have_seed && fallback_seed) spec.seed = *fallback_seed;
    try {
        spec.validate();
    } catch (const error& e) {
        fail(errc::spec_invalid, path.string() + ": " + e.what());
    }
    return spec;
}

}  // namespace snm
