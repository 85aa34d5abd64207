#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "snm/io.hpp"

using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("snm_io_" + name);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST_CASE("format_double round-trips doubles exactly") {
    snm::Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double x = std::exp(40.0 * (rng.uniform01() - 0.5)) *
                         (rng.below(2) ? 1.0 : -1.0) * rng.gaussian();
        const double back = std::strtod(snm::format_double(x).c_str(), nullptr);
        REQUIRE(back == x);
    }
}

TEST_CASE("particle files: comments, blanks, and ids") {
    TempDir tmp("particles");
    write_file(tmp.path / "skull_a.particles",
               "# header comment\n1 2 3\n\n4 5 6\n  # indented comment\n7 8 9\n");
    write_file(tmp.path / "skull_b.particles", "1 0 0\n0 1 0\n0 0 1\n");
    write_file(tmp.path / "skull_c.particles", "9 9 9\n8 8 8\n7 7 7\n");

    const auto set = snm::read_particles_dir(tmp.path);
    REQUIRE(set.n() == 3);
    REQUIRE(set.particles() == 3);
    REQUIRE(set.ids == std::vector<std::string>{"skull_a", "skull_b", "skull_c"});
    REQUIRE(set.data(0, 3) == 4.0);
    REQUIRE(set.data(2, 8) == 7.0);
}

TEST_CASE("particle files: malformed input") {
    TempDir tmp("bad_particles");
    write_file(tmp.path / "two.particles", "1 2\n");
    try {
        snm::read_particle_file(tmp.path / "two.particles");
        FAIL("expected parse error");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::parse_error);
        REQUIRE(std::string(e.what()).find(":1") != std::string::npos);
    }
    write_file(tmp.path / "nan.particles", "1 2 nan\n");
    try {
        snm::read_particle_file(tmp.path / "nan.particles");
        FAIL("expected non-finite error");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::non_finite);
    }
    write_file(tmp.path / "text.particles", "1 2 elephant\n");
    REQUIRE_THROWS_AS(snm::read_particle_file(tmp.path / "text.particles"), snm::error);
}

TEST_CASE("particle directory: empty and mismatched") {
    TempDir tmp("dir_checks");
    try {
        snm::read_particles_dir(tmp.path);
        FAIL("expected no_input");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::no_input);
    }
    write_file(tmp.path / "a.particles", "1 2 3\n4 5 6\n");
    write_file(tmp.path / "b.particles", "1 2 3\n");
    try {
        snm::read_particles_dir(tmp.path);
        FAIL("expected particle_count_mismatch");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::particle_count_mismatch);
    }
}

TEST_CASE("particle write/read round trip") {
    TempDir tmp("roundtrip");
    snm::Rng rng(3);
    const auto set = oracle::random_set(5, 9, rng, 100.0);
    snm::write_particles_dir(tmp.path, set);
    const auto back = snm::read_particles_dir(tmp.path);
    REQUIRE(back.ids == set.ids);
    REQUIRE(back.data == set.data);  // bit-exact through %.17g
}

TEST_CASE("model files: serialization round-trips every field exactly") {
    TempDir tmp("model");
    snm::Rng rng(8);
    const auto set = oracle::random_set(7, 12, rng);
    auto model = snm::fit_ppca(set, snm::DimSpec::explained_variance(0.9));
    const auto path = tmp.path / "model.txt";
    snm::save_model(model, path);
    const auto back = snm::load_model(path);

    REQUIRE(back.p == model.p);
    REQUIRE(back.n_train == model.n_train);
    REQUIRE(back.d == model.d);
    REQUIRE(back.sigma2 == model.sigma2);
    REQUIRE(back.explained_ratio == model.explained_ratio);
    REQUIRE(back.fingerprint == model.fingerprint);
    REQUIRE(back.mu == model.mu);
    REQUIRE(back.eigenvalues == model.eigenvalues);
    REQUIRE(back.spectrum == model.spectrum);
    REQUIRE(back.basis == model.basis);
}

TEST_CASE("model files: version gate and truncation") {
    TempDir tmp("model_bad");
    const auto path = tmp.path / "m.txt";

    write_file(path, "snm_model 99\np 3\n");
    try {
        snm::load_model(path);
        FAIL("expected model_version");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::model_version);
    }

    write_file(path, "something else entirely\n");
    try {
        snm::load_model(path);
        FAIL("expected model_version");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::model_version);
    }

    // Truncate a valid file before the end sentinel.
    snm::Rng rng(9);
    const auto set = oracle::random_set(6, 9, rng);
    snm::save_model(snm::fit_ppca(set, snm::DimSpec::explicit_dim(2)), path);
    std::ifstream in(path);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    write_file(path, all.substr(0, all.size() / 2));
    REQUIRE_THROWS_AS(snm::load_model(path), snm::error);
}

TEST_CASE("scores csv: write then read a column back") {
    TempDir tmp("scores");
    const auto path = tmp.path / "scores.csv";
    std::vector<snm::SeverityScore> scores(2);
    scores[0].full = 1.25;
    scores[0].latent_paper = 0.5;
    scores[0].latent_exact = 0.75;
    scores[0].null_space = 1.0;
    scores[1].full = 2.5;
    snm::write_scores_csv(path, {"alpha", "beta"}, scores);

    const auto full = snm::read_score_column(path, "snm_full");
    REQUIRE(full.ids == std::vector<std::string>{"alpha", "beta"});
    REQUIRE(full.values[0] == 1.25);
    REQUIRE(full.values[1] == 2.5);
    const auto exact = snm::read_score_column(path, "snm_latent_exact");
    REQUIRE(exact.values[0] == 0.75);
    REQUIRE_THROWS_AS(snm::read_score_column(path, "no_such_column"), snm::error);
}

TEST_CASE("labels csv: diagnosis only and with severity") {
    TempDir tmp("labels");
    const auto path = tmp.path / "labels.csv";
    write_file(path, "id,diagnosis\na,0\nb,1\n");
    auto labels = snm::read_labels_csv(path);
    REQUIRE(labels.diagnosis == std::vector<int>{0, 1});
    REQUIRE_FALSE(labels.severity.has_value());
    REQUIRE(labels.index_of("b") == 1);
    try {
        labels.index_of("zzz");
        FAIL("expected id_mismatch");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::id_mismatch);
    }

    write_file(path, "id,diagnosis,severity\na,0,1.5\nb,1,3.25\n");
    labels = snm::read_labels_csv(path);
    REQUIRE(labels.severity.has_value());
    REQUIRE((*labels.severity)[1] == 3.25);

    write_file(path, "id,diagnosis\na,2\n");
    REQUIRE_THROWS_AS(snm::read_labels_csv(path), snm::error);
}

TEST_CASE("ratings csv: parse and range check") {
    TempDir tmp("ratings");
    const auto path = tmp.path / "r.csv";
    write_file(path,
               "subject_id,rater_id,rating\ns1,r1,3\ns1,r2,4\ns2,r1,1\ns2,r2,2\n"
               "s3,r1,5\ns3,r2,5\n");
    const auto table = snm::read_ratings_csv(path, 5);
    REQUIRE(table.subjects.size() == 3);
    REQUIRE(table.raters.size() == 2);
    REQUIRE(table.ratings.size() == 6);

    write_file(path, "subject_id,rater_id,rating\ns1,r1,9\n");
    try {
        snm::read_ratings_csv(path, 5);
        FAIL("expected rating_range");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::rating_range);
    }
}

TEST_CASE("generator config: keys, line numbers, fallback seed") {
    TempDir tmp("config");
    const auto path = tmp.path / "gen.cfg";
    write_file(path,
               "# demo config\n"
               "particles = 4\n"
               "d_true = 2\n"
               "n_normal = 10\n"
               "n_pathological = 3\n"
               "sigma = 0.25\n"
               "latent_scales = 2.0 1.0\n"
               "deformation_mode = in-span\n"
               "deformation_amplitude = 5\n");
    const auto spec = snm::read_generator_config(path, 77);
    REQUIRE(spec.seed == 77);  // fallback applied
    REQUIRE(spec.particles == 4);
    REQUIRE(spec.deformation_mode == snm::DeformationMode::in_span);

    write_file(path, "particles = 4\nwhatever = 3\n");
    try {
        snm::read_generator_config(path, 0);
        FAIL("expected spec_invalid");
    } catch (const snm::error& e) {
        REQUIRE(e.code() == snm::errc::spec_invalid);
        REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("deviation csv has one row per particle") {
    TempDir tmp("deviations");
    snm::Rng rng(21);
    const auto set = oracle::random_set(6, 9, rng);
    const auto model = snm::fit_ppca(set, snm::DimSpec::explicit_dim(2));
    const auto map = snm::whiten(model, set.data.row(0).transpose());
    const auto path = tmp.path / "dev.csv";
    snm::write_deviation_csv(path, map);

    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    REQUIRE(line == "particle_index,x,y,z,wx,wy,wz,raw_norm,whitened_norm");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    REQUIRE(rows == 3);
}
