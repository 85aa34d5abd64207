#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "snm/io.hpp"
#include "snm/metrics.hpp"

using Catch::Approx;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = 0;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the CLI with stdout/stderr captured to files.
RunResult run_cli(const fs::path& workdir, const std::string& args) {
    const fs::path out = workdir / "stdout.txt";
    const fs::path err = workdir / "stderr.txt";
    const std::string cmd = std::string(SNM_CLI_PATH) + " " + args + " > " +
                            out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = status == -1 ? -1 : WEXITSTATUS(status);
    result.out = slurp(out);
    result.err = slurp(err);
    return result;
}

// One fixture directory with a generated population, a trained model, and a
// scored CSV, shared by the cases.
struct CliFixture {
    fs::path dir;
    CliFixture() {
        dir = fs::temp_directory_path() / "snm_cli_fixture";
        fs::remove_all(dir);
        fs::create_directories(dir);
        std::ofstream cfg(dir / "gen.cfg");
        cfg << "seed = 11\nparticles = 10\nd_true = 3\nn_normal = 20\n"
               "n_pathological = 6\nsigma = 0.05\nlatent_scales = 2.0 1.5 1.0\n"
               "deformation_mode = null-space\ndeformation_amplitude = 12\n";
        cfg.close();
        step("synth --spec " + (dir / "gen.cfg").string() + " --out " +
             (dir / "data").string() + " --quiet");
        step("train --particles " + (dir / "data/normals").string() + " --out " +
             (dir / "model.txt").string() + " --quiet");
        step("score --model " + (dir / "model.txt").string() + " --particles " +
             (dir / "data/pathological").string() + " --out " + (dir / "s1.csv").string() +
             " --quiet");
        std::ofstream ratings(dir / "ratings.csv");
        ratings << "subject_id,rater_id,rating\n";
        for (int j = 0; j < 10; ++j)
            for (int t = 0; t < 3; ++t)
                ratings << "s" << j << ",r" << t << "," << std::min(1 + (j + t) / 3, 5) << "\n";
    }
    void step(const std::string& args) const {
        const auto r = run_cli(dir, args);
        if (r.exit_code != 0)
            throw std::runtime_error("fixture step failed (" + args + "): " + r.err);
    }
};

const CliFixture& fixture() {
    static CliFixture fix;
    return fix;
}

std::string value_of(const std::string& key_values, const std::string& key) {
    std::istringstream iss(key_values);
    std::string line;
    while (std::getline(iss, line))
        if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
    return "";
}

}  // namespace

TEST_CASE("cli: train reports the model summary as key=value lines") {
    const auto& fix = fixture();
    const auto r = run_cli(fix.dir, "train --particles " + (fix.dir / "data/normals").string() +
                                        " --out " + (fix.dir / "model.txt").string() +
                                        " --quiet");
    REQUIRE(r.exit_code == 0);
    REQUIRE(value_of(r.out, "n") == "20");
    REQUIRE(value_of(r.out, "p") == "30");
    REQUIRE(!value_of(r.out, "d").empty());
    REQUIRE(std::stod(value_of(r.out, "explained_ratio")) >= 0.95);
    REQUIRE(std::stod(value_of(r.out, "sigma2")) > 0.0);
    REQUIRE(r.err.empty());
}

TEST_CASE("cli: repeated runs are byte-identical") {
    const auto& fix = fixture();
    run_cli(fix.dir, "train --particles " + (fix.dir / "data/normals").string() +
                         " --out " + (fix.dir / "model_a.txt").string() + " --quiet");
    run_cli(fix.dir, "train --particles " + (fix.dir / "data/normals").string() +
                         " --out " + (fix.dir / "model_b.txt").string() + " --quiet");
    REQUIRE(slurp(fix.dir / "model_a.txt") == slurp(fix.dir / "model_b.txt"));

    const std::string score_args = " --model " + (fix.dir / "model_a.txt").string() +
                                   " --particles " + (fix.dir / "data/pathological").string();
    run_cli(fix.dir, "score" + score_args + " --out " + (fix.dir / "s1.csv").string() + " --quiet");
    run_cli(fix.dir, "score" + score_args + " --out " + (fix.dir / "s2.csv").string() + " --quiet");
    REQUIRE(slurp(fix.dir / "s1.csv") == slurp(fix.dir / "s2.csv"));
}

TEST_CASE("cli: scoring the training mean gives a zero row") {
    const auto& fix = fixture();
    const fs::path model_path = fix.dir / "model.txt";
    const auto model = snm::load_model(model_path);
    snm::write_particle_file(fix.dir / "mean_shape.particles", model.mu);
    const auto r = run_cli(fix.dir, "score --model " + model_path.string() +
                                        " --particles " +
                                        (fix.dir / "mean_shape.particles").string() +
                                        " --out " + (fix.dir / "mean_score.csv").string() +
                                        " --quiet");
    REQUIRE(r.exit_code == 0);
    const auto col = snm::read_score_column(fix.dir / "mean_score.csv", "snm_full");
    REQUIRE(col.ids == std::vector<std::string>{"mean_shape"});
    REQUIRE(col.values[0] == Approx(0.0).margin(1e-9));
}

TEST_CASE("cli: mean squared training score sits in the chi-square band") {
    const auto& fix = fixture();
    const fs::path model_path = fix.dir / "model.txt";
    run_cli(fix.dir, "score --model " + model_path.string() + " --particles " +
                         (fix.dir / "data/normals").string() + " --out " +
                         (fix.dir / "train_scores.csv").string() + " --quiet");
    const auto col = snm::read_score_column(fix.dir / "train_scores.csv", "snm_full");
    double mean_sq = 0.0;
    for (double v : col.values) mean_sq += v * v;
    mean_sq /= static_cast<double>(col.values.size());
    const auto model = snm::load_model(model_path);
    const double dof = model.n_train - 2;  // d + (n - 2 - d)
    REQUIRE(mean_sq > 0.5 * dof);
    REQUIRE(mean_sq < 1.5 * dof);
}

TEST_CASE("cli: training 74 shapes at the default target") {
    const auto& fix = fixture();
    std::ofstream cfg(fix.dir / "gen74.cfg");
    cfg << "seed = 74\nparticles = 30\nd_true = 5\nn_normal = 74\n"
           "n_pathological = 1\nsigma = 0.05\nlatent_scales = 2.0 1.7 1.4 1.1 0.8\n"
           "deformation_mode = null-space\ndeformation_amplitude = 0\n";
    cfg.close();
    fix.step("synth --spec " + (fix.dir / "gen74.cfg").string() + " --out " +
             (fix.dir / "d74").string() + " --quiet");
    const auto r = run_cli(fix.dir, "train --particles " + (fix.dir / "d74/normals").string() +
                                        " --out " + (fix.dir / "m74.txt").string() +
                                        " --explained-variance 0.95 --quiet");
    REQUIRE(r.exit_code == 0);
    const int d = std::stoi(value_of(r.out, "d"));
    REQUIRE(d >= 1);
    REQUIRE(d <= 72);
    REQUIRE(std::stod(value_of(r.out, "explained_ratio")) >= 0.95);
}

TEST_CASE("cli: whiten output per shape") {
    const auto& fix = fixture();
    const auto r = run_cli(fix.dir, "score --model " + (fix.dir / "model.txt").string() +
                                        " --particles " +
                                        (fix.dir / "data/pathological").string() +
                                        " --out " + (fix.dir / "ps.csv").string() +
                                        " --whiten-out " + (fix.dir / "dev").string() +
                                        " --quiet");
    REQUIRE(r.exit_code == 0);
    REQUIRE(fs::exists(fix.dir / "dev" / "path_0000.csv"));
    const std::string first_line =
        slurp(fix.dir / "dev" / "path_0000.csv").substr(0, 52);
    REQUIRE(first_line.rfind("particle_index,x,y,z,wx,wy,wz,raw_norm", 0) == 0);
}

TEST_CASE("cli: evaluate computes auc, pearson, spearman") {
    const auto& fix = fixture();
    // Synthetic scores CSV and labels with a severity column.
    {
        std::ofstream s(fix.dir / "eval_scores.csv");
        s << snm::kScoresCsvHeader << "\n";
        s << "a,1,0,0,0\nb,3,0,0,0\nc,2,0,0,0\nd,4,0,0,0\n";
        std::ofstream l(fix.dir / "eval_labels.csv");
        l << "id,diagnosis,severity\na,0,1\nb,0,3\nc,1,2\nd,1,4\n";
    }
    const auto r = run_cli(fix.dir, "evaluate --scores " +
                                        (fix.dir / "eval_scores.csv").string() +
                                        " --labels " +
                                        (fix.dir / "eval_labels.csv").string());
    REQUIRE(r.exit_code == 0);
    REQUIRE(std::stod(value_of(r.out, "auc")) == 0.75);
    REQUIRE(std::stod(value_of(r.out, "pearson")) == Approx(1.0).epsilon(1e-12));
    REQUIRE(std::stod(value_of(r.out, "spearman")) == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cli: cv separates far pathology and is seed-stable") {
    const auto& fix = fixture();
    const std::string args = "cv --normals " + (fix.dir / "data/normals").string() +
                             " --pathological " + (fix.dir / "data/pathological").string() +
                             " --seed 5 --quiet";
    const auto a = run_cli(fix.dir, args);
    REQUIRE(a.exit_code == 0);
    REQUIRE(std::stod(value_of(a.out, "mean_auc")) == 1.0);  // amplitude 12 is far
    const auto b = run_cli(fix.dir, args);
    REQUIRE(a.out == b.out);

    // SNM_SEED is the fallback when --seed is absent.
    setenv("SNM_SEED", "5", 1);
    const auto c = run_cli(fix.dir, "cv --normals " + (fix.dir / "data/normals").string() +
                                        " --pathological " +
                                        (fix.dir / "data/pathological").string() + " --quiet");
    unsetenv("SNM_SEED");
    REQUIRE(c.out == a.out);
}

TEST_CASE("cli: cv variant flag selects the score component") {
    const auto& fix = fixture();
    const std::string base = "cv --normals " + (fix.dir / "data/normals").string() +
                             " --pathological " + (fix.dir / "data/pathological").string() +
                             " --seed 9 --quiet --variant ";
    const auto null_run = run_cli(fix.dir, base + "null");
    const auto latent_run = run_cli(fix.dir, base + "latent-exact");
    REQUIRE(null_run.exit_code == 0);
    REQUIRE(latent_run.exit_code == 0);
    // Null-space deformation: the null scorer separates, the latent one idles.
    REQUIRE(std::stod(value_of(null_run.out, "mean_auc")) >
            std::stod(value_of(latent_run.out, "mean_auc")) + 0.2);
}

TEST_CASE("cli: raters pipeline with labels") {
    const auto& fix = fixture();
    {
        std::ofstream l(fix.dir / "rater_labels.csv");
        l << "id,diagnosis\n";
        for (int j = 0; j < 10; ++j) l << "s" << j << "," << (j >= 5 ? 1 : 0) << "\n";
    }
    const auto r = run_cli(fix.dir, "raters --ratings " + (fix.dir / "ratings.csv").string() +
                                        " --labels " + (fix.dir / "rater_labels.csv").string() +
                                        " --out " + (fix.dir / "severity.csv").string() +
                                        " --quiet");
    REQUIRE(r.exit_code == 0);
    REQUIRE(value_of(r.out, "subjects") == "10");
    REQUIRE(value_of(r.out, "raters") == "3");
    REQUIRE(!value_of(r.out, "aggregated_auc").empty());
    REQUIRE(std::stod(value_of(r.out, "aggregated_auc")) > 0.9);
    REQUIRE(slurp(fix.dir / "severity.csv").rfind("subject_id,severity", 0) == 0);
}

TEST_CASE("cli: reduce-dim 0 scores the isotropic baseline") {
    const auto& fix = fixture();
    const auto r = run_cli(fix.dir, "score --model " + (fix.dir / "model.txt").string() +
                                        " --particles " +
                                        (fix.dir / "data/pathological").string() +
                                        " --out " + (fix.dir / "iso.csv").string() +
                                        " --reduce-dim 0 --quiet");
    REQUIRE(r.exit_code == 0);
    const auto full = snm::read_score_column(fix.dir / "iso.csv", "snm_full");
    const auto null_part = snm::read_score_column(fix.dir / "iso.csv", "snm_null");
    const auto latent = snm::read_score_column(fix.dir / "iso.csv", "snm_latent_exact");
    for (std::size_t i = 0; i < full.values.size(); ++i) {
        REQUIRE(full.values[i] == null_part.values[i]);  // d = 0: all mass in the null part
        REQUIRE(latent.values[i] == 0.0);
    }
}

TEST_CASE("cli: center-translation makes training invariant to shape offsets") {
    const auto& fix = fixture();
    // Shift one input set by a constant and retrain with centering: the model
    // file matches the centered fit of the unshifted data.
    const fs::path shifted = fix.dir / "shifted_normals";
    fs::remove_all(shifted);
    auto set = snm::read_particles_dir(fix.dir / "data/normals");
    for (Eigen::Index i = 0; i < set.n(); ++i)
        for (Eigen::Index k = 0; k < set.particles(); ++k) {
            set.data(i, 3 * k) += 100.0 * static_cast<double>(i);
            set.data(i, 3 * k + 1) -= 40.0;
        }
    snm::write_particles_dir(shifted, set);
    const auto a = run_cli(fix.dir, "train --particles " + (fix.dir / "data/normals").string() +
                                        " --out " + (fix.dir / "centered_a.txt").string() +
                                        " --center-translation --quiet");
    const auto b = run_cli(fix.dir, "train --particles " + shifted.string() + " --out " +
                                        (fix.dir / "centered_b.txt").string() +
                                        " --center-translation --quiet");
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    const auto ma = snm::load_model(fix.dir / "centered_a.txt");
    const auto mb = snm::load_model(fix.dir / "centered_b.txt");
    REQUIRE((ma.mu - mb.mu).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((ma.spectrum - mb.spectrum).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("cli error paths emit one E_ code on stderr and exit nonzero") {
    const auto& fix = fixture();
    const fs::path empty = fix.dir / "empty_dir";
    fs::create_directories(empty);

    auto expect_code = [&](const std::string& args, const std::string& code) {
        const auto r = run_cli(fix.dir, args);
        INFO(args << " -> " << r.err);
        REQUIRE(r.exit_code != 0);
        REQUIRE(r.err.rfind(code, 0) == 0);  // first line starts with the code
        REQUIRE(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    };

    expect_code("train --particles " + empty.string() + " --out " +
                    (fix.dir / "nope.txt").string(),
                "E_NO_INPUT");

    const fs::path mismatched = fix.dir / "mismatched";
    fs::create_directories(mismatched);
    std::ofstream(mismatched / "a.particles") << "1 2 3\n4 5 6\n";
    std::ofstream(mismatched / "b.particles") << "1 2 3\n";
    expect_code("train --particles " + mismatched.string() + " --out " +
                    (fix.dir / "nope.txt").string(),
                "E_PARTICLE_COUNT_MISMATCH");

    const fs::path small = fix.dir / "small_shape.particles";
    std::ofstream(small) << "1 2 3\n";
    expect_code("score --model " + (fix.dir / "model.txt").string() + " --particles " +
                    small.string() + " --out " + (fix.dir / "nope.csv").string(),
                "E_DIM_MISMATCH");

    std::ofstream(fix.dir / "corrupt.txt") << "snm_model 42\ngarbage\n";
    expect_code("score --model " + (fix.dir / "corrupt.txt").string() + " --particles " +
                    small.string() + " --out " + (fix.dir / "nope.csv").string(),
                "E_MODEL_VERSION");

    std::ofstream(fix.dir / "short_labels.csv") << "id,diagnosis\nonly_one,1\n";
    expect_code("evaluate --scores " + (fix.dir / "eval_scores.csv").string() +
                    " --labels " + (fix.dir / "short_labels.csv").string(),
                "E_ID_MISMATCH");

    std::ofstream(fix.dir / "one_class.csv")
        << "id,diagnosis\na,1\nb,1\nc,1\nd,1\n";
    expect_code("evaluate --scores " + (fix.dir / "eval_scores.csv").string() +
                    " --labels " + (fix.dir / "one_class.csv").string(),
                "E_SINGLE_CLASS");

    std::ofstream(fix.dir / "bad_ratings.csv")
        << "subject_id,rater_id,rating\ns1,r1,7\n";
    expect_code("raters --ratings " + (fix.dir / "bad_ratings.csv").string() + " --out " +
                    (fix.dir / "nope.csv").string(),
                "E_RATING_RANGE");

    std::ofstream(fix.dir / "bad_gen.cfg") << "particles = 4\nno_such_key = 1\n";
    expect_code("synth --spec " + (fix.dir / "bad_gen.cfg").string() + " --out " +
                    (fix.dir / "nope_dir").string(),
                "E_SPEC_INVALID");

    expect_code("train --particles", "E_USAGE");
}

TEST_CASE("cli: raters reports non-convergence as a flag, not an error") {
    const auto& fix = fixture();
    const auto r = run_cli(fix.dir, "raters --ratings " + (fix.dir / "ratings.csv").string() +
                                        " --out " + (fix.dir / "sev_early.csv").string() +
                                        " --max-iter 1 --quiet");
    REQUIRE(r.exit_code == 0);
    REQUIRE(value_of(r.out, "converged") == "0");
    REQUIRE(value_of(r.out, "iterations") == "1");
}

TEST_CASE("cli: round trip through the model file preserves scores") {
    const auto& fix = fixture();
    const auto model = snm::load_model(fix.dir / "model.txt");
    const auto set = snm::read_particles_dir(fix.dir / "data" / "pathological");
    const auto in_memory = snm::batch_score(model, set);
    const auto col = snm::read_score_column(fix.dir / "s1.csv", "snm_full");
    REQUIRE(col.values.size() == in_memory.size());
    for (std::size_t i = 0; i < in_memory.size(); ++i)
        REQUIRE(col.values[i] == Approx(in_memory[i].full).epsilon(1e-12));
}
