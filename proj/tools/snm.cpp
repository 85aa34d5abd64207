// Command-line surface for the SNM toolkit: train a normality model from
// particle files, score shapes against it, evaluate predictions, run the
// repeated k-fold protocol, generate synthetic populations, and aggregate
// expert ratings.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "snm/error.hpp"
#include "snm/evaluation.hpp"
#include "snm/io.hpp"
#include "snm/metrics.hpp"
#include "snm/ppca.hpp"
#include "snm/rater_panel.hpp"
#include "snm/synthetic.hpp"

namespace {

namespace fs = std::filesystem;

std::uint64_t env_fallback_seed() {
    if (const char* env = std::getenv("SNM_SEED"))
        return static_cast<std::uint64_t>(std::strtoull(env, nullptr, 10));
    return 0;
}

struct TrainOptions {
    std::string particles_dir;
    std::string out_path;
    double explained_variance = 0.95;
    int dim = 0;  // 0 means "use explained variance"
    bool center_translation = false;
    bool quiet = false;
};

int run_train(const TrainOptions& opt) {
    snm::CorrespondenceSet set = snm::read_particles_dir(opt.particles_dir);
    if (opt.center_translation) set = snm::centroid_centered(set);
    if (!opt.quiet)
        std::clog << "# read " << set.n() << " shapes (p=" << set.p() << ") from "
                  << opt.particles_dir << "\n";
    const snm::DimSpec target = opt.dim > 0
                                    ? snm::DimSpec::explicit_dim(opt.dim)
                                    : snm::DimSpec::explained_variance(opt.explained_variance);
    const snm::PpcaModel model = snm::fit_ppca(set, target);
    if (target.by_ratio && model.explained_ratio < target.ratio - 1e-12 &&
        model.d == model.n_train - 2)
        std::clog << "warning: explained-variance target " << target.ratio
                  << " required more than n-2 components; d clamped to " << model.d
                  << "\n";
    snm::save_model(model, opt.out_path);
    std::cout << "n=" << model.n_train << "\n"
              << "p=" << model.p << "\n"
              << "d=" << model.d << "\n"
              << "explained_ratio=" << snm::format_double(model.explained_ratio) << "\n"
              << "sigma2=" << snm::format_double(model.sigma2) << "\n";
    return 0;
}

struct ScoreOptions {
    std::string model_path;
    std::string particles_path;
    std::string out_path;
    std::string whiten_dir;
    int reduce_dim = -1;  // scoring-time truncation; 0 is the isotropic baseline
    bool center_translation = false;
    bool quiet = false;
};

int run_score(const ScoreOptions& opt) {
    snm::PpcaModel model = snm::load_model(opt.model_path);
    if (opt.reduce_dim >= 0) model = model.reduced(opt.reduce_dim);
    snm::CorrespondenceSet set = snm::read_particles_path(opt.particles_path);
    if (opt.center_translation) set = snm::centroid_centered(set);
    const std::vector<snm::SeverityScore> scores = snm::batch_score(model, set);
    snm::write_scores_csv(opt.out_path, set.ids, scores);
    if (!opt.whiten_dir.empty()) {
        fs::create_directories(opt.whiten_dir);
        for (Eigen::Index i = 0; i < set.n(); ++i) {
            const snm::DeviationMap map = snm::whiten(model, set.data.row(i).transpose());
            snm::write_deviation_csv(
                fs::path(opt.whiten_dir) / (set.ids[static_cast<std::size_t>(i)] + ".csv"),
                map);
        }
    }
    if (!opt.quiet)
        std::clog << "# scored " << set.n() << " shapes against d=" << model.d
                  << " model\n";
    std::cout << "scored=" << set.n() << "\n";
    return 0;
}

struct EvaluateOptions {
    std::string scores_path;
    std::string labels_path;
    std::string column = "snm_full";
};

int run_evaluate(const EvaluateOptions& opt) {
    const snm::ScoreColumn scores = snm::read_score_column(opt.scores_path, opt.column);
    const snm::LabelsTable labels = snm::read_labels_csv(opt.labels_path);
    std::vector<int> diagnosis;
    std::vector<double> severity;
    for (const std::string& id : scores.ids) {
        const int idx = labels.index_of(id);
        diagnosis.push_back(labels.diagnosis[static_cast<std::size_t>(idx)]);
        if (labels.severity)
            severity.push_back((*labels.severity)[static_cast<std::size_t>(idx)]);
    }
    std::cout << "auc=" << snm::format_double(snm::auc(scores.values, diagnosis)) << "\n";
    if (labels.severity) {
        std::cout << "pearson="
                  << snm::format_double(snm::pearson(scores.values, severity)) << "\n";
        std::cout << "spearman="
                  << snm::format_double(snm::spearman(scores.values, severity)) << "\n";
    }
    return 0;
}

struct CvOptions {
    std::string normals_dir;
    std::string pathological_dir;
    bool center_translation = false;
    int repeats = 3;
    int folds = 3;
    std::uint64_t seed = 0;
    bool seed_given = false;
    double explained_variance = 0.95;
    int dim = 0;
    std::string variant = "full";
    bool quiet = false;
};

snm::ScoreVariant parse_variant(const std::string& name) {
    if (name == "full") return snm::ScoreVariant::full;
    if (name == "latent-paper") return snm::ScoreVariant::latent_paper;
    if (name == "latent-exact") return snm::ScoreVariant::latent_exact;
    if (name == "null") return snm::ScoreVariant::null_space;
    snm::fail(snm::errc::usage,
              "unknown variant '" + name + "' (full | latent-paper | latent-exact | null)");
}

int run_cv(const CvOptions& opt) {
    snm::CorrespondenceSet normals = snm::read_particles_dir(opt.normals_dir);
    snm::CorrespondenceSet pathological = snm::read_particles_dir(opt.pathological_dir);
    if (opt.center_translation) {
        normals = snm::centroid_centered(normals);
        pathological = snm::centroid_centered(pathological);
    }
    const std::uint64_t seed = opt.seed_given ? opt.seed : env_fallback_seed();
    const snm::DimSpec target = opt.dim > 0
                                    ? snm::DimSpec::explicit_dim(opt.dim)
                                    : snm::DimSpec::explained_variance(opt.explained_variance);
    const snm::CvReport report = snm::repeated_kfold_cv(
        normals, pathological, opt.repeats, opt.folds, seed, target,
        parse_variant(opt.variant));
    std::cout << "repeats=" << report.repeats << "\n"
              << "folds=" << report.folds << "\n"
              << "seed=" << report.seed << "\n"
              << "variant=" << opt.variant << "\n";
    for (const snm::CvEntry& e : report.entries)
        std::cout << "auc_r" << e.repeat << "_f" << e.fold << "="
                  << snm::format_double(e.auc) << "\n";
    std::cout << "mean_auc=" << snm::format_double(report.mean_auc) << "\n";
    return 0;
}

struct SynthOptions {
    std::string spec_path;
    std::string out_dir;
    bool quiet = false;
};

int run_synth(const SynthOptions& opt) {
    const snm::GeneratorSpec spec =
        snm::read_generator_config(opt.spec_path, env_fallback_seed());
    const snm::SyntheticPopulation pop = snm::generate_population(spec);
    const fs::path out(opt.out_dir);
    snm::write_particles_dir(out / "normals", pop.normals);
    snm::write_particles_dir(out / "pathological", pop.pathologicals);
    std::vector<std::string> ids = pop.normals.ids;
    std::vector<int> diagnosis(ids.size(), 0);
    ids.insert(ids.end(), pop.pathologicals.ids.begin(), pop.pathologicals.ids.end());
    diagnosis.insert(diagnosis.end(), static_cast<std::size_t>(pop.pathologicals.n()), 1);
    snm::write_labels_csv(out / "labels.csv", ids, diagnosis);
    if (!opt.quiet)
        std::clog << "# wrote " << pop.normals.n() << " normal and "
                  << pop.pathologicals.n() << " pathological shapes to " << opt.out_dir
                  << "\n";
    std::cout << "n_normal=" << pop.normals.n() << "\n"
              << "n_pathological=" << pop.pathologicals.n() << "\n"
              << "particles=" << spec.particles << "\n"
              << "p=" << 3 * spec.particles << "\n"
              << "seed=" << spec.seed << "\n";
    return 0;
}

struct RatersOptions {
    std::string ratings_path;
    std::string labels_path;
    std::string out_path;
    int categories = 5;
    int max_iter = 500;
    double tol = 1e-7;
    bool quiet = false;
};

int run_raters(const RatersOptions& opt) {
    const snm::RatingsTable table =
        snm::read_ratings_csv(opt.ratings_path, opt.categories);
    const snm::LatentTraitFit fit =
        snm::fit_latent_trait(table, opt.max_iter, opt.tol);
    for (int r : fit.degenerate_raters)
        std::clog << "warning: rater '" << table.raters[static_cast<std::size_t>(r)]
                  << "' used a single category; parameters floored\n";
    if (!opt.out_path.empty()) {
        std::ofstream out(opt.out_path);
        if (!out) snm::fail(snm::errc::io_error, "cannot open '" + opt.out_path + "'");
        out << "subject_id,severity\n";
        for (std::size_t j = 0; j < table.subjects.size(); ++j)
            out << table.subjects[j] << ','
                << snm::format_double(fit.severity(static_cast<Eigen::Index>(j))) << '\n';
    }
    std::cout << "subjects=" << table.subjects.size() << "\n"
              << "raters=" << table.raters.size() << "\n"
              << "converged=" << (fit.converged ? 1 : 0) << "\n"
              << "iterations=" << fit.iterations << "\n"
              << "log_likelihood=" << snm::format_double(fit.log_likelihood) << "\n";
    if (!opt.labels_path.empty()) {
        const snm::LabelsTable labels = snm::read_labels_csv(opt.labels_path);
        std::vector<int> diagnosis;
        for (const std::string& id : table.subjects)
            diagnosis.push_back(
                labels.diagnosis[static_cast<std::size_t>(labels.index_of(id))]);
        const snm::PanelAucSummary summary =
            snm::panel_auc_summary(fit, table, diagnosis);
        for (std::size_t r = 0; r < table.raters.size(); ++r)
            std::cout << "rater_auc[" << table.raters[r]
                      << "]=" << snm::format_double(summary.individual[r]) << "\n";
        std::cout << "individual_auc_mean=" << snm::format_double(summary.individual_mean)
                  << "\n"
                  << "individual_auc_sd=" << snm::format_double(summary.individual_sd)
                  << "\n"
                  << "aggregated_auc=" << snm::format_double(summary.aggregated) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shape Normality Metric toolkit"};
    app.require_subcommand(1);

    TrainOptions train;
    CLI::App* train_cmd =
        app.add_subcommand("train", "Fit a normality model from particle files");
    train_cmd->add_option("--particles", train.particles_dir, "Directory of particle files")
        ->required();
    train_cmd->add_option("--out", train.out_path, "Output model file")->required();
    CLI::Option* train_ev = train_cmd->add_option(
        "--explained-variance", train.explained_variance,
        "Pick the smallest d explaining this variance fraction (default 0.95)");
    train_cmd->add_option("--dim", train.dim, "Explicit latent dimension")
        ->excludes(train_ev);
    train_cmd->add_flag("--center-translation", train.center_translation,
                        "Move each shape's centroid to the origin before fitting");
    train_cmd->add_flag("--quiet", train.quiet, "Suppress progress lines");

    ScoreOptions score;
    CLI::App* score_cmd =
        app.add_subcommand("score", "Score shapes against a fitted model");
    score_cmd->add_option("--model", score.model_path, "Model file")->required();
    score_cmd->add_option("--particles", score.particles_path,
                          "Particle file or directory")
        ->required();
    score_cmd->add_option("--out", score.out_path, "Output scores CSV")->required();
    score_cmd->add_option("--whiten-out", score.whiten_dir,
                          "Directory for per-shape deviation CSVs");
    score_cmd->add_option("--reduce-dim", score.reduce_dim,
                          "Truncate the model to this dimension for scoring (0 = isotropic baseline)");
    score_cmd->add_flag("--center-translation", score.center_translation,
                        "Move each shape's centroid to the origin before scoring");
    score_cmd->add_flag("--quiet", score.quiet, "Suppress progress lines");

    EvaluateOptions evaluate;
    CLI::App* eval_cmd =
        app.add_subcommand("evaluate", "Compare scores against ground-truth labels");
    eval_cmd->add_option("--scores", evaluate.scores_path, "Scores CSV")->required();
    eval_cmd->add_option("--labels", evaluate.labels_path,
                         "Labels CSV (id,diagnosis[,severity])")
        ->required();
    eval_cmd->add_option("--score-column", evaluate.column,
                         "Scores CSV column to evaluate (default snm_full)");

    CvOptions cv;
    CLI::App* cv_cmd =
        app.add_subcommand("cv", "Repeated k-fold cross-validation on normals");
    cv_cmd->add_option("--normals", cv.normals_dir, "Directory of normal particle files")
        ->required();
    cv_cmd->add_option("--pathological", cv.pathological_dir,
                       "Directory of pathological particle files")
        ->required();
    cv_cmd->add_option("--repeats", cv.repeats, "Shuffle repeats (default 3)");
    cv_cmd->add_option("--folds", cv.folds, "Folds per repeat (default 3)");
    CLI::Option* cv_seed =
        cv_cmd->add_option("--seed", cv.seed, "Shuffle seed (default $SNM_SEED or 0)");
    CLI::Option* cv_ev = cv_cmd->add_option("--explained-variance", cv.explained_variance,
                                            "Explained-variance target (default 0.95)");
    cv_cmd->add_option("--dim", cv.dim, "Explicit latent dimension")->excludes(cv_ev);
    cv_cmd->add_option("--variant", cv.variant,
                       "Score variant: full | latent-paper | latent-exact | null");
    cv_cmd->add_flag("--center-translation", cv.center_translation,
                     "Move each shape's centroid to the origin before fitting and scoring");
    cv_cmd->add_flag("--quiet", cv.quiet, "Suppress progress lines");

    SynthOptions synth;
    CLI::App* synth_cmd =
        app.add_subcommand("synth", "Generate a synthetic population from a config");
    synth_cmd->add_option("--spec", synth.spec_path, "Generator config file")->required();
    synth_cmd->add_option("--out", synth.out_dir, "Output directory")->required();
    synth_cmd->add_flag("--quiet", synth.quiet, "Suppress progress lines");

    RatersOptions raters;
    CLI::App* raters_cmd = app.add_subcommand(
        "raters", "Aggregate ordinal expert ratings into latent severities");
    raters_cmd->add_option("--ratings", raters.ratings_path,
                           "Ratings CSV (subject_id,rater_id,rating)")
        ->required();
    raters_cmd->add_option("--labels", raters.labels_path,
                           "Optional labels CSV for AUC summaries");
    raters_cmd->add_option("--out", raters.out_path, "Output severities CSV")->required();
    raters_cmd->add_option("--categories", raters.categories,
                           "Rating scale size (default 5)");
    raters_cmd->add_option("--max-iter", raters.max_iter, "Maximum sweeps (default 500)");
    raters_cmd->add_option("--tol", raters.tol,
                           "Log-likelihood improvement tolerance (default 1e-7)");
    raters_cmd->add_flag("--quiet", raters.quiet, "Suppress progress lines");

    try {
        app.parse(argc, argv);
        cv.seed_given = cv_seed->count() > 0;
        if (train_cmd->parsed()) return run_train(train);
        if (score_cmd->parsed()) return run_score(score);
        if (eval_cmd->parsed()) return run_evaluate(evaluate);
        if (cv_cmd->parsed()) return run_cv(cv);
        if (synth_cmd->parsed()) return run_synth(synth);
        if (raters_cmd->parsed()) return run_raters(raters);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "E_USAGE: " << e.what() << "\n";
        return 1;
    } catch (const snm::error& e) {
        std::cerr << e.code_name() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "E_IO: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
