// Command-line front end: synthetic benchmark generation, pairwise
// registration, atlas construction, labeling, and the experiment harness.
// Exit codes: 0 success, 1 bad usage or invalid input, 2 numerical failure.
// All file outputs are deterministic for a fixed seed; progress and timing
// go to stderr only.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vesselatlas/atlas.hpp"
#include "vesselatlas/errors.hpp"
#include "vesselatlas/harness.hpp"
#include "vesselatlas/parallel.hpp"
#include "vesselatlas/registration.hpp"
#include "vesselatlas/synthgen.hpp"
#include "vesselatlas/tree_io.hpp"

namespace {

using nlohmann::json;
using namespace vesselatlas;

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write: " + path);
    out << content;
    out.flush();
    if (!out.good()) throw ValidationError("failed writing: " + path);
}

RegistrationConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return RegistrationConfig{};
    return load_registration_config(path);
}

class StageTimer {
  public:
    explicit StageTimer(std::string what)
        : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        const auto elapsed = std::chrono::steady_clock::now() - start_;
        const double seconds =
            std::chrono::duration_cast<std::chrono::duration<double>>(elapsed).count();
        std::fprintf(stderr, "%s took %.1fs\n", what_.c_str(), seconds);
    }

  private:
    std::string what_;
    std::chrono::steady_clock::time_point start_;
};

void run_synth(int count, std::uint64_t seed, double momenta_scale, double swap_prob,
               double jitter, const std::string& out_dir) {
    GeneratorConfig cfg;
    cfg.momenta_scale = momenta_scale;
    cfg.topology_swap_prob = swap_prob;
    cfg.branch_point_jitter = jitter;
    cfg.seed = seed;

    const StageTimer timer("synth");
    const std::vector<VascularTree> trees = generate_dataset(cfg, count);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> files;
    files.reserve(trees.size());
    for (std::size_t i = 0; i < trees.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "tree_%03zu.json", i);
        files.emplace_back(name);
        save_tree_file(trees[i], (fs::path(out_dir) / name).string());
    }

    json manifest;
    manifest["files"] = files;
    manifest["generator"]["count"] = count;
    manifest["generator"]["jitter"] = jitter;
    manifest["generator"]["momenta_scale"] = momenta_scale;
    manifest["generator"]["seed"] = seed;
    manifest["generator"]["swap_prob"] = swap_prob;
    write_file((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    std::fprintf(stderr, "wrote %zu trees to %s\n", trees.size(), out_dir.c_str());
}

void run_register(const std::string& source_path, const std::string& target_path,
                  const std::string& config_path, const std::string& out_path) {
    const RegistrationConfig cfg = load_config_or_default(config_path);
    const VascularTree source = load_tree_file(source_path);
    const VascularTree target = load_tree_file(target_path);

    const StageTimer timer("register");
    const RegistrationResult result = register_trees(source, target, cfg);
    if (result.line_search_warning) {
        std::fprintf(stderr, "warning: line search stalled; kept the best iterate\n");
    }
    write_file(out_path, registration_result_to_json(result));
    std::fprintf(stderr, "objective %.6g (energy %.6g, attachment %.6g) after %d iterations\n",
                 result.objective_trace.empty() ? 0.0 : result.objective_trace.back(),
                 result.final_energy, result.final_attachment, result.iterations);
}

void run_atlas(const std::string& reference_path, const std::string& targets_dir, int k,
               const std::string& config_path, const std::string& out_path, int jobs) {
    const RegistrationConfig cfg = load_config_or_default(config_path);
    const VascularTree reference = load_tree_file(reference_path);
    const Dataset dataset = load_dataset(targets_dir);

    const StageTimer timer("atlas");
    const auto [atlas, report] = build_atlas(reference, dataset.trees, k, cfg, jobs);
    if (!report.reference_in_targets) {
        std::fprintf(stderr, "warning: the reference tree is not among the targets\n");
    }
    for (std::size_t i = 0; i < report.mean_momentum_norms.size(); ++i) {
        std::fprintf(stderr, "iteration %zu: mean momentum norm %.6g\n", i + 1,
                     report.mean_momentum_norms[i]);
    }
    save_atlas_file(atlas, out_path);
    if (report.aborted) {
        throw NumericalError("atlas construction diverged at iteration " +
                             std::to_string(report.aborted_iteration) +
                             "; wrote the last completed iteration (" +
                             std::to_string(atlas.iteration) + ")");
    }
}

void run_label(const std::string& atlas_path, const std::string& target_path,
               const std::string& method_str, const std::string& assign_str,
               const std::string& config_path, int resample_count, const std::string& out_path) {
    const Method method = parse_method(method_str);
    const Assignment assignment = parse_assignment(assign_str);
    const RegistrationConfig cfg = load_config_or_default(config_path);
    const Atlas atlas = load_atlas_file(atlas_path);
    const VascularTree target = load_tree_file(target_path);

    const StageTimer timer("label");
    const MethodRun run =
        run_method(atlas, target, method, assignment, cfg, resample_count, nullptr);
    if (run.degraded) {
        std::fprintf(stderr, "warning: registration failed; labeled from the undeformed atlas\n");
    }

    json doc = json::array();
    for (std::size_t i = 0; i < run.labels.size(); ++i) {
        doc.push_back({static_cast<int>(i), run.labels[i]});
    }
    write_file(out_path, doc.dump(2) + "\n");
}

void run_eval(const std::string& dataset_dir, const std::string& spec_path,
              const std::string& out_path, int jobs) {
    const ExperimentSpec spec = load_experiment_spec(spec_path);
    const Dataset dataset = load_dataset(dataset_dir);

    const StageTimer timer("eval");
    RegistrationMemo memo;
    std::string csv;
    if (spec.mode == ExperimentMode::kCrossValidation) {
        csv = cross_validation_csv(cross_validate(dataset.trees, spec, &memo, jobs));
    } else {
        csv = iteration_csv(precision_vs_iteration(dataset.trees, spec, &memo, jobs));
    }
    write_file(out_path, csv);

    json manifest;
    manifest["dataset"]["directory"] = dataset_dir;
    manifest["dataset"]["files"] = dataset.files;
    manifest["spec"] = json::parse(experiment_spec_to_json(spec));
    write_file(out_path + ".manifest.json", manifest.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vascular tree registration, atlas construction, and labeling"};
    app.require_subcommand(1);
    int jobs = default_jobs();
    app.add_option("--jobs", jobs, "worker threads")->capture_default_str();

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled benchmark");
    int synth_count = 20;
    std::uint64_t synth_seed = 0;
    double synth_momenta = kDefaultMomentaScale;
    double synth_swap = 0.5;
    double synth_jitter = 0.0;
    std::string synth_out;
    synth->add_option("--n", synth_count, "number of trees")->capture_default_str();
    synth->add_option("--seed", synth_seed, "generator seed")->capture_default_str();
    synth->add_option("--momenta-scale", synth_momenta, "deformation momenta scale")
        ->capture_default_str();
    synth->add_option("--swap-prob", synth_swap, "probability of a topology perturbation")
        ->capture_default_str();
    synth->add_option("--jitter", synth_jitter, "junction jitter fraction")
        ->capture_default_str();
    synth->add_option("--out-dir", synth_out, "output directory")->required();
    synth->callback([&] {
        run_synth(synth_count, synth_seed, synth_momenta, synth_swap, synth_jitter, synth_out);
    });

    auto* reg = app.add_subcommand("register", "register a source tree onto a target");
    std::string reg_source;
    std::string reg_target;
    std::string reg_config;
    std::string reg_out;
    reg->add_option("--source", reg_source, "source tree JSON")->required();
    reg->add_option("--target", reg_target, "target tree JSON")->required();
    reg->add_option("--config", reg_config, "registration config JSON");
    reg->add_option("--out", reg_out, "result JSON")->required();
    reg->callback([&] { run_register(reg_source, reg_target, reg_config, reg_out); });

    auto* atlas = app.add_subcommand("atlas", "build an atlas by momenta averaging");
    std::string atlas_reference;
    std::string atlas_targets;
    int atlas_k = 1;
    std::string atlas_config;
    std::string atlas_out;
    atlas->add_option("--reference", atlas_reference, "reference tree JSON")->required();
    atlas->add_option("--targets", atlas_targets, "dataset directory")->required();
    atlas->add_option("--k", atlas_k, "averaging iterations")->capture_default_str();
    atlas->add_option("--config", atlas_config, "registration config JSON");
    atlas->add_option("--out", atlas_out, "atlas JSON")->required();
    atlas->callback([&] {
        run_atlas(atlas_reference, atlas_targets, atlas_k, atlas_config, atlas_out, jobs);
    });

    auto* label = app.add_subcommand("label", "label a target tree with an atlas");
    std::string label_atlas;
    std::string label_target;
    std::string label_method = "lddmm+ot";
    std::string label_assign = "bottom-up";
    std::string label_config;
    int label_resample = 20;
    std::string label_out;
    label->add_option("--atlas", label_atlas, "atlas JSON (or a bare labeled tree)")->required();
    label->add_option("--target", label_target, "target tree JSON")->required();
    label->add_option("--method", label_method, "ot | lddmm | lddmm+ot")->capture_default_str();
    label->add_option("--assign", label_assign, "direct | bottom-up")->capture_default_str();
    label->add_option("--config", label_config, "registration config JSON");
    label->add_option("--resample", label_resample, "points per branch for ot matching")
        ->capture_default_str();
    label->add_option("--out", label_out, "labeling JSON")->required();
    label->callback([&] {
        run_label(label_atlas, label_target, label_method, label_assign, label_config,
                  label_resample, label_out);
    });

    auto* eval = app.add_subcommand("eval", "run an experiment spec over a dataset");
    std::string eval_dataset;
    std::string eval_spec;
    std::string eval_out;
    eval->add_option("--dataset", eval_dataset, "dataset directory")->required();
    eval->add_option("--spec", eval_spec, "experiment spec JSON")->required();
    eval->add_option("--out", eval_out, "report CSV")->required();
    eval->callback([&] { run_eval(eval_dataset, eval_spec, eval_out, jobs); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
