#include "vesselatlas/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/parallel.hpp"
#include "vesselatlas/random.hpp"
#include "vesselatlas/tree_io.hpp"

namespace vesselatlas {

Method parse_method(std::string_view text) {
    if (text == "ot") return Method::kOt;
    if (text == "lddmm") return Method::kLddmm;
    if (text == "lddmm+ot") return Method::kLddmmOt;
    throw ValidationError("unknown method '" + std::string(text) +
                          "' (expected ot, lddmm, or lddmm+ot)");
}

std::string_view format_method(Method method) {
    switch (method) {
        case Method::kOt: return "ot";
        case Method::kLddmm: return "lddmm";
        case Method::kLddmmOt: return "lddmm+ot";
    }
    return "lddmm+ot";
}

Assignment parse_assignment(std::string_view text) {
    if (text == "direct") return Assignment::kDirect;
    if (text == "bottom-up") return Assignment::kBottomUp;
    throw ValidationError("unknown assignment '" + std::string(text) +
                          "' (expected direct or bottom-up)");
}

std::string_view format_assignment(Assignment assignment) {
    return assignment == Assignment::kDirect ? "direct" : "bottom-up";
}

ExperimentMode parse_mode(std::string_view text) {
    if (text == "cross-validation") return ExperimentMode::kCrossValidation;
    if (text == "iteration-curve") return ExperimentMode::kIterationCurve;
    throw ValidationError("unknown mode '" + std::string(text) +
                          "' (expected cross-validation or iteration-curve)");
}

std::string_view format_mode(ExperimentMode mode) {
    return mode == ExperimentMode::kCrossValidation ? "cross-validation" : "iteration-curve";
}

AtlasScope parse_scope(std::string_view text) {
    if (text == "train") return AtlasScope::kTrain;
    if (text == "all") return AtlasScope::kAll;
    throw ValidationError("unknown atlas scope '" + std::string(text) +
                          "' (expected train or all)");
}

std::string_view format_scope(AtlasScope scope) {
    return scope == AtlasScope::kTrain ? "train" : "all";
}

void validate_experiment_spec(const ExperimentSpec& spec) {
    if (spec.fractions.empty()) throw ValidationError("experiment needs at least one fraction");
    for (double f : spec.fractions) {
        if (!(f > 0.0) || !(f <= 1.0)) throw ValidationError("fractions must lie in (0, 1]");
    }
    if (spec.repetitions < 1) throw ValidationError("repetitions must be at least 1");
    if (spec.atlas_iterations < 0) throw ValidationError("atlas iterations must be nonnegative");
    if (spec.resample_count < 2) throw ValidationError("resample count must be at least 2");
    if (spec.k_max < 0) throw ValidationError("k_max must be nonnegative");
    if (spec.reference_index < 0) throw ValidationError("reference index must be nonnegative");
    validate_registration_config(spec.registration);
}

namespace {

using nlohmann::json;

int int_field(const json& obj, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw ValidationError(std::string("spec field '") + key + "' must be an integer");
    }
    return v.get<int>();
}

std::string string_field(const json& obj, const char* key) {
    const json& v = obj.at(key);
    if (!v.is_string()) {
        throw ValidationError(std::string("spec field '") + key + "' must be a string");
    }
    return v.get<std::string>();
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const char* where) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (item.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ValidationError(std::string("unknown spec field '") + item.key() + "' in " +
                                  where);
        }
    }
}

std::string read_file(const std::string& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(std::string("cannot open ") + what + ": " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

}  // namespace

ExperimentSpec experiment_spec_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid experiment spec JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("experiment spec must be a JSON object");
    reject_unknown_keys(doc,
                        {"mode", "method", "assignment", "fractions", "repetitions", "seed",
                         "atlas_iterations", "atlas_scope", "selection_method", "resample_count",
                         "k_max", "reference_index", "registration"},
                        "experiment spec");

    ExperimentSpec spec;
    if (doc.contains("mode")) spec.mode = parse_mode(string_field(doc, "mode"));
    if (doc.contains("method")) spec.method = parse_method(string_field(doc, "method"));
    if (doc.contains("assignment")) {
        spec.assignment = parse_assignment(string_field(doc, "assignment"));
    }
    if (doc.contains("fractions")) {
        const json& fr = doc.at("fractions");
        if (!fr.is_array() || fr.empty()) {
            throw ValidationError("'fractions' must be a non-empty array");
        }
        spec.fractions.clear();
        for (const json& v : fr) {
            if (!v.is_number()) throw ValidationError("fractions must be numbers");
            spec.fractions.push_back(v.get<double>());
        }
    }
    spec.repetitions = int_field(doc, "repetitions", spec.repetitions);
    if (doc.contains("seed")) {
        const json& v = doc.at("seed");
        const bool ok = v.is_number_unsigned() ||
                        (v.is_number_integer() && v.get<std::int64_t>() >= 0);
        if (!ok) throw ValidationError("'seed' must be a nonnegative integer");
        spec.seed = v.get<std::uint64_t>();
    }
    spec.atlas_iterations = int_field(doc, "atlas_iterations", spec.atlas_iterations);
    if (doc.contains("atlas_scope")) spec.atlas_scope = parse_scope(string_field(doc, "atlas_scope"));
    if (doc.contains("selection_method")) {
        spec.selection_method = parse_method(string_field(doc, "selection_method"));
    }
    spec.resample_count = int_field(doc, "resample_count", spec.resample_count);
    spec.k_max = int_field(doc, "k_max", spec.k_max);
    spec.reference_index = int_field(doc, "reference_index", spec.reference_index);
    if (doc.contains("registration")) {
        const json& reg = doc.at("registration");
        if (!reg.is_object()) throw ValidationError("'registration' must be an object");
        spec.registration = registration_config_from_json(reg.dump());
    }
    validate_experiment_spec(spec);
    return spec;
}

std::string experiment_spec_to_json(const ExperimentSpec& spec) {
    json doc;
    doc["mode"] = std::string(format_mode(spec.mode));
    doc["method"] = std::string(format_method(spec.method));
    doc["assignment"] = std::string(format_assignment(spec.assignment));
    doc["fractions"] = spec.fractions;
    doc["repetitions"] = spec.repetitions;
    doc["seed"] = spec.seed;
    doc["atlas_iterations"] = spec.atlas_iterations;
    doc["atlas_scope"] = std::string(format_scope(spec.atlas_scope));
    doc["selection_method"] = std::string(format_method(spec.selection_method));
    doc["resample_count"] = spec.resample_count;
    doc["k_max"] = spec.k_max;
    doc["reference_index"] = spec.reference_index;
    doc["registration"] = json::parse(registration_config_to_json(spec.registration));
    return doc.dump(2) + "\n";
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    return experiment_spec_from_json(read_file(path, "experiment spec"));
}

RegistrationResult RegistrationMemo::get_or_compute(const VascularTree& source,
                                                    const VascularTree& target,
                                                    const RegistrationConfig& cfg) {
    std::string key = serialize_tree(source);
    key.push_back('\x01');
    key += serialize_tree(target);
    key.push_back('\x01');
    key += registration_config_to_json(cfg);

    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
    }
    RegistrationResult result = register_trees(source, target, cfg);
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.emplace(std::move(key), std::move(result)).first->second;
}

MethodRun run_method(const Atlas& atlas,
                     const VascularTree& target,
                     Method method,
                     Assignment assignment,
                     const RegistrationConfig& cfg,
                     int resample_count,
                     RegistrationMemo* memo) {
    bool degraded = false;
    LabelProbabilityTable table;

    if (method == Method::kOt) {
        table = table_from_assignment(ot_match(atlas.mean_tree, target, resample_count),
                                      atlas.mean_tree);
    } else {
        const VascularTree* deformed = &atlas.mean_tree;
        std::optional<RegistrationResult> reg;
        try {
            reg = memo != nullptr ? memo->get_or_compute(atlas.mean_tree, target, cfg)
                                  : register_trees(atlas.mean_tree, target, cfg);
            deformed = &reg->deformed_source;
        } catch (const NumericalError&) {
            degraded = true;  // label from the undeformed atlas instead
        }
        table = method == Method::kLddmm
                    ? vote_labels(*deformed, target)
                    : table_from_assignment(ot_match(*deformed, target, resample_count),
                                            *deformed);
    }

    MethodRun run;
    run.degraded = degraded;
    run.labels = assignment == Assignment::kDirect ? direct_assign(table)
                                                   : bottom_up_assign(table, target);
    if (assignment == Assignment::kBottomUp && !bottom_up_invariant_holds(run.labels, target)) {
        throw NumericalError("bottom-up labeling violated its structural invariant");
    }
    return run;
}

namespace {

Atlas raw_atlas(const VascularTree& reference) {
    return Atlas{reference, MomentaField(static_cast<std::size_t>(reference.total_point_count())),
                 reference, 0};
}

void mean_and_stddev(const std::vector<double>& values, double* mean, double* stddev) {
    const std::size_t m = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    *mean = m > 0 ? sum / static_cast<double>(m) : 0.0;
    double ss = 0.0;
    for (double v : values) ss += (v - *mean) * (v - *mean);
    *stddev = m > 1 ? std::sqrt(ss / static_cast<double>(m - 1)) : 0.0;
}

}  // namespace

CrossValidationReport cross_validate(const std::vector<VascularTree>& dataset,
                                     const ExperimentSpec& spec,
                                     RegistrationMemo* memo,
                                     int jobs) {
    validate_experiment_spec(spec);
    const int n = static_cast<int>(dataset.size());
    if (n < 2) throw ValidationError("cross-validation needs at least 2 trees");

    RegistrationMemo local;
    RegistrationMemo* shared = memo != nullptr ? memo : &local;

    const std::size_t cell_count =
        spec.fractions.size() * static_cast<std::size_t>(spec.repetitions);
    std::vector<CellResult> cells(cell_count);
    // With a single cell the cell-level pool is idle, so thread the inner
    // loops instead; either way results land in index-addressed slots.
    const int inner_jobs = cell_count == 1 ? jobs : 1;

    parallel_for(cell_count, jobs, [&](std::size_t cell) {
        const std::size_t fi = cell / static_cast<std::size_t>(spec.repetitions);
        const int rep = static_cast<int>(cell % static_cast<std::size_t>(spec.repetitions));
        const double fraction = spec.fractions[fi];

        Rng rng(derive_seed(spec.seed, cell));
        const int train_size =
            std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n - 1);

        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        for (int i = 0; i < train_size; ++i) {
            const std::size_t j = static_cast<std::size_t>(i) +
                                  static_cast<std::size_t>(
                                      rng.uniform_index(static_cast<std::uint64_t>(n - i)));
            std::swap(order[static_cast<std::size_t>(i)], order[j]);
        }
        std::vector<int> train(order.begin(), order.begin() + train_size);
        std::sort(train.begin(), train.end());
        std::vector<int> test(order.begin() + train_size, order.end());
        std::sort(test.begin(), test.end());

        CellResult& result = cells[cell];
        result.fraction = fraction;
        result.repetition = rep;
        result.train_indices = train;
        result.test_indices = test;
        result.reference = train.front();

        try {
            std::vector<VascularTree> train_trees;
            train_trees.reserve(train.size());
            for (int t : train) train_trees.push_back(dataset[static_cast<std::size_t>(t)]);

            int picked = 0;
            if (train_trees.size() >= 2) {
                const auto labeler = [&](const VascularTree& candidate,
                                         const VascularTree& tgt) {
                    return run_method(raw_atlas(candidate), tgt, spec.selection_method,
                                      Assignment::kBottomUp, spec.registration,
                                      spec.resample_count, shared)
                        .labels;
                };
                picked = select_reference(train_trees, labeler, inner_jobs).index;
            }
            result.reference = train[static_cast<std::size_t>(picked)];
            const VascularTree& reference = train_trees[static_cast<std::size_t>(picked)];

            Atlas atlas = raw_atlas(reference);
            if (spec.method != Method::kOt && spec.atlas_iterations > 0) {
                const auto register_fn = [&](const VascularTree& s, const VascularTree& t,
                                             const RegistrationConfig& c) {
                    return shared->get_or_compute(s, t, c);
                };
                const std::vector<VascularTree>& atlas_targets =
                    spec.atlas_scope == AtlasScope::kTrain ? train_trees : dataset;
                auto [built, build_report] =
                    build_atlas(reference, atlas_targets, spec.atlas_iterations,
                                spec.registration, inner_jobs, register_fn);
                atlas = std::move(built);
                if (build_report.aborted) result.degraded = true;
            }

            result.precisions.assign(test.size(), 0.0);
            std::vector<char> flags(test.size(), 0);
            parallel_for(test.size(), inner_jobs, [&](std::size_t ti) {
                const VascularTree& tgt = dataset[static_cast<std::size_t>(test[ti])];
                const MethodRun run = run_method(atlas, tgt, spec.method, spec.assignment,
                                                 spec.registration, spec.resample_count, shared);
                result.precisions[ti] = precision(run.labels, tgt.labels());
                if (run.degraded) flags[ti] = 1;
            });
            for (char f : flags) result.degraded = result.degraded || f != 0;
            mean_and_stddev(result.precisions, &result.mean, &result.stddev);
        } catch (const NumericalError&) {
            result.precisions.clear();
            result.mean = 0.0;
            result.stddev = 0.0;
            result.degraded = true;
        }
    });

    CrossValidationReport report;
    report.cells = std::move(cells);
    return report;
}

IterationReport precision_vs_iteration(const std::vector<VascularTree>& dataset,
                                       const ExperimentSpec& spec,
                                       RegistrationMemo* memo,
                                       int jobs) {
    validate_experiment_spec(spec);
    const int n = static_cast<int>(dataset.size());
    if (n < 2) throw ValidationError("the iteration curve needs at least 2 trees");
    if (spec.reference_index >= n) throw ValidationError("reference index out of range");

    RegistrationMemo local;
    RegistrationMemo* shared = memo != nullptr ? memo : &local;
    const VascularTree& reference = dataset[static_cast<std::size_t>(spec.reference_index)];
    const auto register_fn = [&](const VascularTree& s, const VascularTree& t,
                                 const RegistrationConfig& c) {
        return shared->get_or_compute(s, t, c);
    };

    std::vector<int> targets;
    targets.reserve(static_cast<std::size_t>(n) - 1);
    for (int i = 0; i < n; ++i) {
        if (i != spec.reference_index) targets.push_back(i);
    }

    IterationReport report;
    report.reference = spec.reference_index;
    for (int k = 0; k <= spec.k_max; ++k) {
        Atlas atlas = raw_atlas(reference);
        bool degraded = false;
        if (k > 0) {
            auto [built, build_report] =
                build_atlas(reference, dataset, k, spec.registration, jobs, register_fn);
            atlas = std::move(built);
            degraded = build_report.aborted;
        }

        IterationPoint point;
        point.iteration = k;
        point.tree_indices = targets;
        point.precisions.assign(targets.size(), 0.0);
        std::vector<char> flags(targets.size(), 0);
        parallel_for(targets.size(), jobs, [&](std::size_t i) {
            const VascularTree& tgt = dataset[static_cast<std::size_t>(targets[i])];
            const MethodRun run = run_method(atlas, tgt, spec.method, Assignment::kBottomUp,
                                             spec.registration, spec.resample_count, shared);
            point.precisions[i] = precision(run.labels, tgt.labels());
            if (run.degraded) flags[i] = 1;
        });
        for (char f : flags) degraded = degraded || f != 0;
        double stddev_unused = 0.0;
        mean_and_stddev(point.precisions, &point.mean, &stddev_unused);
        point.degraded = degraded;
        report.points.push_back(std::move(point));
    }
    return report;
}

std::string cross_validation_csv(const CrossValidationReport& report) {
    std::string out = "fraction,repetition,tree_index,precision,cell_mean,cell_std,cell_degraded\n";
    for (const CellResult& cell : report.cells) {
        const std::size_t rows = std::min(cell.test_indices.size(), cell.precisions.size());
        for (std::size_t i = 0; i < rows; ++i) {
            out += format_double(cell.fraction);
            out += ',';
            out += std::to_string(cell.repetition);
            out += ',';
            out += std::to_string(cell.test_indices[i]);
            out += ',';
            out += format_double(cell.precisions[i]);
            out += ',';
            out += format_double(cell.mean);
            out += ',';
            out += format_double(cell.stddev);
            out += ',';
            out += cell.degraded ? '1' : '0';
            out += '\n';
        }
    }
    return out;
}

std::string iteration_csv(const IterationReport& report) {
    std::string out = "iteration,tree_index,precision,iteration_mean\n";
    for (const IterationPoint& point : report.points) {
        for (std::size_t i = 0; i < point.precisions.size(); ++i) {
            out += std::to_string(point.iteration);
            out += ',';
            out += std::to_string(point.tree_indices[i]);
            out += ',';
            out += format_double(point.precisions[i]);
            out += ',';
            out += format_double(point.mean);
            out += '\n';
        }
    }
    return out;
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw ValidationError("dataset directory not found: " + dir);

    std::vector<std::string> files;
    const fs::path manifest = root / "manifest.json";
    if (fs::exists(manifest)) {
        json doc;
        try {
            doc = json::parse(read_file(manifest.string(), "dataset manifest"));
        } catch (const json::exception& e) {
            throw ValidationError(std::string("invalid dataset manifest: ") + e.what());
        }
        if (!doc.is_object() || !doc.contains("files") || !doc.at("files").is_array()) {
            throw ValidationError("dataset manifest needs a 'files' array");
        }
        for (const json& v : doc.at("files")) {
            if (!v.is_string()) throw ValidationError("manifest file names must be strings");
            files.push_back(v.get<std::string>());
        }
    } else {
        for (const auto& entry : fs::directory_iterator(root)) {
            if (!entry.is_regular_file()) continue;
            const std::string name = entry.path().filename().string();
            if (entry.path().extension() != ".json") continue;
            if (name == "manifest.json" || name.ends_with(".manifest.json")) continue;
            files.push_back(name);
        }
        std::sort(files.begin(), files.end());
    }
    if (files.empty()) throw ValidationError("dataset directory has no trees: " + dir);

    Dataset dataset;
    dataset.files = files;
    dataset.trees.reserve(files.size());
    for (const std::string& name : files) {
        dataset.trees.push_back(load_tree_file((root / name).string()));
    }
    return dataset;
}

}  // namespace vesselatlas
