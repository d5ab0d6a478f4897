#pragma once

// Experiment harness: labeling-method dispatch, registration memoization,
// cross-validation over training-set sizes, and the precision-vs-iteration
// curve, with CSV/JSON reporting. Everything is a pure function of
// (dataset, spec), so reports are byte-stable across runs and worker counts.

#include <cstdint>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "vesselatlas/atlas.hpp"
#include "vesselatlas/labeling.hpp"
#include "vesselatlas/registration.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

enum class Method { kOt, kLddmm, kLddmmOt };
enum class Assignment { kDirect, kBottomUp };
enum class ExperimentMode { kCrossValidation, kIterationCurve };
enum class AtlasScope { kTrain, kAll };

Method parse_method(std::string_view text);  // "ot" | "lddmm" | "lddmm+ot"
std::string_view format_method(Method method);
Assignment parse_assignment(std::string_view text);  // "direct" | "bottom-up"
std::string_view format_assignment(Assignment assignment);
ExperimentMode parse_mode(std::string_view text);  // "cross-validation" | "iteration-curve"
std::string_view format_mode(ExperimentMode mode);
AtlasScope parse_scope(std::string_view text);  // "train" | "all"
std::string_view format_scope(AtlasScope scope);

struct ExperimentSpec {
    ExperimentMode mode = ExperimentMode::kCrossValidation;
    Method method = Method::kLddmmOt;
    Assignment assignment = Assignment::kBottomUp;
    std::vector<double> fractions{0.02, 0.1, 0.2, 0.4, 0.8};
    int repetitions = 10;
    std::uint64_t seed = 0;
    int atlas_iterations = 1;  // the k of an LDDMM-k atlas
    AtlasScope atlas_scope = AtlasScope::kTrain;
    // Leave-one-in scoring method; selection always labels bottom-up with a
    // raw (iteration-0) candidate atlas.
    Method selection_method = Method::kLddmm;
    int resample_count = 20;  // branch resampling for ot matching
    int k_max = 1;            // iteration-curve mode
    int reference_index = 0;  // iteration-curve mode
    RegistrationConfig registration;
};

void validate_experiment_spec(const ExperimentSpec& spec);
ExperimentSpec experiment_spec_from_json(std::string_view text);
std::string experiment_spec_to_json(const ExperimentSpec& spec);
ExperimentSpec load_experiment_spec(const std::string& path);

// Registration results keyed by (source, target, config) bytes. Duplicate
// concurrent computes are allowed and harmless: registration is
// deterministic, so both produce the same value. Failures are not cached.
class RegistrationMemo {
  public:
    RegistrationResult get_or_compute(const VascularTree& source,
                                      const VascularTree& target,
                                      const RegistrationConfig& cfg);

  private:
    std::mutex mutex_;
    std::unordered_map<std::string, RegistrationResult> cache_;
};

struct MethodRun {
    Labeling labels;
    bool degraded = false;  // registration failed; labeled from the undeformed atlas
};

// Labels a target with the atlas by the chosen method: ot matches branches
// against the undeformed atlas tree, lddmm registers then votes point
// labels, lddmm+ot registers then matches branches. memo may be null.
MethodRun run_method(const Atlas& atlas,
                     const VascularTree& target,
                     Method method,
                     Assignment assignment,
                     const RegistrationConfig& cfg,
                     int resample_count,
                     RegistrationMemo* memo);

struct CellResult {
    double fraction = 0.0;
    int repetition = 0;              // 0-based
    int reference = 0;               // dataset index of the selected reference
    std::vector<int> train_indices;  // ascending dataset indices
    std::vector<int> test_indices;
    std::vector<double> precisions;  // aligned with test_indices
    double mean = 0.0;
    double stddev = 0.0;  // sample stddev over test trees, 0 when fewer than 2
    bool degraded = false;
};

struct CrossValidationReport {
    std::vector<CellResult> cells;  // fractions-major, repetitions-minor
};

CrossValidationReport cross_validate(const std::vector<VascularTree>& dataset,
                                     const ExperimentSpec& spec,
                                     RegistrationMemo* memo = nullptr,
                                     int jobs = 1);

struct IterationPoint {
    int iteration = 0;
    std::vector<int> tree_indices;  // every dataset tree except the reference
    std::vector<double> precisions;
    double mean = 0.0;
    bool degraded = false;
};

struct IterationReport {
    std::vector<IterationPoint> points;  // k = 0 .. k_max
    int reference = 0;
};

// Labels all other trees with the iteration-k atlas for each k up to
// spec.k_max, always assigning bottom-up.
IterationReport precision_vs_iteration(const std::vector<VascularTree>& dataset,
                                       const ExperimentSpec& spec,
                                       RegistrationMemo* memo = nullptr,
                                       int jobs = 1);

std::string cross_validation_csv(const CrossValidationReport& report);
std::string iteration_csv(const IterationReport& report);

struct Dataset {
    std::vector<VascularTree> trees;
    std::vector<std::string> files;  // load order, relative to the directory
};

// Loads every tree of a dataset directory: the manifest.json "files" list
// when present, otherwise all *.json files in name order.
Dataset load_dataset(const std::string& dir);

}  // namespace vesselatlas
