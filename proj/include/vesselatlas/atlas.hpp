#pragma once

// Atlas construction by momenta averaging: register the current atlas tree
// onto every target, average the initial momenta fields, shoot the atlas
// tree along the mean, and iterate. Iteration 0 is the raw reference.

#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vesselatlas/labeling.hpp"
#include "vesselatlas/registration.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

struct Atlas {
    VascularTree reference;    // labeled
    MomentaField mean_momenta; // aligned with the atlas tree's points
    VascularTree mean_tree;    // reference shot along the mean, labels inherited
    int iteration = 0;
};

struct AtlasTargetRecord {
    int iteration = 0;     // 1-based, the iteration this registration served
    int target_index = 0;
    double objective = 0.0;
    double energy = 0.0;
    double attachment = 0.0;
    bool line_search_warning = false;
};

struct AtlasBuildReport {
    std::vector<AtlasTargetRecord> records;   // one per completed (iteration, target)
    std::vector<double> mean_momentum_norms;  // one per completed iteration
    bool reference_in_targets = true;
    bool aborted = false;        // a registration diverged; atlas is the last completed iteration
    int aborted_iteration = 0;   // valid when aborted
};

// Hook for callers that cache registrations; the default just registers.
using RegisterFn = std::function<RegistrationResult(
    const VascularTree& source, const VascularTree& target, const RegistrationConfig& cfg)>;

std::pair<Atlas, AtlasBuildReport> build_atlas(const VascularTree& reference,
                                               const std::vector<VascularTree>& targets,
                                               int iterations,
                                               const RegistrationConfig& cfg,
                                               int jobs = 1,
                                               const RegisterFn& register_fn = {});

struct ReferenceSelection {
    int index = 0;
    bool degraded = false;               // no candidate labeled anything correctly
    std::vector<double> mean_precision;  // per candidate
};

// Leave-one-in: each candidate labels every other annotated tree via the
// given labeler; the candidate with the best mean precision wins, ties to
// the lowest index. A labeler failure scores that pair 0.
ReferenceSelection select_reference(
    const std::vector<VascularTree>& annotated,
    const std::function<Labeling(const VascularTree& candidate, const VascularTree& target)>& labeler,
    int jobs = 1);

std::string atlas_to_json(const Atlas& atlas);
Atlas atlas_from_json(std::string_view text);
Atlas load_atlas_file(const std::string& path);  // atlas JSON or a bare tree file
void save_atlas_file(const Atlas& atlas, const std::string& path);

}  // namespace vesselatlas
