#pragma once

// Label transfer from a (deformed) labeled atlas tree to a target tree:
// probability estimation by closest-point voting or by one-to-one branch
// matching, then assignment directly or bottom-up with the common-trunk rule.

#include <vector>

#include "vesselatlas/tree.hpp"

namespace vesselatlas {

struct LabelProbabilityTable {
    int label_count = kLabelCount;
    std::vector<std::vector<double>> rows;  // one row per target branch
};

void validate_table(const LabelProbabilityTable& table);

// Partial one-to-one branch matching, atlas branch alpha x target branch beta.
struct AssignmentMatrix {
    int atlas_branches = 0;
    int target_branches = 0;
    std::vector<int> target_of_atlas;  // -1 when unmatched
    std::vector<int> atlas_of_target;  // -1 when unmatched

    bool assigned(int alpha, int beta) const {
        return target_of_atlas[static_cast<std::size_t>(alpha)] == beta;
    }
};

using Labeling = std::vector<LabelId>;

// Each target point votes for the branch label of its nearest atlas point
// (ties to the lowest flat point index); rows are per-branch vote fractions.
LabelProbabilityTable vote_labels(const VascularTree& deformed_atlas, const VascularTree& target);

// Matches branches one-to-one by Euclidean distance between their
// resampled coordinate stacks in R^{3d}; minimizes the total distance and
// breaks ties toward the lexicographically smallest assignment.
AssignmentMatrix ot_match(const VascularTree& deformed_atlas, const VascularTree& target,
                          int resample_count = 20);

// One-hot rows from a branch matching; unmatched target branches get a
// uniform row, so downstream assignment falls back to the tie rule.
LabelProbabilityTable table_from_assignment(const AssignmentMatrix& match,
                                            const VascularTree& deformed_atlas);

// Per-branch argmax, ties to the lowest label.
Labeling direct_assign(const LabelProbabilityTable& table);

// Leaves take the argmax; interior branches (children first) take their
// children's common label, or the common-trunk label 0 when children differ.
Labeling bottom_up_assign(const LabelProbabilityTable& table, const VascularTree& target);

// Structural postcondition of bottom_up_assign, checkable on any labeling.
bool bottom_up_invariant_holds(const Labeling& labels, const VascularTree& tree);

double precision(const Labeling& predicted, const Labeling& truth);

}  // namespace vesselatlas
