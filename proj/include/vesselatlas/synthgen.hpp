#pragma once

// Synthetic labeled-tree benchmark generator. A hand-authored 17-branch,
// 7-label template is deformed by random in-model geodesic shoots, and with
// some probability one leaf-pair subtree is relocated onto another vessel,
// changing the anatomical arrangement the way real populations vary.
// Interior ground-truth labels are recomputed bottom-up after perturbation,
// so generated truth always satisfies the labeling module's structural rule.

#include <cstdint>
#include <vector>

#include "vesselatlas/random.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

// Typical shoot displacement: a few percent of the tree's extent.
inline constexpr double kDefaultMomentaScale = 0.002;

VascularTree default_template();

struct GeneratorConfig {
    VascularTree template_tree = default_template();
    double momenta_scale = kDefaultMomentaScale;  // normalized Gaussian momenta stddev
    double topology_swap_prob = 0.5;              // chance of one subtree relocation
    double branch_point_jitter = 0.0;             // junction slide, fraction of branch arc
    std::uint64_t seed = 0;
};

void validate_generator_config(const GeneratorConfig& cfg);

// Recomputes interior labels from the leaves (common child label, else the
// common-trunk label 0); leaves keep their labels.
VascularTree relabel_interior(const VascularTree& tree);

// Detaches a random leaf-pair branch with its subtree, merges the parent
// with the orphaned sibling into one vessel, and reattaches the subtree at a
// random arc position on a random host vessel. Branch count, binarity and
// the leaf label multiset are preserved. Throws ValidationError when the cut
// degenerates; callers retry with fresh draws.
VascularTree perturb_topology(const VascularTree& tree, Rng& rng);

std::vector<VascularTree> generate_dataset(const GeneratorConfig& cfg, int count);

}  // namespace vesselatlas
