#pragma once

// Bridges trees and the particle system. Junction endpoints are stored once
// per incident branch, so a tree's flat point list contains coincident
// copies; the deformation must keep those copies coincident. ControlCloud
// collapses coincident points to unique control particles. Because the
// dynamics depend on momenta only through their per-position sums, shooting
// the unique system with group-summed momenta reproduces the full system
// exactly, while the copies share one trajectory by construction.

#include <span>
#include <vector>

#include "vesselatlas/geometry.hpp"
#include "vesselatlas/kernel.hpp"
#include "vesselatlas/shooting.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

struct ControlCloud {
    std::vector<Point3> points;        // unique control positions, first-appearance order
    std::vector<int> control_of_point; // flat point index -> control index
    std::vector<int> group_size;       // members per control

    static ControlCloud of(const VascularTree& tree, double join_tolerance = kJoinTolerance);

    int control_count() const { return static_cast<int>(points.size()); }
    int point_count() const { return static_cast<int>(control_of_point.size()); }

    // Per-control sums of a flat per-point field (momenta live here).
    std::vector<Vec3> gather_sums(std::span<const Vec3> per_point) const;

    // Expands control values back to the flat view; coincident copies come
    // out bitwise identical.
    std::vector<Point3> scatter(std::span<const Point3> per_control) const;

    // Splits control values equally across group members, the canonical
    // flat-view representative of a summed field.
    std::vector<Vec3> spread_equal(std::span<const Vec3> per_control) const;
};

Aabb bounding_box(const VascularTree& tree);

// sigma0 <= 0 resolves to half the tree's bounding-box max side.
KernelSpec resolve_kernel_spec(KernelSpec spec, const VascularTree& tree);

// Deforms the whole tree by geodesic shooting from per-point momenta (flat
// order, one entry per stored point). Momenta on coincident copies act
// through their sum.
VascularTree shoot_tree(const VascularTree& tree,
                        std::span<const Vec3> momenta,
                        const KernelSpec& spec,
                        const IntegratorConfig& cfg);

}  // namespace vesselatlas
