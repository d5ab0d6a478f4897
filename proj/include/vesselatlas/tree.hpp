#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vesselatlas/geometry.hpp"

namespace vesselatlas {

// Label 0 is the shared proximal trunk ("Common Artery"); 1..6 are the named
// arteries, 7 labels total.
using LabelId = int;
inline constexpr LabelId kCommonArteryLabel = 0;
inline constexpr int kLabelCount = 7;
inline constexpr double kJoinTolerance = 1e-6;  // mm

inline bool label_in_range(LabelId label) { return label >= 0 && label < kLabelCount; }

// One centerline polyline, parent-end first.
struct Branch {
    std::vector<Point3> points;
    LabelId label = kCommonArteryLabel;
};

// Labeled binary tree of branches. Immutable once constructed: all mutation
// paths go through create()/with_point_positions(), which re-validate.
class VascularTree {
  public:
    // Validates every invariant and normalizes branch orientation so that each
    // branch's first point sits at its parent's end. Throws ValidationError.
    static VascularTree create(std::vector<Branch> branches,
                               std::vector<std::pair<int, int>> edges,
                               int root,
                               double join_tolerance = kJoinTolerance);

    int branch_count() const { return static_cast<int>(branches_.size()); }
    const Branch& branch(int i) const { return branches_.at(static_cast<std::size_t>(i)); }
    const std::vector<Branch>& branches() const { return branches_; }
    int root() const { return root_; }

    bool adjacent(int i, int j) const {
        return adjacency_[static_cast<std::size_t>(i) * branches_.size() +
                          static_cast<std::size_t>(j)] != 0;
    }
    const std::vector<std::pair<int, int>>& edges() const { return edges_; }

    const std::vector<int>& children_of(int i) const;
    std::optional<int> parent_of(int i) const;
    bool is_leaf(int i) const { return children_of(i).empty(); }

    // Branch indices in children-before-parents order (deepest first).
    const std::vector<int>& bottom_up_order() const { return bottom_up_order_; }

    int total_point_count() const { return total_points_; }

    // Same topology and labels, new coordinates (flat order: branch-major,
    // point-minor). Geometry invariants are re-checked.
    VascularTree with_point_positions(std::span<const Point3> flat_points) const;

    std::vector<LabelId> labels() const;

  private:
    VascularTree() = default;

    std::vector<Branch> branches_;
    std::vector<std::uint8_t> adjacency_;  // row-major n*n, symmetric, zero diagonal
    std::vector<std::pair<int, int>> edges_;
    int root_ = 0;
    std::vector<int> parent_;  // -1 at root
    std::vector<std::vector<int>> children_;
    std::vector<int> bottom_up_order_;
    int total_points_ = 0;
};

std::vector<int> leaves(const VascularTree& tree);
std::vector<int> children(const VascularTree& tree, int index);
std::optional<int> parent(const VascularTree& tree, int index);

// Flat array of all tree points with back-references to (branch, point).
struct PointCloudView {
    std::vector<Point3> points;
    std::vector<std::pair<int, int>> owner;  // (branch index, point index)
    std::vector<int> branch_offset;          // offset of branch b's first point; size n+1

    static PointCloudView of(const VascularTree& tree);
    VascularTree apply_to(const VascularTree& tree) const;
    int flat_index(int branch, int point) const { return branch_offset[branch] + point; }
};

// Uniform arc-length resampling to exactly d points; endpoints kept exactly.
Branch resample_branch(const Branch& branch, int d);

double branch_arc_length(const Branch& branch);

// Structural equality with coordinate tolerance; used for containment checks.
bool trees_close(const VascularTree& a, const VascularTree& b, double tol = 1e-12);

}  // namespace vesselatlas
