#include "vesselatlas/tree.hpp"

#include <algorithm>
#include <deque>
#include <string>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

namespace {

std::string branch_msg(int index, const std::string& what) {
    return "branch " + std::to_string(index) + ": " + what;
}

void check_branch_geometry(const Branch& b, int index) {
    if (b.points.size() < 2)
        throw ValidationError(branch_msg(index, "needs at least 2 points"));
    for (const auto& p : b.points)
        if (!is_finite(p)) throw ValidationError(branch_msg(index, "non-finite coordinate"));
    for (std::size_t k = 0; k + 1 < b.points.size(); ++k)
        if (b.points[k] == b.points[k + 1])
            throw ValidationError(branch_msg(index, "zero-length segment at point " +
                                                        std::to_string(k)));
    if (!label_in_range(b.label))
        throw ValidationError(branch_msg(index, "label " + std::to_string(b.label) +
                                                    " out of range [0," +
                                                    std::to_string(kLabelCount - 1) + "]"));
}

bool near(const Point3& a, const Point3& b, double tol) { return distance(a, b) <= tol; }

}  // namespace

VascularTree VascularTree::create(std::vector<Branch> branches,
                                  std::vector<std::pair<int, int>> edges,
                                  int root,
                                  double join_tolerance) {
    const int n = static_cast<int>(branches.size());
    if (n == 0) throw ValidationError("tree has no branches");
    if (root < 0 || root >= n)
        throw ValidationError("root index " + std::to_string(root) + " out of range");
    for (int i = 0; i < n; ++i) check_branch_geometry(branches[i], i);

    VascularTree t;
    t.adjacency_.assign(static_cast<std::size_t>(n) * n, 0);
    for (auto& [i, j] : edges) {
        if (i < 0 || i >= n || j < 0 || j >= n)
            throw ValidationError("edge (" + std::to_string(i) + "," + std::to_string(j) +
                                  ") out of range");
        if (i == j) throw ValidationError(branch_msg(i, "self edge"));
        if (i > j) std::swap(i, j);
        auto& cell = t.adjacency_[static_cast<std::size_t>(i) * n + j];
        if (cell) throw ValidationError("duplicate edge (" + std::to_string(i) + "," +
                                        std::to_string(j) + ")");
        cell = 1;
        t.adjacency_[static_cast<std::size_t>(j) * n + i] = 1;
    }
    if (static_cast<int>(edges.size()) != n - 1)
        throw ValidationError("not a tree: " + std::to_string(edges.size()) + " edges for " +
                              std::to_string(n) + " branches");
    std::sort(edges.begin(), edges.end());
    t.edges_ = std::move(edges);

    // BFS from the root; connectivity plus the edge count makes it a tree.
    t.parent_.assign(n, -2);
    t.children_.assign(n, {});
    t.parent_[root] = -1;
    std::deque<int> queue{root};
    std::vector<int> bfs_order;
    while (!queue.empty()) {
        const int b = queue.front();
        queue.pop_front();
        bfs_order.push_back(b);
        for (int c = 0; c < n; ++c) {
            if (!t.adjacency_[static_cast<std::size_t>(b) * n + c] || t.parent_[c] != -2)
                continue;
            t.parent_[c] = b;
            t.children_[b].push_back(c);
            queue.push_back(c);
        }
    }
    if (static_cast<int>(bfs_order.size()) != n)
        throw ValidationError("not a tree: graph is disconnected");
    for (int b = 0; b < n; ++b) {
        const auto deg = t.children_[b].size();
        if (deg != 0 && deg != 2)
            throw ValidationError(branch_msg(b, "interior branch has " + std::to_string(deg) +
                                                    " children, expected 2"));
    }

    // Orient branches parent-end first. The root may attach its children at
    // either of its own ends; children then follow the parent's last point.
    auto attaches = [&](const Branch& child, const Point3& at) {
        return near(child.points.front(), at, join_tolerance) ||
               near(child.points.back(), at, join_tolerance);
    };
    if (!t.children_[root].empty()) {
        int at_last = 0, at_first = 0;
        for (int c : t.children_[root]) {
            if (attaches(branches[c], branches[root].points.back())) ++at_last;
            if (attaches(branches[c], branches[root].points.front())) ++at_first;
        }
        if (at_last < static_cast<int>(t.children_[root].size()) &&
            at_first == static_cast<int>(t.children_[root].size()))
            std::reverse(branches[root].points.begin(), branches[root].points.end());
    }
    for (int b : bfs_order) {
        if (b == root) continue;
        const Point3& junction = branches[t.parent_[b]].points.back();
        if (near(branches[b].points.front(), junction, join_tolerance)) {
            // already oriented
        } else if (near(branches[b].points.back(), junction, join_tolerance)) {
            std::reverse(branches[b].points.begin(), branches[b].points.end());
        } else {
            throw ValidationError(branch_msg(
                b, "neither endpoint meets parent branch " + std::to_string(t.parent_[b]) +
                       " within join tolerance"));
        }
    }

    t.branches_ = std::move(branches);
    t.root_ = root;
    t.bottom_up_order_.assign(bfs_order.rbegin(), bfs_order.rend());
    t.total_points_ = 0;
    for (const auto& b : t.branches_) t.total_points_ += static_cast<int>(b.points.size());
    return t;
}

const std::vector<int>& VascularTree::children_of(int i) const {
    if (i < 0 || i >= branch_count()) throw std::out_of_range("branch index out of range");
    return children_[static_cast<std::size_t>(i)];
}

std::optional<int> VascularTree::parent_of(int i) const {
    if (i < 0 || i >= branch_count()) throw std::out_of_range("branch index out of range");
    const int p = parent_[static_cast<std::size_t>(i)];
    if (p < 0) return std::nullopt;
    return p;
}

VascularTree VascularTree::with_point_positions(std::span<const Point3> flat_points) const {
    if (static_cast<int>(flat_points.size()) != total_points_)
        throw ValidationError("point count mismatch: got " +
                              std::to_string(flat_points.size()) + ", tree has " +
                              std::to_string(total_points_));
    std::vector<Branch> moved = branches_;
    std::size_t k = 0;
    for (auto& b : moved)
        for (auto& p : b.points) p = flat_points[k++];
    return create(std::move(moved), edges_, root_, kJoinTolerance);
}

std::vector<LabelId> VascularTree::labels() const {
    std::vector<LabelId> out;
    out.reserve(branches_.size());
    for (const auto& b : branches_) out.push_back(b.label);
    return out;
}

std::vector<int> leaves(const VascularTree& tree) {
    std::vector<int> out;
    for (int i = 0; i < tree.branch_count(); ++i)
        if (tree.is_leaf(i)) out.push_back(i);
    return out;
}

std::vector<int> children(const VascularTree& tree, int index) { return tree.children_of(index); }

std::optional<int> parent(const VascularTree& tree, int index) { return tree.parent_of(index); }

PointCloudView PointCloudView::of(const VascularTree& tree) {
    PointCloudView v;
    v.points.reserve(static_cast<std::size_t>(tree.total_point_count()));
    v.owner.reserve(v.points.capacity());
    v.branch_offset.assign(static_cast<std::size_t>(tree.branch_count()) + 1, 0);
    for (int b = 0; b < tree.branch_count(); ++b) {
        v.branch_offset[static_cast<std::size_t>(b)] = static_cast<int>(v.points.size());
        const auto& pts = tree.branch(b).points;
        for (int k = 0; k < static_cast<int>(pts.size()); ++k) {
            v.points.push_back(pts[static_cast<std::size_t>(k)]);
            v.owner.emplace_back(b, k);
        }
    }
    v.branch_offset.back() = static_cast<int>(v.points.size());
    return v;
}

VascularTree PointCloudView::apply_to(const VascularTree& tree) const {
    return tree.with_point_positions(points);
}

double branch_arc_length(const Branch& branch) {
    double total = 0.0;
    for (std::size_t k = 0; k + 1 < branch.points.size(); ++k)
        total += distance(branch.points[k], branch.points[k + 1]);
    return total;
}

Branch resample_branch(const Branch& branch, int d) {
    if (d < 2) throw ValidationError("resample count must be >= 2, got " + std::to_string(d));
    const auto& pts = branch.points;
    const std::size_t m = pts.size();
    std::vector<double> cumulative(m, 0.0);
    for (std::size_t k = 1; k < m; ++k)
        cumulative[k] = cumulative[k - 1] + distance(pts[k - 1], pts[k]);
    const double total = cumulative.back();

    Branch out;
    out.label = branch.label;
    out.points.resize(static_cast<std::size_t>(d));
    out.points.front() = pts.front();
    out.points.back() = pts.back();
    std::size_t seg = 0;
    for (int k = 1; k + 1 < d; ++k) {
        const double s = total * static_cast<double>(k) / static_cast<double>(d - 1);
        while (seg + 2 < m && cumulative[seg + 1] < s) ++seg;
        const double seg_len = cumulative[seg + 1] - cumulative[seg];
        const double t = seg_len > 0.0 ? (s - cumulative[seg]) / seg_len : 0.0;
        out.points[static_cast<std::size_t>(k)] = pts[seg] + (pts[seg + 1] - pts[seg]) * t;
    }
    return out;
}

bool trees_close(const VascularTree& a, const VascularTree& b, double tol) {
    if (a.branch_count() != b.branch_count() || a.root() != b.root()) return false;
    if (a.edges() != b.edges()) return false;
    for (int i = 0; i < a.branch_count(); ++i) {
        const auto& ba = a.branch(i);
        const auto& bb = b.branch(i);
        if (ba.label != bb.label || ba.points.size() != bb.points.size()) return false;
        for (std::size_t k = 0; k < ba.points.size(); ++k)
            if (distance(ba.points[k], bb.points[k]) > tol) return false;
    }
    return true;
}

}  // namespace vesselatlas
