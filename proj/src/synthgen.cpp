#include "vesselatlas/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/tree_shooting.hpp"

namespace vesselatlas {

namespace {

Vec3 cross(const Vec3& a, const Vec3& b) {
    return Vec3{a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

// Out-of-plane bow for a gentle, deterministic curve between two junctions.
Vec3 bow_offset(const Point3& a, const Point3& b, int index) {
    const Vec3 u = b - a;
    Vec3 w = cross(u, Vec3{u.y, u.z, u.x});
    if (norm(w) < 1e-9) w = cross(u, Vec3{0.0, 0.0, 1.0});
    if (norm(w) < 1e-9) w = cross(u, Vec3{1.0, 0.0, 0.0});
    const double sign = index % 2 == 0 ? 1.0 : -1.0;
    return w * (sign * 0.18 * norm(u) / norm(w));
}

// Quadratic Bezier samples; endpoints reproduce a and b bitwise so shared
// junction constants stay coincident across branches.
std::vector<Point3> bezier_points(const Point3& a, const Point3& control, const Point3& b, int m) {
    std::vector<Point3> pts;
    pts.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(m - 1);
        const double w0 = (1.0 - t) * (1.0 - t);
        const double w1 = 2.0 * (1.0 - t) * t;
        const double w2 = t * t;
        pts.push_back(a * w0 + control * w1 + b * w2);
    }
    return pts;
}

// Splits a polyline at arc-length fraction u; the cut point ends the first
// piece and starts the second, bitwise. Exact duplicates are dropped.
std::pair<std::vector<Point3>, std::vector<Point3>> split_at_arc(const std::vector<Point3>& pts,
                                                                 double u) {
    std::vector<double> cum(pts.size(), 0.0);
    for (std::size_t k = 1; k < pts.size(); ++k) {
        cum[k] = cum[k - 1] + distance(pts[k - 1], pts[k]);
    }
    const double target = u * cum.back();
    std::size_t k = 0;
    while (k + 2 < pts.size() && cum[k + 1] < target) ++k;
    const double seg = cum[k + 1] - cum[k];
    const double s = seg > 0.0 ? (target - cum[k]) / seg : 0.0;
    const Point3 c = pts[k] + (pts[k + 1] - pts[k]) * s;

    std::vector<Point3> prox(pts.begin(), pts.begin() + static_cast<std::ptrdiff_t>(k) + 1);
    if (!(prox.back() == c)) prox.push_back(c);
    std::vector<Point3> dist{c};
    for (std::size_t j = k + 1; j < pts.size(); ++j) {
        if (!(pts[j] == dist.back())) dist.push_back(pts[j]);
    }
    return {std::move(prox), std::move(dist)};
}

std::vector<int> subtree_of(const VascularTree& tree, int branch) {
    std::vector<int> out{branch};
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (int c : tree.children_of(out[i])) out.push_back(c);
    }
    return out;
}

}  // namespace

VascularTree default_template() {
    const Point3 a0{0, 95, 0}, j0{5, 80, 3}, j1{-18, 62, 6}, j2{22, 64, -4}, j3{-32, 45, 10},
        j4{35, 48, -10}, j5{14, 42, 2}, j6{48, 33, -16}, j7{60, 20, -20};
    const Point3 e8{-6, 40, -8}, e9{-45, 28, 14}, e10{-25, 20, 18}, e11{28, 28, -2},
        e12{4, 22, 8}, e13{20, 18, 12}, e14{42, 12, -26}, e15{70, 6, -14}, e16{55, 2, -30};

    struct Row {
        int parent;
        Point3 from, to;
        LabelId label;
        int points;
    };
    const Row rows[] = {
        {-1, a0, j0, 0, 8}, {0, j0, j1, 0, 7},  {0, j0, j2, 0, 7},  {1, j1, j3, 3, 6},
        {2, j2, j4, 0, 6},  {2, j2, j5, 0, 7},  {4, j4, j6, 0, 6},  {6, j6, j7, 0, 6},
        {1, j1, e8, 1, 6},  {3, j3, e9, 3, 5},  {3, j3, e10, 3, 5}, {4, j4, e11, 2, 6},
        {5, j5, e12, 5, 5}, {5, j5, e13, 6, 5}, {6, j6, e14, 4, 6}, {7, j7, e15, 5, 5},
        {7, j7, e16, 6, 5},
    };

    std::vector<Branch> branches;
    std::vector<std::pair<int, int>> edges;
    int index = 0;
    for (const Row& r : rows) {
        const Point3 control = (r.from + r.to) / 2.0 + bow_offset(r.from, r.to, index);
        branches.push_back(Branch{bezier_points(r.from, control, r.to, r.points), r.label});
        if (r.parent >= 0) edges.emplace_back(r.parent, index);
        ++index;
    }
    return VascularTree::create(std::move(branches), std::move(edges), 0);
}

void validate_generator_config(const GeneratorConfig& cfg) {
    if (!(cfg.momenta_scale >= 0.0) || !std::isfinite(cfg.momenta_scale)) {
        throw ValidationError("momenta scale must be nonnegative and finite");
    }
    if (!(cfg.topology_swap_prob >= 0.0 && cfg.topology_swap_prob <= 1.0)) {
        throw ValidationError("topology swap probability must be in [0, 1]");
    }
    if (!(cfg.branch_point_jitter >= 0.0) || !std::isfinite(cfg.branch_point_jitter)) {
        throw ValidationError("branch point jitter must be nonnegative and finite");
    }
}

VascularTree relabel_interior(const VascularTree& tree) {
    std::vector<Branch> branches = tree.branches();
    std::vector<LabelId> labels = tree.labels();
    for (int b : tree.bottom_up_order()) {
        if (tree.is_leaf(b)) continue;
        const auto& kids = tree.children_of(b);
        const LabelId first = labels[static_cast<std::size_t>(kids.front())];
        bool common = true;
        for (int c : kids) {
            if (labels[static_cast<std::size_t>(c)] != first) {
                common = false;
                break;
            }
        }
        labels[static_cast<std::size_t>(b)] = common ? first : kCommonArteryLabel;
    }
    for (std::size_t i = 0; i < branches.size(); ++i) {
        branches[i].label = labels[i];
    }
    return VascularTree::create(std::move(branches), tree.edges(), tree.root());
}

VascularTree perturb_topology(const VascularTree& tree, Rng& rng) {
    const int n = tree.branch_count();

    // Movable subtrees hang off a non-root branch whose children are all
    // leaves (a leaf pair in a binary tree).
    std::vector<int> cherries;
    for (int b = 0; b < n; ++b) {
        if (!tree.parent_of(b).has_value() || tree.is_leaf(b)) continue;
        bool all_leaves = true;
        for (int c : tree.children_of(b)) {
            if (!tree.is_leaf(c)) {
                all_leaves = false;
                break;
            }
        }
        if (all_leaves) cherries.push_back(b);
    }
    if (cherries.empty()) return tree;

    const int cherry = cherries[rng.uniform_index(cherries.size())];
    const int parent = *tree.parent_of(cherry);
    int sibling = -1;
    for (int c : tree.children_of(parent)) {
        if (c != cherry) sibling = c;
    }

    const std::vector<int> moved = subtree_of(tree, cherry);
    std::vector<char> in_subtree(static_cast<std::size_t>(n), 0);
    for (int b : moved) in_subtree[static_cast<std::size_t>(b)] = 1;

    // The orphaned sibling is absorbed into its parent, so the parent slot
    // stands for the merged vessel and is itself a valid host.
    std::vector<int> hosts;
    for (int b = 0; b < n; ++b) {
        if (!in_subtree[static_cast<std::size_t>(b)] && b != sibling) hosts.push_back(b);
    }
    const int host = hosts[rng.uniform_index(hosts.size())];
    const double u = 0.3 + 0.4 * rng.uniform();

    std::vector<Point3> merged = tree.branch(parent).points;
    {
        const auto& spts = tree.branch(sibling).points;
        merged.insert(merged.end(), spts.begin() + 1, spts.end());
    }

    auto [prox, dist] = split_at_arc(host == parent ? merged : tree.branch(host).points, u);
    const Point3 cut = prox.back();

    std::vector<Branch> branches = tree.branches();
    std::vector<std::pair<int, int>> edges = tree.edges();

    if (host == parent) {
        branches[static_cast<std::size_t>(parent)].points = prox;
        branches[static_cast<std::size_t>(sibling)].points = dist;
        // Labels and edges keep their meaning: the junction slid along the
        // merged vessel, nothing else moved.
    } else {
        branches[static_cast<std::size_t>(parent)].points = merged;
        branches[static_cast<std::size_t>(parent)].label =
            tree.branch(sibling).label;
        branches[static_cast<std::size_t>(host)].points = prox;
        branches[static_cast<std::size_t>(sibling)].points = dist;
        branches[static_cast<std::size_t>(sibling)].label = tree.branch(host).label;
        for (auto& [a, b] : edges) {
            if (a == parent && b == cherry) {
                a = host;
            } else if (a == parent && b == sibling) {
                a = host;
            } else if (a == sibling) {
                a = parent;  // the merged vessel inherits the sibling's children
            } else if (a == host) {
                a = sibling;  // the distal host piece inherits the host's children
            }
        }
    }

    const Vec3 shift = cut - tree.branch(cherry).points.front();
    for (int b : moved) {
        for (Point3& p : branches[static_cast<std::size_t>(b)].points) p += shift;
    }
    branches[static_cast<std::size_t>(cherry)].points.front() = cut;

    return VascularTree::create(std::move(branches), std::move(edges), tree.root());
}

namespace {

// Slides every junction proximally along its branch by a random fraction of
// the branch's arc length, reattaching both child subtrees at the new end.
VascularTree jitter_junctions(const VascularTree& tree, double amount, Rng& rng) {
    std::vector<Branch> branches = tree.branches();
    const auto translate_subtree = [&](int b, const Vec3& shift) {
        for (int idx : subtree_of(tree, b)) {
            for (Point3& p : branches[static_cast<std::size_t>(idx)].points) p += shift;
        }
    };
    for (int b = 0; b < tree.branch_count(); ++b) {
        if (tree.is_leaf(b)) continue;
        const double f = std::min(amount * rng.uniform(), 0.5);
        if (!(f > 0.0)) continue;
        auto [prox, dist] = split_at_arc(branches[static_cast<std::size_t>(b)].points, 1.0 - f);
        const Vec3 shift = prox.back() - branches[static_cast<std::size_t>(b)].points.back();
        branches[static_cast<std::size_t>(b)].points = prox;
        for (int c : tree.children_of(b)) {
            translate_subtree(c, shift);
            branches[static_cast<std::size_t>(c)].points.front() = prox.back();
        }
        (void)dist;
    }
    return VascularTree::create(std::move(branches), tree.edges(), tree.root());
}

VascularTree generate_tree(const GeneratorConfig& cfg, Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        try {
            VascularTree tree = cfg.template_tree;
            if (rng.uniform() < cfg.topology_swap_prob) tree = perturb_topology(tree, rng);
            if (cfg.branch_point_jitter > 0.0) {
                tree = jitter_junctions(tree, cfg.branch_point_jitter, rng);
            }
            if (cfg.momenta_scale > 0.0) {
                const double extent = bounding_box(tree).max_side();
                MomentaField momenta(static_cast<std::size_t>(tree.total_point_count()));
                for (Vec3& p : momenta) {
                    p = Vec3{rng.normal(), rng.normal(), rng.normal()} *
                        (cfg.momenta_scale * extent);
                }
                tree = shoot_tree(tree, momenta, KernelSpec{}, IntegratorConfig{});
            }
            return relabel_interior(tree);
        } catch (const ValidationError&) {
        } catch (const NumericalError&) {
        }
    }
    throw ValidationError("tree generation failed after 100 attempts");
}

}  // namespace

std::vector<VascularTree> generate_dataset(const GeneratorConfig& cfg, int count) {
    validate_generator_config(cfg);
    if (count < 1) throw ValidationError("dataset size must be at least 1");
    std::vector<VascularTree> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
        out.push_back(generate_tree(cfg, rng));
    }
    return out;
}

}  // namespace vesselatlas
