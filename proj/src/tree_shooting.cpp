#include "vesselatlas/tree_shooting.hpp"

#include <cstddef>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

namespace {

int find_root(std::vector<int>& up, int i) {
    while (up[static_cast<std::size_t>(i)] != i) {
        up[static_cast<std::size_t>(i)] = up[static_cast<std::size_t>(up[static_cast<std::size_t>(i)])];
        i = up[static_cast<std::size_t>(i)];
    }
    return i;
}

}  // namespace

ControlCloud ControlCloud::of(const VascularTree& tree, double join_tolerance) {
    const auto view = PointCloudView::of(tree);
    const int n = static_cast<int>(view.points.size());
    const double tol2 = join_tolerance * join_tolerance;

    std::vector<int> up(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) up[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (distance2(view.points[static_cast<std::size_t>(i)],
                          view.points[static_cast<std::size_t>(j)]) <= tol2) {
                const int ri = find_root(up, i);
                const int rj = find_root(up, j);
                if (ri != rj) up[static_cast<std::size_t>(std::max(ri, rj))] = std::min(ri, rj);
            }
        }
    }

    ControlCloud cloud;
    cloud.control_of_point.assign(static_cast<std::size_t>(n), -1);
    std::vector<int> control_of_root(static_cast<std::size_t>(n), -1);
    for (int i = 0; i < n; ++i) {
        const int r = find_root(up, i);
        int c = control_of_root[static_cast<std::size_t>(r)];
        if (c < 0) {
            c = static_cast<int>(cloud.points.size());
            control_of_root[static_cast<std::size_t>(r)] = c;
            // The group root is its smallest member, so this is the first
            // appearance and its position represents the group.
            cloud.points.push_back(view.points[static_cast<std::size_t>(i)]);
            cloud.group_size.push_back(0);
        }
        cloud.control_of_point[static_cast<std::size_t>(i)] = c;
        ++cloud.group_size[static_cast<std::size_t>(c)];
    }
    return cloud;
}

std::vector<Vec3> ControlCloud::gather_sums(std::span<const Vec3> per_point) const {
    if (static_cast<int>(per_point.size()) != point_count()) {
        throw ValidationError("per-point field size does not match the tree's point count");
    }
    std::vector<Vec3> sums(points.size(), Vec3{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < per_point.size(); ++i) {
        sums[static_cast<std::size_t>(control_of_point[i])] += per_point[i];
    }
    return sums;
}

std::vector<Point3> ControlCloud::scatter(std::span<const Point3> per_control) const {
    if (static_cast<int>(per_control.size()) != control_count()) {
        throw ValidationError("per-control field size does not match the control count");
    }
    std::vector<Point3> full(control_of_point.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        full[i] = per_control[static_cast<std::size_t>(control_of_point[i])];
    }
    return full;
}

std::vector<Vec3> ControlCloud::spread_equal(std::span<const Vec3> per_control) const {
    if (static_cast<int>(per_control.size()) != control_count()) {
        throw ValidationError("per-control field size does not match the control count");
    }
    std::vector<Vec3> full(control_of_point.size());
    for (std::size_t i = 0; i < full.size(); ++i) {
        const int c = control_of_point[i];
        full[i] = per_control[static_cast<std::size_t>(c)] /
                  static_cast<double>(group_size[static_cast<std::size_t>(c)]);
    }
    return full;
}

Aabb bounding_box(const VascularTree& tree) {
    Aabb box;
    for (const auto& branch : tree.branches()) {
        for (const auto& pt : branch.points) box.expand(pt);
    }
    return box;
}

KernelSpec resolve_kernel_spec(KernelSpec spec, const VascularTree& tree) {
    if (spec.sigma0 > 0.0) return spec;
    const double side = bounding_box(tree).max_side();
    if (!(side > 0.0)) {
        throw ValidationError("cannot derive a kernel width from a degenerate tree");
    }
    spec.sigma0 = 0.5 * side;
    return spec;
}

VascularTree shoot_tree(const VascularTree& tree,
                        std::span<const Vec3> momenta,
                        const KernelSpec& spec,
                        const IntegratorConfig& cfg) {
    const auto cloud = ControlCloud::of(tree);
    const auto summed = cloud.gather_sums(momenta);
    const auto resolved = resolve_kernel_spec(spec, tree);
    const auto result = shoot(resolved, cloud.points, summed, cfg);
    return tree.with_point_positions(cloud.scatter(result.final_positions()));
}

}  // namespace vesselatlas
