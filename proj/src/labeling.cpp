#include "vesselatlas/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/hungarian.hpp"

namespace vesselatlas {

void validate_table(const LabelProbabilityTable& table) {
    if (table.label_count < 1) throw ValidationError("label table needs at least one label");
    if (table.rows.empty()) throw ValidationError("label table has no rows");
    for (const auto& row : table.rows) {
        if (static_cast<int>(row.size()) != table.label_count) {
            throw ValidationError("label table row width does not match label count");
        }
        for (double v : row) {
            if (!std::isfinite(v) || v < 0.0) {
                throw ValidationError("label probabilities must be finite and nonnegative");
            }
        }
    }
}

LabelProbabilityTable vote_labels(const VascularTree& deformed_atlas, const VascularTree& target) {
    const auto atlas_view = PointCloudView::of(deformed_atlas);

    // Branch label of every atlas point, by flat index.
    std::vector<LabelId> point_label(atlas_view.points.size());
    for (std::size_t i = 0; i < atlas_view.points.size(); ++i) {
        point_label[i] = deformed_atlas.branch(atlas_view.owner[i].first).label;
    }

    LabelProbabilityTable table;
    table.label_count = kLabelCount;
    table.rows.reserve(static_cast<std::size_t>(target.branch_count()));
    for (int b = 0; b < target.branch_count(); ++b) {
        const auto& points = target.branch(b).points;
        std::vector<double> row(kLabelCount, 0.0);
        for (const Point3& q : points) {
            std::size_t best = 0;
            double best_d2 = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < atlas_view.points.size(); ++i) {
                const double d2 = distance2(q, atlas_view.points[i]);
                if (d2 < best_d2) {
                    best_d2 = d2;
                    best = i;
                }
            }
            row[static_cast<std::size_t>(point_label[best])] += 1.0;
        }
        for (double& v : row) v /= static_cast<double>(points.size());
        table.rows.push_back(std::move(row));
    }
    return table;
}

AssignmentMatrix ot_match(const VascularTree& deformed_atlas, const VascularTree& target,
                          int resample_count) {
    if (resample_count < 2) throw ValidationError("resample count must be at least 2");
    const int m = deformed_atlas.branch_count();
    const int n = target.branch_count();

    auto stacks = [&](const VascularTree& tree) {
        std::vector<std::vector<Point3>> out;
        out.reserve(static_cast<std::size_t>(tree.branch_count()));
        for (int b = 0; b < tree.branch_count(); ++b) {
            out.push_back(resample_branch(tree.branch(b), resample_count).points);
        }
        return out;
    };
    const auto atlas_stacks = stacks(deformed_atlas);
    const auto target_stacks = stacks(target);

    std::vector<std::vector<double>> cost(static_cast<std::size_t>(m));
    for (int a = 0; a < m; ++a) {
        cost[static_cast<std::size_t>(a)].resize(static_cast<std::size_t>(n));
        for (int b = 0; b < n; ++b) {
            double d2 = 0.0;
            for (int k = 0; k < resample_count; ++k) {
                d2 += distance2(atlas_stacks[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)],
                                target_stacks[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)]);
            }
            cost[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] = std::sqrt(d2);
        }
    }

    const AssignmentSolution solution = solve_assignment(cost);

    AssignmentMatrix match;
    match.atlas_branches = m;
    match.target_branches = n;
    match.target_of_atlas = solution.row_to_col;
    match.atlas_of_target.assign(static_cast<std::size_t>(n), -1);
    for (int a = 0; a < m; ++a) {
        const int b = match.target_of_atlas[static_cast<std::size_t>(a)];
        if (b >= 0) match.atlas_of_target[static_cast<std::size_t>(b)] = a;
    }
    return match;
}

LabelProbabilityTable table_from_assignment(const AssignmentMatrix& match,
                                            const VascularTree& deformed_atlas) {
    if (match.atlas_branches != deformed_atlas.branch_count()) {
        throw ValidationError("assignment does not match the atlas branch count");
    }
    LabelProbabilityTable table;
    table.label_count = kLabelCount;
    table.rows.reserve(static_cast<std::size_t>(match.target_branches));
    for (int b = 0; b < match.target_branches; ++b) {
        std::vector<double> row(kLabelCount, 0.0);
        const int a = match.atlas_of_target[static_cast<std::size_t>(b)];
        if (a >= 0) {
            row[static_cast<std::size_t>(deformed_atlas.branch(a).label)] = 1.0;
        } else {
            for (double& v : row) v = 1.0 / static_cast<double>(kLabelCount);
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace {

LabelId argmax_label(const std::vector<double>& row) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < row.size(); ++l) {
        if (row[l] > row[best]) best = l;
    }
    return static_cast<LabelId>(best);
}

}  // namespace

Labeling direct_assign(const LabelProbabilityTable& table) {
    validate_table(table);
    Labeling labels;
    labels.reserve(table.rows.size());
    for (const auto& row : table.rows) labels.push_back(argmax_label(row));
    return labels;
}

Labeling bottom_up_assign(const LabelProbabilityTable& table, const VascularTree& target) {
    validate_table(table);
    if (static_cast<int>(table.rows.size()) != target.branch_count()) {
        throw ValidationError("label table does not match the target branch count");
    }
    Labeling labels(table.rows.size(), kCommonArteryLabel);
    for (int b : target.bottom_up_order()) {
        if (target.is_leaf(b)) {
            labels[static_cast<std::size_t>(b)] = argmax_label(table.rows[static_cast<std::size_t>(b)]);
            continue;
        }
        const auto& kids = target.children_of(b);
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
    return labels;
}

bool bottom_up_invariant_holds(const Labeling& labels, const VascularTree& tree) {
    if (static_cast<int>(labels.size()) != tree.branch_count()) return false;
    for (int b = 0; b < tree.branch_count(); ++b) {
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
        const LabelId expected = common ? first : kCommonArteryLabel;
        if (labels[static_cast<std::size_t>(b)] != expected) return false;
    }
    return true;
}

double precision(const Labeling& predicted, const Labeling& truth) {
    if (predicted.size() != truth.size()) {
        throw ValidationError("labelings have different branch counts");
    }
    if (predicted.empty()) throw ValidationError("labelings are empty");
    int equal = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        if (predicted[i] == truth[i]) ++equal;
    }
    return static_cast<double>(equal) / static_cast<double>(predicted.size());
}

}  // namespace vesselatlas
