#include <doctest.h>

#include <cmath>
#include <vector>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/labeling.hpp"
#include "vesselatlas/random.hpp"
#include "vesselatlas/tree.hpp"

#include "support/testutil.hpp"

namespace vesselatlas {
namespace {

// Root trunk splitting into two bent leaves whose far points mirror each
// other through the x = 0 plane; labels chosen so index order and label
// order disagree at the tie.
VascularTree mirrored_atlas() {
    const Point3 r0{0.0, 0.0, 0.0}, j{0.0, 0.0, 1.0};
    return VascularTree::create(
        {Branch{{r0, j}, 1},
         Branch{{j, Point3{1.0, 1.0, 1.0}, Point3{1.0, 2.0, 1.0}}, 5},
         Branch{{j, Point3{-1.0, 1.0, 1.0}, Point3{-1.0, 2.0, 1.0}}, 3}},
        {{0, 1}, {0, 2}}, 0);
}

VascularTree y_target(LabelId root, LabelId left, LabelId right) {
    const Point3 r0{0.0, 0.0, 0.0}, j{0.0, 1.0, 0.0};
    return VascularTree::create(
        {Branch{{r0, j}, root},
         Branch{{j, Point3{-0.5, 1.8, 0.0}, Point3{-1.0, 2.5, 0.0}}, left},
         Branch{{j, Point3{0.5, 1.8, 0.0}, Point3{1.0, 2.5, 0.0}}, right}},
        {{0, 1}, {0, 2}}, 0);
}

LabelProbabilityTable table_for(const VascularTree& tree,
                                const std::vector<std::vector<double>>& rows) {
    LabelProbabilityTable table;
    table.rows = rows;
    REQUIRE(static_cast<int>(rows.size()) == tree.branch_count());
    return table;
}

TEST_SUITE("labeling") {

TEST_CASE("each point votes for its nearest atlas point's branch label") {
    const auto atlas = mirrored_atlas();
    const auto target = VascularTree::create(
        {Branch{{Point3{0.9, 1.9, 1.0}, Point3{0.9, 2.1, 1.0}}, 0}}, {}, 0);
    const auto table = vote_labels(atlas, target);
    REQUIRE(table.rows.size() == 1);
    CHECK(table.rows[0][5] == doctest::Approx(1.0));  // both points sit by the label-5 leaf
    double sum = 0.0;
    for (double v : table.rows[0]) sum += v;
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("equidistant votes break toward the lowest flat point index") {
    const auto atlas = mirrored_atlas();
    // Points on the mirror plane are equidistant to both leaves; the label-5
    // leaf owns the lower flat indices, so it must win over the label-3 leaf.
    const auto target = VascularTree::create(
        {Branch{{Point3{0.0, 1.5, 1.0}, Point3{0.0, 2.0, 1.0}}, 0}}, {}, 0);
    const auto table = vote_labels(atlas, target);
    CHECK(table.rows[0][5] == doctest::Approx(1.0));
    CHECK(table.rows[0][3] == doctest::Approx(0.0));
}

TEST_CASE("voting a tree against itself recovers its own labels") {
    Rng rng(71);
    for (int trial = 0; trial < 5; ++trial) {
        testutil::TreeShape shape;
        shape.points_per_branch = 4;  // interior majorities dominate the shared junctions
        const auto tree = testutil::random_tree(rng, shape);
        const auto labels = direct_assign(vote_labels(tree, tree));
        CHECK(labels == tree.labels());
    }
}

TEST_CASE("branch matching against itself is the identity") {
    Rng rng(72);
    const auto tree = testutil::random_tree(rng);
    const auto match = ot_match(tree, tree);
    REQUIRE(match.atlas_branches == tree.branch_count());
    REQUIRE(match.target_branches == tree.branch_count());
    for (int b = 0; b < tree.branch_count(); ++b) {
        CHECK(match.target_of_atlas[static_cast<std::size_t>(b)] == b);
        CHECK(match.atlas_of_target[static_cast<std::size_t>(b)] == b);
        CHECK(match.assigned(b, b));
    }
}

TEST_CASE("rectangular matchings leave the excess side unmatched") {
    Rng rng(73);
    testutil::TreeShape small;
    small.max_depth = 1;  // 3 branches
    testutil::TreeShape big;
    big.max_depth = 2;  // 7 branches
    const auto three = testutil::random_tree(rng, small);
    const auto seven = testutil::random_tree(rng, big);

    const auto wide = ot_match(three, seven);
    int unmatched_targets = 0;
    for (int v : wide.atlas_of_target) unmatched_targets += v < 0 ? 1 : 0;
    CHECK(unmatched_targets == 4);
    for (int v : wide.target_of_atlas) CHECK(v >= 0);

    const auto tall = ot_match(seven, three);
    int unmatched_atlas = 0;
    for (int v : tall.target_of_atlas) unmatched_atlas += v < 0 ? 1 : 0;
    CHECK(unmatched_atlas == 4);
    for (int v : tall.atlas_of_target) CHECK(v >= 0);

    CHECK_THROWS_AS(ot_match(three, seven, 1), ValidationError);
}

TEST_CASE("assignment tables are one-hot with a uniform unmatched fallback") {
    Rng rng(74);
    testutil::TreeShape small;
    small.max_depth = 1;
    testutil::TreeShape big;
    big.max_depth = 2;
    const auto atlas = testutil::random_tree(rng, small);
    const auto target = testutil::random_tree(rng, big);
    const auto match = ot_match(atlas, target);
    const auto table = table_from_assignment(match, atlas);

    REQUIRE(static_cast<int>(table.rows.size()) == target.branch_count());
    for (int beta = 0; beta < target.branch_count(); ++beta) {
        const auto& row = table.rows[static_cast<std::size_t>(beta)];
        double sum = 0.0;
        for (double v : row) sum += v;
        CHECK(sum == doctest::Approx(1.0));
        const int alpha = match.atlas_of_target[static_cast<std::size_t>(beta)];
        if (alpha >= 0) {
            CHECK(row[static_cast<std::size_t>(atlas.branch(alpha).label)] == 1.0);
        } else {
            for (double v : row) CHECK(v == doctest::Approx(1.0 / kLabelCount));
        }
    }
}

TEST_CASE("direct assignment takes the row argmax with ties to the lowest label") {
    const auto tree = y_target(0, 1, 2);
    const auto table = table_for(
        tree, {{0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0},
               {0.0, 0.2, 0.2, 0.2, 0.4, 0.0, 0.0},
               {0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.4}});
    CHECK(direct_assign(table) == Labeling{0, 4, 6});
}

TEST_CASE("bottom-up assignment fills interiors from their children") {
    const auto tree = y_target(0, 0, 0);

    SUBCASE("agreeing leaves push their label into the parent") {
        const auto table = table_for(
            tree, {{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0},   // interior row is ignored
                   {0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0},
                   {0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0}});
        const auto labels = bottom_up_assign(table, tree);
        CHECK(labels == Labeling{4, 4, 4});
        CHECK(bottom_up_invariant_holds(labels, tree));
    }

    SUBCASE("disagreeing leaves make the parent a common trunk") {
        const auto table = table_for(
            tree, {{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0},
                   {0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0},
                   {0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0}});
        const auto labels = bottom_up_assign(table, tree);
        CHECK(labels == Labeling{kCommonArteryLabel, 4, 5});
        CHECK(bottom_up_invariant_holds(labels, tree));
    }
}

TEST_CASE("direct and bottom-up agree on every leaf") {
    Rng rng(75);
    for (int trial = 0; trial < 10; ++trial) {
        const auto tree = testutil::random_tree(rng);
        LabelProbabilityTable table;
        table.rows.assign(static_cast<std::size_t>(tree.branch_count()),
                          std::vector<double>(kLabelCount, 0.0));
        for (auto& row : table.rows) {
            double sum = 0.0;
            for (double& v : row) {
                v = rng.uniform();
                sum += v;
            }
            for (double& v : row) v /= sum;
        }
        const auto direct = direct_assign(table);
        const auto bottom = bottom_up_assign(table, tree);
        for (int leaf : leaves(tree)) {
            CHECK(bottom[static_cast<std::size_t>(leaf)] ==
                  direct[static_cast<std::size_t>(leaf)]);
        }
        CHECK(bottom_up_invariant_holds(bottom, tree));
    }
}

TEST_CASE("the structural invariant is strict about interior labels") {
    const auto tree = y_target(0, 4, 5);
    CHECK(bottom_up_invariant_holds({0, 4, 5}, tree));
    CHECK(bottom_up_invariant_holds({4, 4, 4}, tree));
    CHECK_FALSE(bottom_up_invariant_holds({3, 4, 5}, tree));   // differing children force 0
    CHECK_FALSE(bottom_up_invariant_holds({0, 4, 4}, tree));   // agreeing children force 4
    CHECK_FALSE(bottom_up_invariant_holds({0, 4}, tree));      // wrong arity
}

TEST_CASE("precision counts exact branch label matches") {
    CHECK(precision({1, 2, 3}, {1, 2, 3}) == 1.0);
    CHECK(precision({1, 2, 3}, {1, 2, 4}) == doctest::Approx(2.0 / 3.0));
    CHECK(precision({0, 0}, {1, 2}) == 0.0);
    CHECK_THROWS_AS(precision({1}, {1, 2}), ValidationError);
    CHECK_THROWS_AS(precision({}, {}), ValidationError);
}

TEST_CASE("table validation rejects malformed rows") {
    LabelProbabilityTable table;
    table.rows = {{1.0, 0.0}};
    CHECK_THROWS_AS(validate_table(table), ValidationError);  // width != label count
    table.rows = {std::vector<double>(kLabelCount, 0.1)};
    CHECK_NOTHROW(validate_table(table));
    table.rows[0][2] = -0.5;
    CHECK_THROWS_AS(validate_table(table), ValidationError);
    table.rows.clear();
    CHECK_THROWS_AS(validate_table(table), ValidationError);
}

}  // TEST_SUITE

}  // namespace
}  // namespace vesselatlas
