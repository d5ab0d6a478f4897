#include <doctest.h>

#include <cmath>
#include <vector>

#include "vesselatlas/attachment.hpp"
#include "vesselatlas/errors.hpp"
#include "vesselatlas/random.hpp"
#include "vesselatlas/tree.hpp"

#include "support/testutil.hpp"

namespace vesselatlas {
namespace {

// Row-major rotation by modest angles around all three axes.
Point3 rotate(const Point3& p) {
    const double ca = std::cos(0.3), sa = std::sin(0.3);
    const double cb = std::cos(-0.7), sb = std::sin(-0.7);
    const Point3 r1{p.x, ca * p.y - sa * p.z, sa * p.y + ca * p.z};
    return Point3{cb * r1.x - sb * r1.y, sb * r1.x + cb * r1.y, r1.z};
}

CurrentRepresentation transformed(const CurrentRepresentation& rep, const Vec3& shift,
                                  bool rotated) {
    // Rebuild from moved segment endpoints so centers and tangents stay the
    // exact derived quantities of a rigidly moved point set.
    CurrentRepresentation out = rep;
    for (std::size_t s = 0; s < rep.centers.size(); ++s) {
        Point3 u = rep.centers[s] - rep.tangents[s] * 0.5;
        Point3 v = rep.centers[s] + rep.tangents[s] * 0.5;
        if (rotated) {
            u = rotate(u);
            v = rotate(v);
        }
        u += shift;
        v += shift;
        out.centers[s] = (u + v) * 0.5;
        out.tangents[s] = v - u;
    }
    return out;
}

TEST_SUITE("attachment") {

TEST_CASE("the mismatch is exactly symmetric in its arguments") {
    Rng rng(31);
    const AttachmentSpec spec{0.6};
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = to_current(testutil::random_tree(rng));
        const auto b = to_current(testutil::random_tree(rng));
        CHECK(varifold_inner(spec, a, b) == varifold_inner(spec, b, a));
        CHECK(attachment_value(spec, a, b) == attachment_value(spec, b, a));
    }
}

TEST_CASE("a shape matches itself with exactly zero mismatch") {
    Rng rng(32);
    const AttachmentSpec spec{0.5};
    for (int trial = 0; trial < 10; ++trial) {
        const auto a = to_current(testutil::random_tree(rng));
        CHECK(attachment_value(spec, a, a) == 0.0);
    }
}

TEST_CASE("moving both shapes rigidly leaves the mismatch unchanged") {
    Rng rng(33);
    const AttachmentSpec spec{0.7};
    const auto a = to_current(testutil::random_tree(rng));
    const auto b = to_current(testutil::random_tree(rng));
    const double base = attachment_value(spec, a, b);
    REQUIRE(base > 0.0);

    const Vec3 shift{3.2, -1.5, 0.9};
    const double translated =
        attachment_value(spec, transformed(a, shift, false), transformed(b, shift, false));
    CHECK(translated == doctest::Approx(base).epsilon(1e-9));

    const double rotated =
        attachment_value(spec, transformed(a, shift, true), transformed(b, shift, true));
    CHECK(rotated == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("flipping segment orientations changes nothing at all") {
    Rng rng(34);
    const AttachmentSpec spec{0.6};
    const auto a = to_current(testutil::random_tree(rng));
    const auto b = to_current(testutil::random_tree(rng));

    CurrentRepresentation flipped = a;
    for (std::size_t s = 0; s < flipped.tangents.size(); ++s) {
        if (rng.uniform() < 0.5) flipped.tangents[s] = -flipped.tangents[s];
    }
    CHECK(attachment_value(spec, flipped, b) == attachment_value(spec, a, b));
    CHECK(varifold_inner(spec, flipped, flipped) == varifold_inner(spec, a, a));
}

TEST_CASE("the gradient against the shape itself vanishes") {
    Rng rng(35);
    const AttachmentSpec spec{0.5};
    const auto a = to_current(testutil::random_tree(rng));
    for (const Vec3& g : attachment_gradient(spec, a, a)) {
        CHECK(norm(g) == 0.0);
    }
}

TEST_CASE("the gradient matches finite differences") {
    Rng rng(36);
    const AttachmentSpec spec{0.6};
    for (int trial = 0; trial < 3; ++trial) {
        const auto source_tree = testutil::random_tree(rng);
        const auto a = to_current(source_tree);
        const auto b = to_current(testutil::random_tree(rng));
        const auto view = PointCloudView::of(source_tree);

        const auto f = [&](const std::vector<double>& flat) {
            return attachment_value(spec, a.with_points(testutil::unflatten(flat)), b);
        };
        const auto fd = testutil::fd_gradient(f, testutil::flatten(view.points), 1e-6);
        const auto analytic = testutil::flatten(attachment_gradient(spec, a, b));
        const double scale = std::max(1.0, testutil::max_abs(fd));
        CHECK(testutil::max_abs_diff(analytic, fd) <= 1e-6 * scale);
    }
}

TEST_CASE("segment incidence survives point substitution") {
    Rng rng(37);
    const auto tree = testutil::random_tree(rng);
    const auto rep = to_current(tree);
    const auto view = PointCloudView::of(tree);
    auto moved = view.points;
    for (auto& p : moved) p += Vec3{0.1, -0.2, 0.05};
    const auto rebuilt = rep.with_points(moved);
    REQUIRE(rebuilt.centers.size() == rep.centers.size());
    for (std::size_t s = 0; s < rep.tangents.size(); ++s) {
        CHECK(norm(rebuilt.tangents[s] - rep.tangents[s]) <= 1e-12);
    }
    CHECK_THROWS_AS(rep.with_points(std::vector<Point3>(view.points.size() + 1)),
                    ValidationError);
}

TEST_CASE("degenerate inputs are rejected") {
    const AttachmentSpec spec{0.5};
    CHECK_THROWS_AS(validate_attachment_spec(AttachmentSpec{0.0}), ValidationError);
    CHECK_THROWS_AS(validate_attachment_spec(AttachmentSpec{-2.0}), ValidationError);

    Rng rng(38);
    const auto good = to_current(testutil::random_tree(rng));
    CHECK_THROWS_AS(varifold_inner(spec, CurrentRepresentation{}, good), ValidationError);

    CurrentRepresentation degenerate = good;
    degenerate.tangents.front() = Vec3{0.0, 0.0, 0.0};
    CHECK_THROWS_AS(varifold_inner(spec, degenerate, good), NumericalError);
}

}  // TEST_SUITE

}  // namespace
}  // namespace vesselatlas
