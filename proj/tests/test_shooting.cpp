#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/kernel.hpp"
#include "vesselatlas/random.hpp"
#include "vesselatlas/shooting.hpp"
#include "vesselatlas/tree.hpp"
#include "vesselatlas/tree_shooting.hpp"

#include "support/testutil.hpp"

namespace vesselatlas {
namespace {

struct Instance {
    KernelSpec spec;
    std::vector<Point3> q;
    std::vector<Vec3> p;
};

Instance random_instance(Rng& rng, std::size_t n, double momenta_scale) {
    Instance inst;
    inst.spec = KernelSpec{0.5, {1.0, 4.0, 8.0, 16.0}};
    inst.q.resize(n);
    for (auto& pt : inst.q) pt = Point3{rng.uniform(), rng.uniform(), rng.uniform()};
    inst.p = testutil::random_field(rng, n, momenta_scale);
    return inst;
}

double relative_drift(const std::vector<double>& trace) {
    const double h0 = trace.front();
    double worst = 0.0;
    for (double h : trace) worst = std::max(worst, std::abs(h - h0));
    return worst / std::max(1e-30, std::abs(h0));
}

TEST_SUITE("shooting") {

TEST_CASE("a single particle travels in a straight line by K(0) * p") {
    Rng rng(21);
    const KernelSpec spec{0.8, {1.0, 4.0, 8.0, 16.0}};
    for (int trial = 0; trial < 10; ++trial) {
        const Point3 q0{rng.normal(), rng.normal(), rng.normal()};
        const Vec3 p0{rng.normal(), rng.normal(), rng.normal()};
        const auto shot = shoot(spec, std::vector<Point3>{q0}, std::vector<Vec3>{p0},
                                IntegratorConfig{});
        const Point3 expected = q0 + p0 * kernel_eval(spec, q0, q0);
        CHECK(norm(shot.final_positions().front() - expected) <= 1e-10);
        CHECK(norm(shot.final_momenta().front() - p0) <= 1e-10);
    }
}

TEST_CASE("the hamiltonian is conserved and halving the step gains at least 8x") {
    Rng rng(22);
    const IntegratorConfig coarse{15};
    const IntegratorConfig fine{30};
    for (int trial = 0; trial < 8; ++trial) {
        const auto inst = random_instance(rng, 6, 0.01);
        const auto shot15 = shoot(inst.spec, inst.q, inst.p, coarse);
        const auto shot30 = shoot(inst.spec, inst.q, inst.p, fine);
        REQUIRE(shot15.hamiltonian_trace.size() == 16);
        REQUIRE(shot30.hamiltonian_trace.size() == 31);

        const double drift15 = relative_drift(shot15.hamiltonian_trace);
        const double drift30 = relative_drift(shot30.hamiltonian_trace);
        CHECK(drift15 < 1e-6);
        if (drift30 > 1e-13) {  // above roundoff, the order is observable
            CHECK(drift15 / drift30 >= 8.0);
        }
    }
}

TEST_CASE("frame zero is the input state and frames are equally spaced in time") {
    Rng rng(23);
    const auto inst = random_instance(rng, 5, 0.1);
    const auto shot = shoot(inst.spec, inst.q, inst.p, IntegratorConfig{});
    REQUIRE(shot.trajectory.size() == 16);
    REQUIRE(shot.momenta_trajectory.size() == 16);
    for (std::size_t i = 0; i < inst.q.size(); ++i) {
        CHECK(shot.trajectory.front()[i] == inst.q[i]);
        CHECK(shot.momenta_trajectory.front()[i] == inst.p[i]);
    }
}

TEST_CASE("path energy is twice the hamiltonian") {
    Rng rng(24);
    const auto inst = random_instance(rng, 7, 0.3);
    const double h = hamiltonian(inst.spec, inst.q, inst.p);
    CHECK(path_energy(inst.spec, inst.q, inst.p) == doctest::Approx(2.0 * h).epsilon(1e-14));
}

TEST_CASE("shooting rejects non-finite inputs") {
    const KernelSpec spec{0.5, {1.0, 4.0}};
    const std::vector<Point3> q{{0.0, 0.0, 0.0}};
    const std::vector<Vec3> bad{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
    CHECK_THROWS_AS(shoot(spec, q, bad, IntegratorConfig{}), NumericalError);
}

TEST_CASE("the adjoint pullback matches finite differences of the discrete flow") {
    Rng rng(25);
    const IntegratorConfig cfg{15};
    for (int trial = 0; trial < 3; ++trial) {
        const auto inst = random_instance(rng, 4, 0.2);
        const auto qbar1 = testutil::random_field(rng, inst.q.size(), 1.0);
        const auto pbar1 = testutil::random_field(rng, inst.q.size(), 1.0);

        const auto shot = shoot(inst.spec, inst.q, inst.p, cfg);
        const auto [qbar0, pbar0] = shoot_vjp(shot, qbar1, pbar1);

        const std::size_t n = inst.q.size();
        const auto scalar = [&](const std::vector<double>& flat) {
            std::vector<Point3> q(n);
            std::vector<Vec3> p(n);
            for (std::size_t i = 0; i < n; ++i) {
                q[i] = Point3{flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]};
                p[i] = Vec3{flat[3 * (n + i)], flat[3 * (n + i) + 1], flat[3 * (n + i) + 2]};
            }
            const auto s = shoot(inst.spec, q, p, cfg);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += dot(qbar1[i], s.final_positions()[i]);
                acc += dot(pbar1[i], s.final_momenta()[i]);
            }
            return acc;
        };

        std::vector<double> x0 = testutil::flatten(inst.q);
        const auto pflat = testutil::flatten(inst.p);
        x0.insert(x0.end(), pflat.begin(), pflat.end());
        const auto fd = testutil::fd_gradient(scalar, x0, 1e-6);

        auto analytic = testutil::flatten(qbar0);
        const auto pbar_flat = testutil::flatten(pbar0);
        analytic.insert(analytic.end(), pbar_flat.begin(), pbar_flat.end());

        const double scale = std::max(1.0, testutil::max_abs(fd));
        CHECK(testutil::max_abs_diff(analytic, fd) <= 1e-6 * scale);
    }
}

TEST_CASE("passive points seeded at control positions ride the control flow") {
    Rng rng(26);
    const IntegratorConfig cfg{15};
    const auto inst = random_instance(rng, 6, 0.2);
    const auto shot = shoot(inst.spec, inst.q, inst.p, cfg);
    const auto advected = flow_points(inst.spec, shot, inst.q, cfg);
    REQUIRE(advected.size() == inst.q.size());
    for (std::size_t i = 0; i < inst.q.size(); ++i) {
        CHECK(norm(advected[i] - shot.final_positions()[i]) <= 1e-9);
    }
}

TEST_CASE("control cloud collapses coincident junction copies") {
    const Point3 a{0.0, 0.0, 0.0}, b{0.0, 1.0, 0.0};
    const Point3 c{-0.7, 1.8, 0.0}, d{0.7, 1.8, 0.2};
    const auto tree = VascularTree::create(
        {Branch{{a, b}, 0},
         Branch{{b, Point3{-0.4, 1.4, 0.0}, c}, 1},
         Branch{{b, Point3{0.4, 1.4, 0.1}, d}, 2}},
        {{0, 1}, {0, 2}}, 0);
    REQUIRE(tree.total_point_count() == 8);

    const auto cloud = ControlCloud::of(tree);
    CHECK(cloud.point_count() == 8);
    CHECK(cloud.control_count() == 6);  // three copies of b collapse into one

    // The shared junction maps every copy to the same control: flat indices
    // 1 (end of branch 0), 2 (front of branch 1) and 5 (front of branch 2).
    const int jb = cloud.control_of_point[1];
    CHECK(cloud.control_of_point[2] == jb);
    CHECK(cloud.control_of_point[5] == jb);
    CHECK(cloud.group_size[static_cast<std::size_t>(jb)] == 3);
    CHECK(cloud.points[static_cast<std::size_t>(jb)] == b);

    SUBCASE("gather sums per-point fields over each group") {
        std::vector<Vec3> field(8, Vec3{1.0, 0.0, 0.0});
        const auto sums = cloud.gather_sums(field);
        REQUIRE(static_cast<int>(sums.size()) == cloud.control_count());
        CHECK(sums[static_cast<std::size_t>(jb)].x == doctest::Approx(3.0));
        double total = 0.0;
        for (const auto& v : sums) total += v.x;
        CHECK(total == doctest::Approx(8.0));
    }

    SUBCASE("scatter replicates control values bitwise to every member") {
        std::vector<Point3> ctrl(static_cast<std::size_t>(cloud.control_count()));
        Rng rng(27);
        for (auto& v : ctrl) v = Point3{rng.normal(), rng.normal(), rng.normal()};
        const auto flat = cloud.scatter(ctrl);
        REQUIRE(flat.size() == 8);
        CHECK(flat[1] == ctrl[static_cast<std::size_t>(jb)]);
        CHECK(flat[2] == ctrl[static_cast<std::size_t>(jb)]);
        CHECK(flat[5] == ctrl[static_cast<std::size_t>(jb)]);
    }

    SUBCASE("spread_equal is a right inverse of gather_sums") {
        Rng rng(28);
        std::vector<Vec3> ctrl(static_cast<std::size_t>(cloud.control_count()));
        for (auto& v : ctrl) v = Vec3{rng.normal(), rng.normal(), rng.normal()};
        const auto regathered = cloud.gather_sums(cloud.spread_equal(ctrl));
        for (std::size_t i = 0; i < ctrl.size(); ++i) {
            CHECK(norm(regathered[i] - ctrl[i]) <= 1e-12);
        }
    }
}

TEST_CASE("deforming a tree equals shooting every coincident copy directly") {
    Rng rng(29);
    const auto tree = testutil::random_tree(rng);
    const auto view = PointCloudView::of(tree);
    const auto momenta = testutil::random_field(rng, view.points.size(), 0.05);
    const KernelSpec spec = resolve_kernel_spec(KernelSpec{}, tree);
    const IntegratorConfig cfg{};

    const auto deformed = shoot_tree(tree, momenta, spec, cfg);

    // Every stored point, coincident junction copies included, is a particle
    // of the full system; momenta sums make the two systems identical.
    const auto full = shoot(spec, view.points, momenta, cfg);
    const auto deformed_view = PointCloudView::of(deformed);
    REQUIRE(deformed_view.points.size() == view.points.size());
    for (std::size_t i = 0; i < view.points.size(); ++i) {
        CHECK(norm(deformed_view.points[i] - full.final_positions()[i]) <= 1e-9);
    }

    SUBCASE("junction copies stay bitwise coincident") {
        for (int b = 0; b < deformed.branch_count(); ++b) {
            for (int c : deformed.children_of(b)) {
                CHECK(deformed.branch(c).points.front() == deformed.branch(b).points.back());
            }
        }
    }
}

TEST_CASE("kernel width resolution uses half the bounding box side") {
    Rng rng(30);
    const auto tree = testutil::random_tree(rng);
    const auto box = bounding_box(tree);
    const auto resolved = resolve_kernel_spec(KernelSpec{}, tree);
    CHECK(resolved.sigma0 == doctest::Approx(0.5 * box.max_side()));
    const auto kept = resolve_kernel_spec(KernelSpec{2.25, {1.0}}, tree);
    CHECK(kept.sigma0 == 2.25);
}

TEST_CASE("integrator config validation") {
    CHECK_THROWS_AS(validate_integrator_config(IntegratorConfig{0}), ValidationError);
    CHECK_THROWS_AS(validate_integrator_config(IntegratorConfig{-3}), ValidationError);
    CHECK_NOTHROW(validate_integrator_config(IntegratorConfig{15}));
}

}  // TEST_SUITE

}  // namespace
}  // namespace vesselatlas
