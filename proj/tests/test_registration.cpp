#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/registration.hpp"
#include "vesselatlas/tree.hpp"
#include "vesselatlas/tree_io.hpp"
#include "vesselatlas/tree_shooting.hpp"

#include "support/testutil.hpp"

namespace vesselatlas {
namespace {

// Small instances keep the optimization paths exercised while the suite stays
// inside a few seconds of runtime.
RegistrationConfig quick_config() {
    RegistrationConfig cfg;
    cfg.lbfgs.max_iters = 80;
    cfg.lbfgs.grad_rtol = 1e-5;
    return cfg;
}

VascularTree translated(const VascularTree& tree, const Vec3& shift) {
    const auto view = PointCloudView::of(tree);
    std::vector<Point3> moved = view.points;
    for (auto& p : moved) p += shift;
    return tree.with_point_positions(moved);
}

double initial_attachment(const VascularTree& source, const VascularTree& target,
                          const RegistrationConfig& cfg) {
    const int last = static_cast<int>(cfg.stage_fractions.size()) - 1;
    const std::vector<Vec3> zero(static_cast<std::size_t>(source.total_point_count()),
                                 Vec3{0.0, 0.0, 0.0});
    // With zero momenta the path energy vanishes, so J = weight * attachment.
    const auto [value, grad] = objective_and_gradient(source, target, zero, cfg, last);
    return value / cfg.attachment_weight;
}

TEST_SUITE("registration") {

TEST_CASE("config JSON round trip preserves every field") {
    RegistrationConfig cfg;
    cfg.kernel.sigma0 = 12.5;
    cfg.kernel.scale_divisors = {1.0, 3.0, 9.0};
    cfg.integrator.steps = 21;
    cfg.attachment_weight = 42.0;
    cfg.stage_fractions = {0.9, 0.3, 0.1};
    cfg.lbfgs.memory = 7;
    cfg.lbfgs.max_iters = 55;
    cfg.lbfgs.grad_rtol = 3e-4;
    cfg.lbfgs.wolfe_c1 = 2e-4;
    cfg.lbfgs.wolfe_c2 = 0.8;

    const auto parsed = registration_config_from_json(registration_config_to_json(cfg));
    CHECK(parsed.kernel.sigma0 == cfg.kernel.sigma0);
    CHECK(parsed.kernel.scale_divisors == cfg.kernel.scale_divisors);
    CHECK(parsed.integrator.steps == cfg.integrator.steps);
    CHECK(parsed.attachment_weight == cfg.attachment_weight);
    CHECK(parsed.stage_fractions == cfg.stage_fractions);
    CHECK(parsed.lbfgs.memory == cfg.lbfgs.memory);
    CHECK(parsed.lbfgs.max_iters == cfg.lbfgs.max_iters);
    CHECK(parsed.lbfgs.grad_rtol == cfg.lbfgs.grad_rtol);
    CHECK(parsed.lbfgs.wolfe_c1 == cfg.lbfgs.wolfe_c1);
    CHECK(parsed.lbfgs.wolfe_c2 == cfg.lbfgs.wolfe_c2);
}

TEST_CASE("partial config documents keep defaults for omitted fields") {
    const auto cfg = registration_config_from_json(R"({"attachment_weight": 55})");
    CHECK(cfg.attachment_weight == 55.0);
    CHECK(cfg.integrator.steps == RegistrationConfig{}.integrator.steps);
    CHECK(cfg.stage_fractions == RegistrationConfig{}.stage_fractions);
    CHECK(registration_config_from_json("{}").attachment_weight ==
          RegistrationConfig{}.attachment_weight);
}

TEST_CASE("unknown or malformed config fields are rejected") {
    CHECK_THROWS_AS(registration_config_from_json(R"({"attachment": 1})"), ValidationError);
    CHECK_THROWS_AS(registration_config_from_json(R"({"lbfgs": {"iters": 5}})"),
                    ValidationError);
    CHECK_THROWS_AS(registration_config_from_json(R"({"kernel": {"sigma": 1}})"),
                    ValidationError);
    CHECK_THROWS_AS(registration_config_from_json("not json"), ValidationError);
    CHECK_THROWS_AS(registration_config_from_json(R"({"stages": []})"), ValidationError);
    CHECK_THROWS_AS(registration_config_from_json(R"({"integrator": {"steps": 2.5}})"),
                    ValidationError);
}

TEST_CASE("config validation enforces the documented ranges") {
    RegistrationConfig cfg;
    cfg.attachment_weight = 0.0;
    CHECK_THROWS_AS(validate_registration_config(cfg), ValidationError);
    cfg = RegistrationConfig{};
    cfg.stage_fractions = {0.25, 1.0};  // must be decreasing
    CHECK_THROWS_AS(validate_registration_config(cfg), ValidationError);
    cfg = RegistrationConfig{};
    cfg.stage_fractions = {1.0, 1.0};
    CHECK_THROWS_AS(validate_registration_config(cfg), ValidationError);
    cfg = RegistrationConfig{};
    cfg.lbfgs.max_iters = 0;
    CHECK_THROWS_AS(validate_registration_config(cfg), ValidationError);
    CHECK_NOTHROW(validate_registration_config(RegistrationConfig{}));
}

TEST_CASE("objective gradient matches finite differences at every stage") {
    Rng rng(61);
    const RegistrationConfig cfg;
    for (int trial = 0; trial < 2; ++trial) {
        testutil::TreeShape shape;
        shape.max_depth = 1;  // 3 branches, 9 stored points
        const auto source = testutil::random_tree(rng, shape);
        const auto target = testutil::random_tree(rng, shape);
        const auto momenta =
            testutil::random_field(rng, static_cast<std::size_t>(source.total_point_count()), 0.1);

        for (int stage = 0; stage < 2; ++stage) {
            const auto [value, grad] = objective_and_gradient(source, target, momenta, cfg, stage);
            CHECK(std::isfinite(value));

            const auto f = [&](const std::vector<double>& flat) {
                return objective_and_gradient(source, target, testutil::unflatten(flat), cfg,
                                              stage)
                    .first;
            };
            const auto fd = testutil::fd_gradient(f, testutil::flatten(momenta), 1e-5);
            const double scale = std::max(1.0, testutil::max_abs(fd));
            CHECK(testutil::max_abs_diff(testutil::flatten(grad), fd) <= 1e-4 * scale);
        }
    }
}

TEST_CASE("stage index and momenta length are validated") {
    Rng rng(62);
    const auto tree = testutil::random_tree(rng);
    const std::vector<Vec3> zero(static_cast<std::size_t>(tree.total_point_count()));
    CHECK_THROWS_AS(objective_and_gradient(tree, tree, zero, RegistrationConfig{}, 5),
                    ValidationError);
    CHECK_THROWS_AS(objective_and_gradient(tree, tree, zero, RegistrationConfig{}, -1),
                    ValidationError);
    const std::vector<Vec3> short_field(3);
    CHECK_THROWS_AS(objective_and_gradient(tree, tree, short_field, RegistrationConfig{}, 0),
                    ValidationError);
}

TEST_CASE("registering a tree onto itself is an immediate fixed point") {
    Rng rng(63);
    const auto tree = testutil::random_tree(rng);
    const auto result = register_trees(tree, tree, quick_config());
    CHECK(result.iterations <= 2);
    CHECK(result.objective_trace.back() < 1e-8);
    CHECK(result.final_attachment < 1e-8);
    for (const Vec3& p : result.momenta) {
        CHECK(norm(p) < 1e-6);
    }
    CHECK(trees_close(result.deformed_source, tree, 1e-6));
}

TEST_CASE("a small translation is recovered almost exactly") {
    Rng rng(64);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    const auto cfg = quick_config();

    const auto probe = register_trees(source, source, cfg);  // resolves sigma0
    const Vec3 shift = Vec3{0.6, -0.5, 0.4} * (0.1 * probe.sigma0 / norm(Vec3{0.6, -0.5, 0.4}));
    const auto target = translated(source, shift);

    const double a0 = initial_attachment(source, target, cfg);
    REQUIRE(a0 > 0.0);

    const auto result = register_trees(source, target, cfg);
    CHECK(result.final_attachment < 1e-3 * a0);

    const auto deformed = PointCloudView::of(result.deformed_source);
    const auto wanted = PointCloudView::of(target);
    for (std::size_t i = 0; i < wanted.points.size(); ++i) {
        CHECK(distance(deformed.points[i], wanted.points[i]) <= 0.01 * result.sigma0);
    }
}

TEST_CASE("an in-model deformation is matched to a small residual") {
    Rng rng(65);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    const auto cfg = quick_config();

    const auto probe = register_trees(source, source, cfg);
    const auto view = PointCloudView::of(source);
    auto momenta = testutil::random_field(rng, view.points.size(), 0.0);
    {
        // Momenta sized for a few percent of the kernel width displacement.
        const auto raw = testutil::random_field(rng, view.points.size(), 1.0);
        for (std::size_t i = 0; i < raw.size(); ++i) momenta[i] = raw[i] * (0.002 * probe.sigma0);
    }
    const KernelSpec spec{probe.sigma0, cfg.kernel.scale_divisors};
    const auto target = shoot_tree(source, momenta, spec, cfg.integrator);

    const auto result = register_trees(source, target, cfg);
    const auto deformed = PointCloudView::of(result.deformed_source);
    const auto wanted = PointCloudView::of(target);
    double rms = 0.0;
    for (std::size_t i = 0; i < wanted.points.size(); ++i) {
        rms += distance2(deformed.points[i], wanted.points[i]);
    }
    rms = std::sqrt(rms / static_cast<double>(wanted.points.size()));
    CHECK(rms <= 0.02 * result.sigma0);
}

TEST_CASE("translating the whole problem translates the solution") {
    Rng rng(66);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    auto target = testutil::random_tree(rng, shape);
    const auto cfg = quick_config();

    const auto base = register_trees(source, target, cfg);

    const Vec3 shift{5.0, -3.0, 2.0};
    const auto moved = register_trees(translated(source, shift), translated(target, shift), cfg);

    REQUIRE(moved.momenta.size() == base.momenta.size());
    // The shifted problem normalizes to the same internal problem only up to
    // rounding, and the optimizer path amplifies that, so agreement is to
    // optimization accuracy rather than machine precision.
    double pmax = 0.0;
    for (const Vec3& p : base.momenta) pmax = std::max(pmax, norm(p));
    for (std::size_t i = 0; i < base.momenta.size(); ++i) {
        CHECK(norm(moved.momenta[i] - base.momenta[i]) <= 1e-4 * std::max(1.0, pmax));
    }

    const auto a = PointCloudView::of(base.deformed_source);
    const auto b = PointCloudView::of(moved.deformed_source);
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(norm(b.points[i] - (a.points[i] + shift)) <= 1e-4 * std::max(1.0, base.sigma0));
    }
}

TEST_CASE("stage traces never increase and feed the final trace") {
    Rng rng(67);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    const auto target = testutil::random_tree(rng, shape);
    const auto result = register_trees(source, target, quick_config());

    REQUIRE(result.stage_traces.size() == 2);
    for (const auto& trace : result.stage_traces) {
        REQUIRE_FALSE(trace.empty());
        for (std::size_t i = 1; i < trace.size(); ++i) {
            CHECK(trace[i] <= trace[i - 1]);
        }
    }
    CHECK(result.objective_trace == result.stage_traces.back());
    CHECK(result.final_energy >= 0.0);
    CHECK(result.final_attachment >= 0.0);
}

TEST_CASE("the kernel width comes from the config or from the pair geometry") {
    Rng rng(68);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    const auto target = translated(source, Vec3{0.3, 0.0, 0.0});
    auto cfg = quick_config();

    Aabb box;
    for (const auto* t : {&source, &target}) {
        const auto view = PointCloudView::of(*t);
        for (const auto& p : view.points) box.expand(p);
    }
    const auto resolved = register_trees(source, target, cfg);
    CHECK(resolved.sigma0 == doctest::Approx(0.5 * box.max_side()).epsilon(1e-12));

    cfg.kernel.sigma0 = 3.75;
    const auto fixed = register_trees(source, target, cfg);
    CHECK(fixed.sigma0 == doctest::Approx(3.75).epsilon(1e-12));
}

TEST_CASE("the result serializes into a readable JSON document") {
    Rng rng(69);
    testutil::TreeShape shape;
    shape.max_depth = 1;
    const auto source = testutil::random_tree(rng, shape);
    const auto target = testutil::random_tree(rng, shape);
    const auto result = register_trees(source, target, quick_config());

    const auto doc = nlohmann::json::parse(registration_result_to_json(result));
    REQUIRE(doc.contains("momenta"));
    REQUIRE(doc.contains("deformed_source"));
    CHECK(doc.at("momenta").size() == static_cast<std::size_t>(source.total_point_count()));
    CHECK(doc.at("sigma0").get<double>() == result.sigma0);
    CHECK_NOTHROW(parse_tree(doc.at("deformed_source").dump()));
    CHECK(doc.at("objective_trace").size() == result.objective_trace.size());
}

}  // TEST_SUITE

}  // namespace
}  // namespace vesselatlas
