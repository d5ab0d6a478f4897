#include "vesselatlas/registration.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "vesselatlas/attachment.hpp"
#include "vesselatlas/errors.hpp"
#include "vesselatlas/tree_io.hpp"
#include "vesselatlas/tree_shooting.hpp"

namespace vesselatlas {

void validate_registration_config(const RegistrationConfig& cfg) {
    if (cfg.kernel.sigma0 > 0.0 && !std::isfinite(cfg.kernel.sigma0)) {
        throw ValidationError("kernel sigma0 must be finite");
    }
    if (cfg.kernel.scale_divisors.empty()) {
        throw ValidationError("kernel needs at least one scale divisor");
    }
    for (double s : cfg.kernel.scale_divisors) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ValidationError("kernel scale divisors must be positive and finite");
        }
    }
    validate_integrator_config(cfg.integrator);
    if (!(cfg.attachment_weight > 0.0) || !std::isfinite(cfg.attachment_weight)) {
        throw ValidationError("attachment weight must be positive and finite");
    }
    if (cfg.stage_fractions.empty()) {
        throw ValidationError("registration needs at least one stage");
    }
    double prev = std::numeric_limits<double>::infinity();
    for (double f : cfg.stage_fractions) {
        if (!(f > 0.0) || !std::isfinite(f)) {
            throw ValidationError("stage fractions must be positive and finite");
        }
        if (!(f < prev)) throw ValidationError("stage fractions must be decreasing");
        prev = f;
    }
    if (cfg.lbfgs.memory < 1) throw ValidationError("lbfgs memory must be at least 1");
    if (cfg.lbfgs.max_iters < 1) throw ValidationError("lbfgs max_iters must be at least 1");
    if (!(cfg.lbfgs.grad_rtol > 0.0)) throw ValidationError("lbfgs grad_rtol must be positive");
    if (!(cfg.lbfgs.wolfe_c1 > 0.0) || !(cfg.lbfgs.wolfe_c1 < cfg.lbfgs.wolfe_c2) ||
        !(cfg.lbfgs.wolfe_c2 < 1.0)) {
        throw ValidationError("wolfe constants must satisfy 0 < c1 < c2 < 1");
    }
}

namespace {

using nlohmann::json;

double number_field(const json& obj, const char* key, double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw ValidationError(std::string("config field '") + key + "' must be a number");
    return v.get<double>();
}

int int_field(const json& obj, const char* key, int fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer()) {
        throw ValidationError(std::string("config field '") + key + "' must be an integer");
    }
    return v.get<int>();
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const char* where) {
    for (const auto& item : obj.items()) {
        bool ok = false;
        for (const char* k : known) {
            if (item.key() == k) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw ValidationError(std::string("unknown config field '") + item.key() + "' in " +
                                  where);
        }
    }
}

}  // namespace

RegistrationConfig registration_config_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid registration config JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("registration config must be a JSON object");
    reject_unknown_keys(doc, {"kernel", "integrator", "attachment_weight", "stages", "lbfgs"},
                        "registration config");

    RegistrationConfig cfg;
    if (doc.contains("kernel")) {
        const json& k = doc.at("kernel");
        if (!k.is_object()) throw ValidationError("'kernel' must be an object");
        reject_unknown_keys(k, {"sigma0", "scale_divisors"}, "kernel");
        cfg.kernel.sigma0 = number_field(k, "sigma0", cfg.kernel.sigma0);
        if (k.contains("scale_divisors")) {
            const json& d = k.at("scale_divisors");
            if (!d.is_array() || d.empty()) {
                throw ValidationError("'scale_divisors' must be a non-empty array");
            }
            cfg.kernel.scale_divisors.clear();
            for (const json& v : d) {
                if (!v.is_number()) throw ValidationError("scale divisors must be numbers");
                cfg.kernel.scale_divisors.push_back(v.get<double>());
            }
        }
    }
    if (doc.contains("integrator")) {
        const json& it = doc.at("integrator");
        if (!it.is_object()) throw ValidationError("'integrator' must be an object");
        reject_unknown_keys(it, {"steps"}, "integrator");
        cfg.integrator.steps = int_field(it, "steps", cfg.integrator.steps);
    }
    cfg.attachment_weight = number_field(doc, "attachment_weight", cfg.attachment_weight);
    if (doc.contains("stages")) {
        const json& st = doc.at("stages");
        if (!st.is_array() || st.empty()) throw ValidationError("'stages' must be a non-empty array");
        cfg.stage_fractions.clear();
        for (const json& v : st) {
            if (!v.is_number()) throw ValidationError("stages must be numbers");
            cfg.stage_fractions.push_back(v.get<double>());
        }
    }
    if (doc.contains("lbfgs")) {
        const json& lb = doc.at("lbfgs");
        if (!lb.is_object()) throw ValidationError("'lbfgs' must be an object");
        reject_unknown_keys(lb, {"memory", "max_iters", "grad_rtol", "wolfe_c1", "wolfe_c2"},
                            "lbfgs");
        cfg.lbfgs.memory = int_field(lb, "memory", cfg.lbfgs.memory);
        cfg.lbfgs.max_iters = int_field(lb, "max_iters", cfg.lbfgs.max_iters);
        cfg.lbfgs.grad_rtol = number_field(lb, "grad_rtol", cfg.lbfgs.grad_rtol);
        cfg.lbfgs.wolfe_c1 = number_field(lb, "wolfe_c1", cfg.lbfgs.wolfe_c1);
        cfg.lbfgs.wolfe_c2 = number_field(lb, "wolfe_c2", cfg.lbfgs.wolfe_c2);
    }
    validate_registration_config(cfg);
    return cfg;
}

std::string registration_config_to_json(const RegistrationConfig& cfg) {
    json doc;
    doc["kernel"]["sigma0"] = cfg.kernel.sigma0;
    doc["kernel"]["scale_divisors"] = cfg.kernel.scale_divisors;
    doc["integrator"]["steps"] = cfg.integrator.steps;
    doc["attachment_weight"] = cfg.attachment_weight;
    doc["stages"] = cfg.stage_fractions;
    doc["lbfgs"]["memory"] = cfg.lbfgs.memory;
    doc["lbfgs"]["max_iters"] = cfg.lbfgs.max_iters;
    doc["lbfgs"]["grad_rtol"] = cfg.lbfgs.grad_rtol;
    doc["lbfgs"]["wolfe_c1"] = cfg.lbfgs.wolfe_c1;
    doc["lbfgs"]["wolfe_c2"] = cfg.lbfgs.wolfe_c2;
    return doc.dump(2) + "\n";
}

RegistrationConfig load_registration_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open registration config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return registration_config_from_json(buf.str());
}

std::string registration_result_to_json(const RegistrationResult& result) {
    json doc;
    doc["deformed_source"] = json::parse(serialize_tree(result.deformed_source));
    json momenta = json::array();
    for (const Vec3& p : result.momenta) momenta.push_back({p.x, p.y, p.z});
    doc["momenta"] = std::move(momenta);
    doc["objective_trace"] = result.objective_trace;
    doc["stage_traces"] = result.stage_traces;
    doc["final_energy"] = result.final_energy;
    doc["final_attachment"] = result.final_attachment;
    doc["sigma0"] = result.sigma0;
    doc["iterations"] = result.iterations;
    doc["line_search_warning"] = result.line_search_warning;
    return doc.dump(2) + "\n";
}

namespace {

// One source/target pair mapped to the normalized frame, with everything the
// per-stage objective needs precomputed.
struct PairProblem {
    KernelSpec kernel;     // normalized frame
    IntegratorConfig integrator;
    double lambda = 0.0;
    std::vector<double> stage_sigmas;  // normalized attachment widths
    ControlCloud cloud;
    std::vector<Point3> q0;            // normalized unique controls
    CurrentRepresentation source_current;
    CurrentRepresentation target_current;
    std::vector<double> target_self;   // per-stage varifold_inner(target, target)
    Vec3 center{0.0, 0.0, 0.0};
    double scale = 1.0;
};

PairProblem build_pair(const VascularTree& source, const VascularTree& target,
                       const RegistrationConfig& cfg) {
    const auto source_view = PointCloudView::of(source);
    const auto target_view = PointCloudView::of(target);

    Vec3 sum{0.0, 0.0, 0.0};
    Aabb box;
    for (const Point3& p : source_view.points) {
        sum += p;
        box.expand(p);
    }
    for (const Point3& p : target_view.points) {
        sum += p;
        box.expand(p);
    }
    const double count = static_cast<double>(source_view.points.size() + target_view.points.size());
    const Vec3 center = sum / count;
    const double scale = box.max_side();
    if (!(scale > 0.0)) throw ValidationError("registration pair is geometrically degenerate");

    auto normalize = [&](std::vector<Point3> pts) {
        for (Point3& p : pts) p = (p - center) / scale;
        return pts;
    };

    PairProblem pp;
    pp.center = center;
    pp.scale = scale;
    pp.integrator = cfg.integrator;
    pp.lambda = cfg.attachment_weight;
    pp.kernel.scale_divisors = cfg.kernel.scale_divisors;
    pp.kernel.sigma0 = cfg.kernel.sigma0 > 0.0 ? cfg.kernel.sigma0 / scale : 0.5;

    pp.cloud = ControlCloud::of(source);
    pp.q0 = normalize(pp.cloud.points);

    const VascularTree source_norm = source.with_point_positions(normalize(source_view.points));
    const VascularTree target_norm = target.with_point_positions(normalize(target_view.points));
    pp.source_current = to_current(source_norm);
    pp.target_current = to_current(target_norm);

    pp.stage_sigmas.reserve(cfg.stage_fractions.size());
    pp.target_self.reserve(cfg.stage_fractions.size());
    for (double f : cfg.stage_fractions) {
        const double sigma = f * pp.kernel.sigma0;
        pp.stage_sigmas.push_back(sigma);
        pp.target_self.push_back(
            varifold_inner(AttachmentSpec{sigma}, pp.target_current, pp.target_current));
    }
    return pp;
}

struct EvalParts {
    double value = 0.0;
    double energy = 0.0;
    double attachment = 0.0;
};

// Objective at one stage over flattened per-control momenta. Writes the
// gradient when grad is non-empty; reports t=1 normalized positions of all
// source points when deformed is non-null.
EvalParts eval_stage(const PairProblem& pp, std::size_t stage, std::span<const double> x,
                     std::span<double> grad, std::vector<Point3>* deformed = nullptr) {
    const std::size_t n = pp.q0.size();
    MomentaField p0(n);
    for (std::size_t i = 0; i < n; ++i) {
        p0[i] = Vec3{x[3 * i], x[3 * i + 1], x[3 * i + 2]};
    }

    const ShootingResult shot = shoot(pp.kernel, pp.q0, p0, pp.integrator);
    const AttachmentSpec att{pp.stage_sigmas[stage]};

    const auto full = pp.cloud.scatter(shot.final_positions());
    const CurrentRepresentation moved = pp.source_current.with_points(full);
    const double gaa = varifold_inner(att, moved, moved);
    const double gab = varifold_inner(att, moved, pp.target_current);

    EvalParts parts;
    parts.energy = 2.0 * shot.hamiltonian_trace.front();
    parts.attachment = std::max(0.0, gaa + pp.target_self[stage] - 2.0 * gab);
    parts.value = parts.energy + pp.lambda * parts.attachment;

    if (!grad.empty()) {
        const auto kp = kernel_matvec(pp.kernel, pp.q0, pp.q0, p0);

        auto point_grad = attachment_gradient(att, moved, pp.target_current);
        for (Vec3& g : point_grad) g *= pp.lambda;
        const auto qbar1 = pp.cloud.gather_sums(point_grad);
        const MomentaField pbar1(n, Vec3{0.0, 0.0, 0.0});
        const auto [qbar0, pbar0] = shoot_vjp(shot, qbar1, pbar1);

        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 g = kp[i] * 2.0 + pbar0[i];
            grad[3 * i] = g.x;
            grad[3 * i + 1] = g.y;
            grad[3 * i + 2] = g.z;
        }
    }
    if (deformed != nullptr) *deformed = full;
    return parts;
}

}  // namespace

std::pair<double, MomentaField> objective_and_gradient(const VascularTree& source,
                                                       const VascularTree& target,
                                                       std::span<const Vec3> momenta,
                                                       const RegistrationConfig& cfg,
                                                       int stage) {
    validate_registration_config(cfg);
    if (stage < 0 || stage >= static_cast<int>(cfg.stage_fractions.size())) {
        throw ValidationError("stage index out of range");
    }
    const PairProblem pp = build_pair(source, target, cfg);

    // Caller momenta are per point; the pair is solved over per-control sums
    // scaled into the normalized frame.
    const auto sums = pp.cloud.gather_sums(momenta);
    std::vector<double> x(3 * pp.q0.size());
    for (std::size_t i = 0; i < sums.size(); ++i) {
        const Vec3 p = sums[i] / pp.scale;
        x[3 * i] = p.x;
        x[3 * i + 1] = p.y;
        x[3 * i + 2] = p.z;
    }

    std::vector<double> grad(x.size());
    const EvalParts parts = eval_stage(pp, static_cast<std::size_t>(stage), x, grad);

    // d/dp_i = (1/L) dJ/dP'_{group(i)}: every coincident copy sees the whole
    // group derivative.
    std::vector<Vec3> grad_controls(pp.q0.size());
    for (std::size_t i = 0; i < grad_controls.size(); ++i) {
        grad_controls[i] =
            Vec3{grad[3 * i], grad[3 * i + 1], grad[3 * i + 2]} / pp.scale;
    }
    return {parts.value, pp.cloud.scatter(grad_controls)};
}

RegistrationResult register_trees(const VascularTree& source, const VascularTree& target,
                                  const RegistrationConfig& cfg) {
    validate_registration_config(cfg);
    const PairProblem pp = build_pair(source, target, cfg);
    const std::size_t n = pp.q0.size();

    std::vector<double> x(3 * n, 0.0);
    std::vector<std::vector<double>> stage_traces;
    stage_traces.reserve(pp.stage_sigmas.size());
    int iterations = 0;
    bool warned = false;

    for (std::size_t s = 0; s < pp.stage_sigmas.size(); ++s) {
        auto objective = [&](std::span<const double> xs, std::span<double> gs) {
            return eval_stage(pp, s, xs, gs).value;
        };
        LbfgsOutcome out = lbfgs_minimize(objective, x, cfg.lbfgs);
        x = std::move(out.x);
        iterations += out.iterations;
        warned = warned || out.line_search_failed;
        stage_traces.push_back(std::move(out.trace));
    }

    std::vector<Point3> deformed_norm;
    const EvalParts parts =
        eval_stage(pp, pp.stage_sigmas.size() - 1, x, {}, &deformed_norm);

    for (Point3& p : deformed_norm) p = p * pp.scale + pp.center;

    std::vector<Vec3> final_controls(n);
    for (std::size_t i = 0; i < n; ++i) {
        final_controls[i] =
            Vec3{x[3 * i], x[3 * i + 1], x[3 * i + 2]} * pp.scale;
    }

    RegistrationResult result{
        .momenta = pp.cloud.spread_equal(final_controls),
        .deformed_source = source.with_point_positions(deformed_norm),
        .objective_trace = stage_traces.back(),
        .stage_traces = std::move(stage_traces),
        .final_energy = parts.energy,
        .final_attachment = parts.attachment,
        .sigma0 = pp.kernel.sigma0 * pp.scale,
        .iterations = iterations,
        .line_search_warning = warned,
    };
    return result;
}

}  // namespace vesselatlas
