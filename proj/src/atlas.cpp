#include "vesselatlas/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "vesselatlas/errors.hpp"
#include "vesselatlas/parallel.hpp"
#include "vesselatlas/tree_io.hpp"
#include "vesselatlas/tree_shooting.hpp"

namespace vesselatlas {

namespace {

using nlohmann::json;

double field_norm(const MomentaField& field) {
    double sum = 0.0;
    for (const Vec3& v : field) sum += norm2(v);
    return std::sqrt(sum);
}

void require_same_structure(const VascularTree& a, const VascularTree& b, const char* what) {
    bool ok = a.branch_count() == b.branch_count() && a.root() == b.root() &&
              a.edges() == b.edges();
    if (ok) {
        for (int i = 0; i < a.branch_count(); ++i) {
            if (a.branch(i).label != b.branch(i).label ||
                a.branch(i).points.size() != b.branch(i).points.size()) {
                ok = false;
                break;
            }
        }
    }
    if (!ok) throw ValidationError(std::string(what) + ": trees differ in structure");
}

}  // namespace

std::pair<Atlas, AtlasBuildReport> build_atlas(const VascularTree& reference,
                                               const std::vector<VascularTree>& targets,
                                               int iterations,
                                               const RegistrationConfig& cfg,
                                               int jobs,
                                               const RegisterFn& register_fn) {
    validate_registration_config(cfg);
    if (iterations < 0) throw ValidationError("atlas iteration count must be nonnegative");
    if (targets.empty()) throw ValidationError("atlas construction needs at least one target");
    const RegisterFn reg = register_fn ? register_fn : RegisterFn(register_trees);
    const std::size_t n = targets.size();

    AtlasBuildReport report;
    report.reference_in_targets = false;
    for (const VascularTree& t : targets) {
        if (trees_close(reference, t)) {
            report.reference_in_targets = true;
            break;
        }
    }

    Atlas atlas{
        .reference = reference,
        .mean_momenta =
            MomentaField(static_cast<std::size_t>(reference.total_point_count()), Vec3{0.0, 0.0, 0.0}),
        .mean_tree = reference,
        .iteration = 0,
    };

    // Momenta are averaged in an input-order-independent sequence: targets
    // sorted by serialized bytes, ties by index.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    {
        std::vector<std::string> keys;
        keys.reserve(n);
        for (const VascularTree& t : targets) keys.push_back(serialize_tree(t));
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
        });
    }

    for (int it = 1; it <= iterations; ++it) {
        const VascularTree current = atlas.mean_tree;
        std::vector<std::optional<RegistrationResult>> results(n);
        parallel_for(n, jobs, [&](std::size_t i) {
            try {
                results[i] = reg(current, targets[i], cfg);
            } catch (const NumericalError&) {
                // Divergence on one pair aborts the iteration after the
                // barrier; the slot stays empty.
            }
        });

        bool diverged = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (!results[i]) {
                diverged = true;
                continue;
            }
            report.records.push_back(AtlasTargetRecord{
                .iteration = it,
                .target_index = static_cast<int>(i),
                .objective = results[i]->objective_trace.back(),
                .energy = results[i]->final_energy,
                .attachment = results[i]->final_attachment,
                .line_search_warning = results[i]->line_search_warning,
            });
        }
        if (diverged) {
            report.aborted = true;
            report.aborted_iteration = it;
            break;
        }

        MomentaField mean(static_cast<std::size_t>(current.total_point_count()),
                          Vec3{0.0, 0.0, 0.0});
        for (std::size_t idx : order) {
            const MomentaField& m = results[idx]->momenta;
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += m[k];
        }
        for (Vec3& v : mean) v = v / static_cast<double>(n);

        VascularTree next = current;
        try {
            next = shoot_tree(current, mean, cfg.kernel, cfg.integrator);
        } catch (const NumericalError&) {
            report.aborted = true;
            report.aborted_iteration = it;
            break;
        }

        atlas.mean_momenta = std::move(mean);
        atlas.mean_tree = std::move(next);
        atlas.iteration = it;
        report.mean_momentum_norms.push_back(field_norm(atlas.mean_momenta));
    }

    return {std::move(atlas), std::move(report)};
}

ReferenceSelection select_reference(
    const std::vector<VascularTree>& annotated,
    const std::function<Labeling(const VascularTree&, const VascularTree&)>& labeler,
    int jobs) {
    if (annotated.size() < 2) {
        throw ValidationError("reference selection needs at least two annotated trees");
    }
    if (!labeler) throw ValidationError("reference selection needs a labeler");
    const std::size_t n = annotated.size();

    std::vector<double> cell(n * n, 0.0);
    parallel_for(n * n, jobs, [&](std::size_t k) {
        const std::size_t i = k / n;
        const std::size_t j = k % n;
        if (i == j) return;
        try {
            const Labeling predicted = labeler(annotated[i], annotated[j]);
            cell[k] = precision(predicted, annotated[j].labels());
        } catch (const std::exception&) {
            cell[k] = 0.0;
        }
    });

    ReferenceSelection sel;
    sel.mean_precision.resize(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) sum += cell[i * n + j];
        }
        sel.mean_precision[i] = sum / static_cast<double>(n - 1);
    }
    sel.index = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (sel.mean_precision[i] > sel.mean_precision[sel.index]) {
            sel.index = static_cast<int>(i);
        }
    }
    sel.degraded = !(sel.mean_precision[static_cast<std::size_t>(sel.index)] > 0.0);
    return sel;
}

std::string atlas_to_json(const Atlas& atlas) {
    json doc;
    doc["iteration"] = atlas.iteration;
    doc["reference"] = json::parse(serialize_tree(atlas.reference));
    doc["mean_tree"] = json::parse(serialize_tree(atlas.mean_tree));
    json momenta = json::array();
    for (const Vec3& p : atlas.mean_momenta) momenta.push_back({p.x, p.y, p.z});
    doc["mean_momenta"] = std::move(momenta);
    return doc.dump(2) + "\n";
}

Atlas atlas_from_json(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid atlas JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("reference") || !doc.contains("mean_tree") ||
        !doc.contains("mean_momenta") || !doc.contains("iteration")) {
        throw ValidationError("atlas JSON needs reference, mean_tree, mean_momenta, iteration");
    }
    if (!doc.at("iteration").is_number_integer() || doc.at("iteration").get<int>() < 0) {
        throw ValidationError("atlas iteration must be a nonnegative integer");
    }
    VascularTree reference = parse_tree(doc.at("reference").dump());
    VascularTree mean_tree = parse_tree(doc.at("mean_tree").dump());
    require_same_structure(reference, mean_tree, "atlas");

    const json& mom = doc.at("mean_momenta");
    if (!mom.is_array() || static_cast<int>(mom.size()) != mean_tree.total_point_count()) {
        throw ValidationError("atlas momenta must align with the tree's points");
    }
    MomentaField momenta;
    momenta.reserve(mom.size());
    for (const json& entry : mom) {
        if (!entry.is_array() || entry.size() != 3 || !entry[0].is_number() ||
            !entry[1].is_number() || !entry[2].is_number()) {
            throw ValidationError("atlas momenta entries must be [x, y, z] numbers");
        }
        const Vec3 v{entry[0].get<double>(), entry[1].get<double>(), entry[2].get<double>()};
        if (!is_finite(v)) throw ValidationError("atlas momenta must be finite");
        momenta.push_back(v);
    }

    return Atlas{
        .reference = std::move(reference),
        .mean_momenta = std::move(momenta),
        .mean_tree = std::move(mean_tree),
        .iteration = doc.at("iteration").get<int>(),
    };
}

Atlas load_atlas_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open atlas file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();

    json probe;
    try {
        probe = json::parse(bytes);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid atlas JSON: ") + e.what());
    }
    if (probe.is_object() && probe.contains("mean_tree")) return atlas_from_json(bytes);

    // A bare labeled tree acts as its own iteration-0 atlas.
    VascularTree tree = parse_tree(bytes);
    MomentaField zeros(static_cast<std::size_t>(tree.total_point_count()), Vec3{0.0, 0.0, 0.0});
    return Atlas{
        .reference = tree,
        .mean_momenta = std::move(zeros),
        .mean_tree = std::move(tree),
        .iteration = 0,
    };
}

void save_atlas_file(const Atlas& atlas, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write atlas file: " + path);
    out << atlas_to_json(atlas);
    if (!out) throw ValidationError("failed writing atlas file: " + path);
}

}  // namespace vesselatlas
