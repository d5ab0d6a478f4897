#pragma once

// Registers one tree onto another: minimize J(p) = E(p) + lambda * A(q(1), T)
// over initial momenta with L-BFGS, coarse to fine over attachment widths.
//
// Each pair is solved in a normalized frame (union centroid at the origin,
// union bounding box scaled to unit size) so tolerances and the default
// kernel width are scale-free. Momenta cross that boundary as p = L * p',
// where L is the box side; results come back in the caller's coordinates.

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vesselatlas/kernel.hpp"
#include "vesselatlas/lbfgs.hpp"
#include "vesselatlas/shooting.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

struct RegistrationConfig {
    KernelSpec kernel;                // sigma0 <= 0: half the pair's union box side
    IntegratorConfig integrator;
    double attachment_weight = 100.0;
    // Attachment spatial widths as fractions of sigma0, one optimization
    // stage each, warm-started in order.
    std::vector<double> stage_fractions{1.0, 0.25};
    LbfgsConfig lbfgs;
};

void validate_registration_config(const RegistrationConfig& cfg);

RegistrationConfig registration_config_from_json(std::string_view text);
std::string registration_config_to_json(const RegistrationConfig& cfg);
RegistrationConfig load_registration_config(const std::string& path);

struct RegistrationResult {
    MomentaField momenta;              // one per source point, caller frame
    VascularTree deformed_source;
    std::vector<double> objective_trace;            // final stage
    std::vector<std::vector<double>> stage_traces;  // every stage, in order
    double final_energy = 0.0;         // E at the optimum (normalized frame)
    double final_attachment = 0.0;     // A at the optimum (normalized frame)
    double sigma0 = 0.0;               // resolved kernel width, caller frame
    int iterations = 0;                // accepted steps across stages
    bool line_search_warning = false;
};

std::string registration_result_to_json(const RegistrationResult& result);

// Objective and its exact gradient at one attachment stage. momenta are
// per-point in the caller's frame, matching the source tree's flat point
// order; coincident junction copies act through their sum. The value is
// reported in the pair's normalized frame.
std::pair<double, MomentaField> objective_and_gradient(const VascularTree& source,
                                                       const VascularTree& target,
                                                       std::span<const Vec3> momenta,
                                                       const RegistrationConfig& cfg,
                                                       int stage);

RegistrationResult register_trees(const VascularTree& source,
                                  const VascularTree& target,
                                  const RegistrationConfig& cfg);

}  // namespace vesselatlas
