#pragma once

#include <span>
#include <utility>
#include <vector>

#include "vesselatlas/geometry.hpp"
#include "vesselatlas/kernel.hpp"

namespace vesselatlas {

// Initial momenta, one dual vector per point of the owning point cloud.
using MomentaField = std::vector<Vec3>;

// Fixed-step 4th-order Runge-Kutta on t in [0, 1].
struct IntegratorConfig {
    int steps = 15;
};

void validate_integrator_config(const IntegratorConfig& cfg);

// Particle trajectory of the Hamiltonian system
//   dq_i/dt =  sum_j K(q_i,q_j) p_j
//   dp_i/dt = -1/2 grad_{q_i} sum_{j,l} K(q_j,q_l) <p_j,p_l>
// Frame k holds the state at t = k/steps; frame 0 is the input.
struct ShootingResult {
    KernelSpec kernel;
    IntegratorConfig integrator;
    std::vector<std::vector<Point3>> trajectory;
    std::vector<std::vector<Vec3>> momenta_trajectory;
    std::vector<double> hamiltonian_trace;

    const std::vector<Point3>& final_positions() const { return trajectory.back(); }
    const std::vector<Vec3>& final_momenta() const { return momenta_trajectory.back(); }
};

// H(q, p) = 1/2 sum_{i,j} K(q_i,q_j) <p_i,p_j>; conserved along exact geodesics.
double hamiltonian(const KernelSpec& spec,
                   std::span<const Point3> points,
                   std::span<const Vec3> momenta);

// p'K(q)p = 2 H(q, p), the deformation cost of the geodesic with this start.
double path_energy(const KernelSpec& spec,
                   std::span<const Point3> points,
                   std::span<const Vec3> momenta);

ShootingResult shoot(const KernelSpec& spec,
                     std::span<const Point3> points,
                     std::span<const Vec3> momenta,
                     const IntegratorConfig& cfg);

// Advects passive points through the stored flow: x' = sum_j K(x, q_j(t)) p_j(t),
// with control states re-evaluated at the RK4 substeps so passive points keep
// 4th-order accuracy. spec and cfg must match the ones stored in `shooting`.
std::vector<Point3> flow_points(const KernelSpec& spec,
                                const ShootingResult& shooting,
                                std::span<const Point3> passive,
                                const IntegratorConfig& cfg);

// Pulls a cotangent on (q(1), p(1)) back through the stored discrete flow.
// Returns (qbar0, pbar0), the exact gradient of <qbar1, q(1)> + <pbar1, p(1)>
// with respect to the initial state of the RK4 map (not the continuous flow).
std::pair<std::vector<Vec3>, std::vector<Vec3>> shoot_vjp(const ShootingResult& shooting,
                                                          std::span<const Vec3> qbar1,
                                                          std::span<const Vec3> pbar1);

}  // namespace vesselatlas
