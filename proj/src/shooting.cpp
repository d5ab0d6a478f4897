#include "vesselatlas/shooting.hpp"

#include <cmath>
#include <string>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

namespace {

struct State {
    std::vector<Point3> q;
    std::vector<Vec3> p;

    std::size_t size() const { return q.size(); }
};

State make_state(std::size_t n) {
    return State{std::vector<Point3>(n), std::vector<Vec3>(n)};
}

// out = a + h * b
void axpy(const State& a, double h, const State& b, State& out) {
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
        out.q[i] = a.q[i] + b.q[i] * h;
        out.p[i] = a.p[i] + b.p[i] * h;
    }
}

// Right-hand side of the Hamiltonian system. Each unordered pair contributes
// symmetric velocity terms and antisymmetric momentum terms, so one pass over
// j < i covers everything; the diagonal only feeds the velocity.
void rhs(const KernelOps& ops, const State& s, State& out) {
    const std::size_t n = s.size();
    const double k0 = ops.scale_count();
    for (std::size_t i = 0; i < n; ++i) {
        out.q[i] = s.p[i] * k0;
        out.p[i] = Vec3{0.0, 0.0, 0.0};
    }
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const Vec3 d = s.q[i] - s.q[j];
            const KernelOps::Terms t = ops.terms(norm2(d));
            out.q[i] += s.p[j] * t.k;
            out.q[j] += s.p[i] * t.k;
            const Vec3 w = d * (-2.0 * t.kp * dot(s.p[i], s.p[j]));
            out.p[i] += w;
            out.p[j] -= w;
        }
    }
}

// Accumulates J(s)^T (ubar, wbar) into (qbar, pbar), where J is the Jacobian
// of rhs at state s. Derivation mirrors rhs: with rho = |q_k-q_j|^2 and
// d = q_k-q_j,
//   qbar_k += sum_j 2K'(<ubar_k,p_j>+<ubar_j,p_k>) d
//           - 2<p_k,p_j> (2K''<wbar_k-wbar_j,d> d + K'(wbar_k-wbar_j))
//   pbar_k += sum_j K ubar_j - 2K'<wbar_k-wbar_j,d> p_j
void rhs_vjp(const KernelOps& ops, const State& s, const State& bar, State& acc) {
    const std::size_t n = s.size();
    const double k0 = ops.scale_count();
    for (std::size_t i = 0; i < n; ++i) {
        acc.p[i] += bar.q[i] * k0;
    }
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const Vec3 d = s.q[i] - s.q[j];
            const KernelOps::Terms t = ops.terms(norm2(d));
            const double cu = dot(bar.q[i], s.p[j]) + dot(bar.q[j], s.p[i]);
            const double pp = dot(s.p[i], s.p[j]);
            const Vec3 dw = bar.p[i] - bar.p[j];
            const double dwd = dot(dw, d);
            const Vec3 qinc =
                d * (2.0 * t.kp * cu) - (d * (2.0 * t.kpp * dwd) + dw * t.kp) * (2.0 * pp);
            acc.q[i] += qinc;
            acc.q[j] -= qinc;
            acc.p[i] += bar.q[j] * t.k - s.p[j] * (2.0 * t.kp * dwd);
            acc.p[j] += bar.q[i] * t.k - s.p[i] * (2.0 * t.kp * dwd);
        }
    }
}

double hamiltonian_ops(const KernelOps& ops, std::span<const Point3> q, std::span<const Vec3> p) {
    const std::size_t n = q.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += ops.scale_count() * norm2(p[i]);
    for (std::size_t i = 1; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            acc += 2.0 * ops.value(distance2(q[i], q[j])) * dot(p[i], p[j]);
        }
    }
    return 0.5 * acc;
}

void check_finite(const State& s, int step) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!is_finite(s.q[i]) || !is_finite(s.p[i])) {
            throw NumericalError("shooting diverged: non-finite state at step " +
                                 std::to_string(step));
        }
    }
}

// One classical RK4 step of size h from `from` into `to`; k1..k3 and the
// stage buffer are caller-provided workspaces.
void rk4_step(const KernelOps& ops, const State& from, double h, State& to, State& k1, State& k2,
              State& k3, State& k4, State& stage) {
    const std::size_t n = from.size();
    rhs(ops, from, k1);
    axpy(from, h * 0.5, k1, stage);
    rhs(ops, stage, k2);
    axpy(from, h * 0.5, k2, stage);
    rhs(ops, stage, k3);
    axpy(from, h, k3, stage);
    rhs(ops, stage, k4);
    for (std::size_t i = 0; i < n; ++i) {
        to.q[i] = from.q[i] + (k1.q[i] + (k2.q[i] + k3.q[i]) * 2.0 + k4.q[i]) * (h / 6.0);
        to.p[i] = from.p[i] + (k1.p[i] + (k2.p[i] + k3.p[i]) * 2.0 + k4.p[i]) * (h / 6.0);
    }
}

void require_aligned(std::size_t points, std::size_t momenta, const char* where) {
    if (points != momenta) {
        throw ValidationError(std::string(where) + ": one momentum per point required");
    }
}

}  // namespace

void validate_integrator_config(const IntegratorConfig& cfg) {
    if (cfg.steps < 1) throw ValidationError("integrator needs at least one step");
}

double hamiltonian(const KernelSpec& spec,
                   std::span<const Point3> points,
                   std::span<const Vec3> momenta) {
    require_aligned(points.size(), momenta.size(), "hamiltonian");
    KernelOps ops(spec);
    return hamiltonian_ops(ops, points, momenta);
}

double path_energy(const KernelSpec& spec,
                   std::span<const Point3> points,
                   std::span<const Vec3> momenta) {
    return 2.0 * hamiltonian(spec, points, momenta);
}

ShootingResult shoot(const KernelSpec& spec,
                     std::span<const Point3> points,
                     std::span<const Vec3> momenta,
                     const IntegratorConfig& cfg) {
    require_aligned(points.size(), momenta.size(), "shoot");
    validate_integrator_config(cfg);
    KernelOps ops(spec);
    const std::size_t n = points.size();
    const int steps = cfg.steps;
    const double h = 1.0 / steps;

    ShootingResult result;
    result.kernel = spec;
    result.integrator = cfg;
    result.trajectory.reserve(static_cast<std::size_t>(steps) + 1);
    result.momenta_trajectory.reserve(static_cast<std::size_t>(steps) + 1);
    result.hamiltonian_trace.reserve(static_cast<std::size_t>(steps) + 1);

    State cur{std::vector<Point3>(points.begin(), points.end()),
              std::vector<Vec3>(momenta.begin(), momenta.end())};
    check_finite(cur, 0);
    State next = make_state(n);
    State k1 = make_state(n), k2 = make_state(n), k3 = make_state(n), k4 = make_state(n);
    State stage = make_state(n);

    result.trajectory.push_back(cur.q);
    result.momenta_trajectory.push_back(cur.p);
    result.hamiltonian_trace.push_back(hamiltonian_ops(ops, cur.q, cur.p));

    for (int step = 0; step < steps; ++step) {
        rk4_step(ops, cur, h, next, k1, k2, k3, k4, stage);
        check_finite(next, step + 1);
        std::swap(cur, next);
        result.trajectory.push_back(cur.q);
        result.momenta_trajectory.push_back(cur.p);
        result.hamiltonian_trace.push_back(hamiltonian_ops(ops, cur.q, cur.p));
    }
    return result;
}

std::vector<Point3> flow_points(const KernelSpec& spec,
                                const ShootingResult& shooting,
                                std::span<const Point3> passive,
                                const IntegratorConfig& cfg) {
    validate_integrator_config(cfg);
    if (cfg.steps != shooting.integrator.steps ||
        spec.sigma0 != shooting.kernel.sigma0 ||
        spec.scale_divisors != shooting.kernel.scale_divisors) {
        throw ValidationError("flow_points: spec/config differ from the stored trajectory's");
    }
    if (shooting.trajectory.size() != static_cast<std::size_t>(cfg.steps) + 1) {
        throw ValidationError("flow_points: trajectory frame count does not match config");
    }
    KernelOps ops(spec);
    const std::size_t n = shooting.trajectory.front().size();
    const std::size_t m = passive.size();
    const double h = 1.0 / cfg.steps;

    std::vector<Point3> x(passive.begin(), passive.end());
    State k1 = make_state(n), k2 = make_state(n), k3 = make_state(n);
    State a2 = make_state(n), a3 = make_state(n), a4 = make_state(n);
    std::vector<Vec3> l1(m), l2(m), l3(m), l4(m);

    auto velocity_at = [&](const Point3& pos, const State& ctrl) {
        Vec3 v{0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) {
            v += ctrl.p[j] * ops.value(distance2(pos, ctrl.q[j]));
        }
        return v;
    };

    for (int step = 0; step < cfg.steps; ++step) {
        const State frame{shooting.trajectory[static_cast<std::size_t>(step)],
                          shooting.momenta_trajectory[static_cast<std::size_t>(step)]};
        rhs(ops, frame, k1);
        axpy(frame, h * 0.5, k1, a2);
        rhs(ops, a2, k2);
        axpy(frame, h * 0.5, k2, a3);
        rhs(ops, a3, k3);
        axpy(frame, h, k3, a4);
        for (std::size_t i = 0; i < m; ++i) {
            l1[i] = velocity_at(x[i], frame);
            l2[i] = velocity_at(x[i] + l1[i] * (h * 0.5), a2);
            l3[i] = velocity_at(x[i] + l2[i] * (h * 0.5), a3);
            l4[i] = velocity_at(x[i] + l3[i] * h, a4);
            x[i] += (l1[i] + (l2[i] + l3[i]) * 2.0 + l4[i]) * (h / 6.0);
            if (!is_finite(x[i])) {
                throw NumericalError("flow_points diverged: non-finite point at step " +
                                     std::to_string(step + 1));
            }
        }
    }
    return x;
}

std::pair<std::vector<Vec3>, std::vector<Vec3>> shoot_vjp(const ShootingResult& shooting,
                                                          std::span<const Vec3> qbar1,
                                                          std::span<const Vec3> pbar1) {
    const std::size_t n = shooting.trajectory.front().size();
    require_aligned(n, qbar1.size(), "shoot_vjp");
    require_aligned(n, pbar1.size(), "shoot_vjp");
    KernelOps ops(shooting.kernel);
    const int steps = shooting.integrator.steps;
    const double h = 1.0 / steps;

    State zbar{std::vector<Vec3>(qbar1.begin(), qbar1.end()),
               std::vector<Vec3>(pbar1.begin(), pbar1.end())};
    State k1 = make_state(n), k2 = make_state(n), k3 = make_state(n);
    State a2 = make_state(n), a3 = make_state(n), a4 = make_state(n);
    State kbar = make_state(n), abar = make_state(n), znext = make_state(n);

    for (int step = steps - 1; step >= 0; --step) {
        const State frame{shooting.trajectory[static_cast<std::size_t>(step)],
                          shooting.momenta_trajectory[static_cast<std::size_t>(step)]};
        // Recompute the forward stage states of this step.
        rhs(ops, frame, k1);
        axpy(frame, h * 0.5, k1, a2);
        rhs(ops, a2, k2);
        axpy(frame, h * 0.5, k2, a3);
        rhs(ops, a3, k3);
        axpy(frame, h, k3, a4);

        // z_{n+1} = z_n + h/6 (k1 + 2k2 + 2k3 + k4): reverse the stages in
        // order k4, k3, k2, k1, accumulating into the new z_n cotangent.
        for (std::size_t i = 0; i < n; ++i) {
            znext.q[i] = zbar.q[i];
            znext.p[i] = zbar.p[i];
        }

        // k4 = f(a4), a4 = z_n + h k3
        for (std::size_t i = 0; i < n; ++i) {
            kbar.q[i] = zbar.q[i] * (h / 6.0);
            kbar.p[i] = zbar.p[i] * (h / 6.0);
            abar.q[i] = Vec3{0.0, 0.0, 0.0};
            abar.p[i] = Vec3{0.0, 0.0, 0.0};
        }
        rhs_vjp(ops, a4, kbar, abar);
        for (std::size_t i = 0; i < n; ++i) {
            znext.q[i] += abar.q[i];
            znext.p[i] += abar.p[i];
        }

        // k3 = f(a3), a3 = z_n + h/2 k2
        for (std::size_t i = 0; i < n; ++i) {
            kbar.q[i] = zbar.q[i] * (h / 3.0) + abar.q[i] * h;
            kbar.p[i] = zbar.p[i] * (h / 3.0) + abar.p[i] * h;
            abar.q[i] = Vec3{0.0, 0.0, 0.0};
            abar.p[i] = Vec3{0.0, 0.0, 0.0};
        }
        rhs_vjp(ops, a3, kbar, abar);
        for (std::size_t i = 0; i < n; ++i) {
            znext.q[i] += abar.q[i];
            znext.p[i] += abar.p[i];
        }

        // k2 = f(a2), a2 = z_n + h/2 k1
        for (std::size_t i = 0; i < n; ++i) {
            kbar.q[i] = zbar.q[i] * (h / 3.0) + abar.q[i] * (h * 0.5);
            kbar.p[i] = zbar.p[i] * (h / 3.0) + abar.p[i] * (h * 0.5);
            abar.q[i] = Vec3{0.0, 0.0, 0.0};
            abar.p[i] = Vec3{0.0, 0.0, 0.0};
        }
        rhs_vjp(ops, a2, kbar, abar);
        for (std::size_t i = 0; i < n; ++i) {
            znext.q[i] += abar.q[i];
            znext.p[i] += abar.p[i];
        }

        // k1 = f(z_n)
        for (std::size_t i = 0; i < n; ++i) {
            kbar.q[i] = zbar.q[i] * (h / 6.0) + abar.q[i] * (h * 0.5);
            kbar.p[i] = zbar.p[i] * (h / 6.0) + abar.p[i] * (h * 0.5);
            abar.q[i] = Vec3{0.0, 0.0, 0.0};
            abar.p[i] = Vec3{0.0, 0.0, 0.0};
        }
        rhs_vjp(ops, frame, kbar, abar);
        for (std::size_t i = 0; i < n; ++i) {
            zbar.q[i] = znext.q[i] + abar.q[i];
            zbar.p[i] = znext.p[i] + abar.p[i];
        }
    }
    return {std::move(zbar.q), std::move(zbar.p)};
}

}  // namespace vesselatlas
