#include "vesselatlas/kernel.hpp"

#include <cmath>
#include <limits>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

void validate_kernel_spec(const KernelSpec& spec) {
    if (!(spec.sigma0 > 0.0) || !std::isfinite(spec.sigma0)) {
        throw ValidationError("kernel sigma0 must be positive and finite");
    }
    if (spec.scale_divisors.empty()) {
        throw ValidationError("kernel needs at least one scale divisor");
    }
    for (double s : spec.scale_divisors) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            throw ValidationError("kernel scale divisors must be positive and finite");
        }
    }
}

KernelOps::KernelOps(const KernelSpec& spec) {
    validate_kernel_spec(spec);
    inv_s0sq_ = 1.0 / (spec.sigma0 * spec.sigma0);
    c1_.reserve(spec.scale_divisors.size());
    c2_.reserve(spec.scale_divisors.size());
    int_exponent_.reserve(spec.scale_divisors.size());
    fast_ = true;
    for (double s : spec.scale_divisors) {
        const double c1 = s * s * inv_s0sq_;
        c1_.push_back(c1);
        c2_.push_back(c1 * c1);
        const double ssq = s * s;
        const double rounded = std::nearbyint(ssq);
        if (ssq == rounded && rounded >= 1.0 && rounded <= 4096.0) {
            int_exponent_.push_back(static_cast<unsigned>(rounded));
        } else {
            fast_ = false;
        }
    }
    if (!fast_) int_exponent_.clear();
}

double kernel_eval(const KernelSpec& spec, const Point3& x, const Point3& y) {
    KernelOps ops(spec);
    return ops.value(distance2(x, y));
}

std::vector<Vec3> kernel_matvec(const KernelSpec& spec,
                                std::span<const Point3> points_a,
                                std::span<const Point3> points_b,
                                std::span<const Vec3> vectors) {
    if (points_b.size() != vectors.size()) {
        throw ValidationError("kernel_matvec: one vector per source point required");
    }
    KernelOps ops(spec);
    std::vector<Vec3> out(points_a.size(), Vec3{0.0, 0.0, 0.0});
    for (std::size_t i = 0; i < points_a.size(); ++i) {
        Vec3 acc{0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < points_b.size(); ++j) {
            acc += vectors[j] * ops.value(distance2(points_a[i], points_b[j]));
        }
        out[i] = acc;
    }
    return out;
}

std::vector<Vec3> kernel_grad_quadratic(const KernelSpec& spec,
                                        std::span<const Point3> points,
                                        std::span<const Vec3> momenta) {
    if (points.size() != momenta.size()) {
        throw ValidationError("kernel_grad_quadratic: one momentum per point required");
    }
    KernelOps ops(spec);
    const std::size_t n = points.size();
    std::vector<Vec3> grad(n, Vec3{0.0, 0.0, 0.0});
    // d/dq_i sum_{j,l} K(q_j,q_l)<p_j,p_l> = 4 sum_j K'(rho_ij) <p_i,p_j> (q_i - q_j);
    // each unordered pair contributes opposite increments, so walk j < i.
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const Vec3 d = points[i] - points[j];
            const double kp = ops.terms(norm2(d)).kp;
            const Vec3 inc = d * (4.0 * kp * dot(momenta[i], momenta[j]));
            grad[i] += inc;
            grad[j] -= inc;
        }
    }
    return grad;
}

}  // namespace vesselatlas
