#pragma once

#include <span>
#include <vector>

#include "vesselatlas/geometry.hpp"

namespace vesselatlas {

// Sum-of-Gaussians kernel K(x,y) = sum_s exp(-|x-y|^2 / (sigma0/s)^2).
// sigma0 <= 0 means "resolve from the data" (half the largest bounding-box
// side of the point sets in play); callers resolve it before evaluation.
struct KernelSpec {
    double sigma0 = 0.0;
    std::vector<double> scale_divisors = {1.0, 4.0, 8.0, 16.0};
};

void validate_kernel_spec(const KernelSpec& spec);

// Precomputed per-scale coefficients. terms(rho) returns the kernel and its
// first two derivatives in rho = |x-y|^2:
//   k   = sum_s e_s
//   kp  = d k / d rho   = sum_s -(s^2/sigma0^2) e_s
//   kpp = d^2 k / d rho^2 = sum_s (s^2/sigma0^2)^2 e_s
// When every s^2 is a small integer all e_s come from one exp via integer
// powers of exp(-rho/sigma0^2); that path dominates the shooting cost.
class KernelOps {
  public:
    explicit KernelOps(const KernelSpec& spec);

    struct Terms {
        double k = 0.0;
        double kp = 0.0;
        double kpp = 0.0;
    };

    Terms terms(double rho) const {
        Terms out;
        if (fast_) {
            const double e1 = std::exp(-rho * inv_s0sq_);
            for (std::size_t s = 0; s < c1_.size(); ++s) {
                const double e = ipow(e1, int_exponent_[s]);
                out.k += e;
                out.kp -= c1_[s] * e;
                out.kpp += c2_[s] * e;
            }
        } else {
            for (std::size_t s = 0; s < c1_.size(); ++s) {
                const double e = std::exp(-rho * c1_[s]);
                out.k += e;
                out.kp -= c1_[s] * e;
                out.kpp += c2_[s] * e;
            }
        }
        return out;
    }

    double value(double rho) const {
        double k = 0.0;
        if (fast_) {
            const double e1 = std::exp(-rho * inv_s0sq_);
            for (std::size_t s = 0; s < c1_.size(); ++s) k += ipow(e1, int_exponent_[s]);
        } else {
            for (std::size_t s = 0; s < c1_.size(); ++s) k += std::exp(-rho * c1_[s]);
        }
        return k;
    }

    double scale_count() const { return static_cast<double>(c1_.size()); }

  private:
    static double ipow(double base, unsigned e) {
        double r = 1.0;
        while (e) {
            if (e & 1u) r *= base;
            base *= base;
            e >>= 1;
        }
        return r;
    }

    std::vector<double> c1_;  // s^2 / sigma0^2
    std::vector<double> c2_;  // c1^2
    std::vector<unsigned> int_exponent_;
    double inv_s0sq_ = 0.0;
    bool fast_ = false;
};

double kernel_eval(const KernelSpec& spec, const Point3& x, const Point3& y);

// out[i] = sum_j K(a_i, b_j) * v_j  (scalar kernel applied componentwise).
std::vector<Vec3> kernel_matvec(const KernelSpec& spec,
                                std::span<const Point3> points_a,
                                std::span<const Point3> points_b,
                                std::span<const Vec3> vectors);

// Gradient of sum_{j,l} K(q_j,q_l) <p_j,p_l> with respect to each q_i.
std::vector<Vec3> kernel_grad_quadratic(const KernelSpec& spec,
                                        std::span<const Point3> points,
                                        std::span<const Vec3> momenta);

}  // namespace vesselatlas
