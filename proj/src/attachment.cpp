#include "vesselatlas/attachment.hpp"

#include <cmath>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

namespace {

void require_nonempty(const CurrentRepresentation& r, const char* side) {
    if (r.centers.empty()) {
        throw ValidationError(std::string("attachment: empty ") + side + " representation");
    }
    if (r.centers.size() != r.tangents.size()) {
        throw ValidationError("attachment: centers/tangents length mismatch");
    }
}

std::vector<double> tangent_norms(const CurrentRepresentation& r) {
    std::vector<double> norms(r.tangents.size());
    for (std::size_t i = 0; i < r.tangents.size(); ++i) {
        norms[i] = norm(r.tangents[i]);
        if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
            throw NumericalError("attachment: zero-length tangent encountered");
        }
    }
    return norms;
}

// One varifold product term: exp(-|c_m-c_n|^2/sigma^2) <t_m,t_n>^2/(|t_m||t_n|).
double term(double inv_sigma2, const Point3& cm, const Vec3& tm, double nm, const Point3& cn,
            const Vec3& tn, double nn) {
    const double e = std::exp(-distance2(cm, cn) * inv_sigma2);
    const double s = dot(tm, tn);
    return e * s * s / (nm * nn);
}

// G(a,b) summed in an order that is invariant under swapping the arguments:
// the square min(m,n) block goes diagonal first, then unordered pairs (each
// added as F(i,j)+F(j,i), a commutative sum), then the longer side's leftover
// rows. Swapping a and b therefore reproduces the exact same float sequence.
double inner_sym(double inv_sigma2, const CurrentRepresentation& a, const std::vector<double>& na,
                 const CurrentRepresentation& b, const std::vector<double>& nb) {
    const std::size_t m = a.centers.size();
    const std::size_t n = b.centers.size();
    const std::size_t k = std::min(m, n);
    const bool aliased = &a == &b;
    double acc = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        acc += term(inv_sigma2, a.centers[i], a.tangents[i], na[i], b.centers[i], b.tangents[i],
                    nb[i]);
    }
    for (std::size_t i = 1; i < k; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            const double f =
                term(inv_sigma2, a.centers[i], a.tangents[i], na[i], b.centers[j], b.tangents[j],
                     nb[j]);
            if (aliased) {
                acc += 2.0 * f;
            } else {
                acc += f + term(inv_sigma2, a.centers[j], a.tangents[j], na[j], b.centers[i],
                                b.tangents[i], nb[i]);
            }
        }
    }
    const bool a_longer = m > n;
    const std::size_t longer = a_longer ? m : n;
    for (std::size_t i = k; i < longer; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            acc += a_longer ? term(inv_sigma2, a.centers[i], a.tangents[i], na[i], b.centers[j],
                                   b.tangents[j], nb[j])
                            : term(inv_sigma2, a.centers[j], a.tangents[j], na[j], b.centers[i],
                                   b.tangents[i], nb[i]);
        }
    }
    return acc;
}

}  // namespace

void validate_attachment_spec(const AttachmentSpec& spec) {
    if (!(spec.spatial_sigma > 0.0) || !std::isfinite(spec.spatial_sigma)) {
        throw ValidationError("attachment spatial_sigma must be positive and finite");
    }
}

CurrentRepresentation CurrentRepresentation::with_points(std::span<const Point3> points) const {
    if (static_cast<int>(points.size()) != point_count) {
        throw ValidationError("with_points: point count differs from the owning cloud's");
    }
    CurrentRepresentation out = *this;
    for (std::size_t s = 0; s < segment_points.size(); ++s) {
        const Point3& u = points[static_cast<std::size_t>(segment_points[s].first)];
        const Point3& v = points[static_cast<std::size_t>(segment_points[s].second)];
        out.centers[s] = (u + v) * 0.5;
        out.tangents[s] = v - u;
    }
    return out;
}

CurrentRepresentation to_current(const VascularTree& tree) {
    CurrentRepresentation rep;
    rep.point_count = tree.total_point_count();
    int offset = 0;
    for (int b = 0; b < tree.branch_count(); ++b) {
        const auto& pts = tree.branch(b).points;
        for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
            rep.centers.push_back((pts[k] + pts[k + 1]) * 0.5);
            rep.tangents.push_back(pts[k + 1] - pts[k]);
            rep.segment_points.emplace_back(offset + static_cast<int>(k),
                                            offset + static_cast<int>(k) + 1);
        }
        offset += static_cast<int>(pts.size());
    }
    return rep;
}

double varifold_inner(const AttachmentSpec& spec,
                      const CurrentRepresentation& a,
                      const CurrentRepresentation& b) {
    validate_attachment_spec(spec);
    require_nonempty(a, "source");
    require_nonempty(b, "target");
    const double inv_sigma2 = 1.0 / (spec.spatial_sigma * spec.spatial_sigma);
    const std::vector<double> na = tangent_norms(a);
    const std::vector<double> nb = &a == &b ? na : tangent_norms(b);
    return inner_sym(inv_sigma2, a, na, b, nb);
}

double attachment_value(const AttachmentSpec& spec,
                        const CurrentRepresentation& a,
                        const CurrentRepresentation& b) {
    const double gaa = varifold_inner(spec, a, a);
    const double gbb = varifold_inner(spec, b, b);
    const double gab = varifold_inner(spec, a, b);
    const double value = (gaa + gbb) - 2.0 * gab;
    return value > 0.0 ? value : 0.0;
}

std::vector<Vec3> attachment_gradient(const AttachmentSpec& spec,
                                      const CurrentRepresentation& a,
                                      const CurrentRepresentation& b) {
    validate_attachment_spec(spec);
    require_nonempty(a, "source");
    require_nonempty(b, "target");
    if (a.segment_points.size() != a.centers.size() || a.point_count <= 0) {
        throw ValidationError("attachment_gradient: source lacks segment-to-point incidence");
    }
    const double inv_sigma2 = 1.0 / (spec.spatial_sigma * spec.spatial_sigma);
    const std::vector<double> na = tangent_norms(a);
    const std::vector<double> nb = tangent_norms(b);
    const std::size_t m = a.centers.size();

    // d/dc_m and d/dt_m of sum_n weight * F(m, n), accumulated per a-segment.
    // G(a,a) contributes through both slots of the symmetric sum (weight 2),
    // the cross term with weight -2.
    std::vector<Vec3> grad_c(m, Vec3{0.0, 0.0, 0.0});
    std::vector<Vec3> grad_t(m, Vec3{0.0, 0.0, 0.0});
    auto accumulate = [&](const CurrentRepresentation& other, const std::vector<double>& nother,
                          double weight) {
        for (std::size_t s = 0; s < m; ++s) {
            Vec3 gc{0.0, 0.0, 0.0};
            Vec3 gt{0.0, 0.0, 0.0};
            for (std::size_t n = 0; n < other.centers.size(); ++n) {
                const Vec3 dc = a.centers[s] - other.centers[n];
                const double e = std::exp(-norm2(dc) * inv_sigma2);
                const double ip = dot(a.tangents[s], other.tangents[n]);
                const double denom = na[s] * nother[n];
                const double f = e * ip * ip / denom;
                gc -= dc * (2.0 * inv_sigma2 * f);
                gt += (other.tangents[n] * (2.0 * ip / denom) -
                       a.tangents[s] * (ip * ip / (na[s] * na[s] * denom))) *
                      e;
            }
            grad_c[s] += gc * weight;
            grad_t[s] += gt * weight;
        }
    };
    accumulate(a, na, 2.0);
    accumulate(b, nb, -2.0);

    std::vector<Vec3> grad(static_cast<std::size_t>(a.point_count), Vec3{0.0, 0.0, 0.0});
    for (std::size_t s = 0; s < m; ++s) {
        const auto [u, v] = a.segment_points[s];
        grad[static_cast<std::size_t>(u)] += grad_c[s] * 0.5 - grad_t[s];
        grad[static_cast<std::size_t>(v)] += grad_c[s] * 0.5 + grad_t[s];
    }
    return grad;
}

}  // namespace vesselatlas
