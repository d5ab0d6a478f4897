#pragma once

#include <span>
#include <utility>
#include <vector>

#include "vesselatlas/geometry.hpp"
#include "vesselatlas/tree.hpp"

namespace vesselatlas {

// Spatial kernel width for the curve mismatch term. Registration runs the
// coarse-to-fine schedule sigma0 * stage_fractions (default widths sigma0,
// sigma0/4).
struct AttachmentSpec {
    double spatial_sigma = 1.0;
};

void validate_attachment_spec(const AttachmentSpec& spec);

// Discretization of a tree as oriented segments: one (midpoint, tangent) pair
// per polyline segment, all branches pooled, tangent norm = segment length.
// segment_points stores the flat point-cloud indices of each segment's ends so
// gradients can be chained back to the points that produced it.
struct CurrentRepresentation {
    std::vector<Point3> centers;
    std::vector<Vec3> tangents;
    std::vector<std::pair<int, int>> segment_points;
    int point_count = 0;

    // Same incidence, centers/tangents recomputed from new point positions.
    CurrentRepresentation with_points(std::span<const Point3> points) const;
};

CurrentRepresentation to_current(const VascularTree& tree);

// G(u, v) = sum_{m,n} exp(-|c_m-c_n|^2/sigma^2) <t_m,t_n>^2 / (|t_m||t_n|).
// The squared inner product makes the metric orientation-invariant.
double varifold_inner(const AttachmentSpec& spec,
                      const CurrentRepresentation& a,
                      const CurrentRepresentation& b);

// |a - b|^2 = G(a,a) - 2 G(a,b) + G(b,b), clamped at 0 against rounding.
double attachment_value(const AttachmentSpec& spec,
                        const CurrentRepresentation& a,
                        const CurrentRepresentation& b);

// Gradient of attachment_value with respect to the points a was built from
// (one Vec3 per flat point of a's owner; b is held fixed).
std::vector<Vec3> attachment_gradient(const AttachmentSpec& spec,
                                      const CurrentRepresentation& a,
                                      const CurrentRepresentation& b);

}  // namespace vesselatlas
