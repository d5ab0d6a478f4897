#pragma once

// Minimum-cost assignment on a dense rectangular cost matrix. The solver is
// the O(n^3) potentials (Jonker-Volgenant style) algorithm; on top of it a
// refinement pass picks, among all optimal assignments, the one whose
// row-to-column vector is lexicographically smallest (unmatched sorts last).
// That makes the returned assignment a deterministic function of the costs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

struct AssignmentSolution {
    std::vector<int> row_to_col;  // -1 marks a row left unmatched (rows > cols only)
    double total = 0.0;
};

namespace detail {

// Potentials algorithm for m <= n. cost is row-major m*n. Returns col_to_row
// with -1 for free columns; every row ends up matched.
inline std::vector<int> assignment_potentials(const std::vector<double>& cost, int m, int n) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(m) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);  // p[j] = 1-based row on col j
    std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
    std::vector<double> minv(static_cast<std::size_t>(n) + 1);
    std::vector<char> used(static_cast<std::size_t>(n) + 1);
    for (int i = 1; i <= m; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), char{0});
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur =
                    cost[static_cast<std::size_t>(i0 - 1) * static_cast<std::size_t>(n) +
                         static_cast<std::size_t>(j - 1)] -
                    u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> col_to_row(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) {
        if (p[static_cast<std::size_t>(j)] != 0) {
            col_to_row[static_cast<std::size_t>(j - 1)] = p[static_cast<std::size_t>(j)] - 1;
        }
    }
    return col_to_row;
}

// Optimal total for an arbitrary rectangular matrix (row-major m*n). Either
// side may be zero, in which case the optimum is an empty matching.
inline double assignment_optimum(const std::vector<double>& cost, int m, int n) {
    if (m == 0 || n == 0) return 0.0;
    double total = 0.0;
    if (m <= n) {
        const auto col_to_row = assignment_potentials(cost, m, n);
        for (int j = 0; j < n; ++j) {
            const int i = col_to_row[static_cast<std::size_t>(j)];
            if (i >= 0) {
                total += cost[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                              static_cast<std::size_t>(j)];
            }
        }
    } else {
        std::vector<double> t(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                t[static_cast<std::size_t>(j) * static_cast<std::size_t>(m) +
                  static_cast<std::size_t>(i)] =
                    cost[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                         static_cast<std::size_t>(j)];
            }
        }
        const auto row_to_col = assignment_potentials(t, n, m);  // transposed roles
        for (int j = 0; j < m; ++j) {
            const int i = row_to_col[static_cast<std::size_t>(j)];
            if (i >= 0) {
                total += cost[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) +
                              static_cast<std::size_t>(i)];
            }
        }
    }
    return total;
}

}  // namespace detail

// Solves min-cost assignment with exactly min(rows, cols) matches. Among all
// optimal assignments the lexicographically smallest row_to_col is returned,
// treating -1 (unmatched) as larger than any column index.
inline AssignmentSolution solve_assignment(const std::vector<std::vector<double>>& cost) {
    const int m = static_cast<int>(cost.size());
    if (m == 0) throw ValidationError("assignment cost matrix has no rows");
    const int n = static_cast<int>(cost.front().size());
    if (n == 0) throw ValidationError("assignment cost matrix has no columns");
    std::vector<double> flat(static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        if (static_cast<int>(cost[static_cast<std::size_t>(i)].size()) != n) {
            throw ValidationError("assignment cost matrix is ragged");
        }
        for (int j = 0; j < n; ++j) {
            const double c = cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (!std::isfinite(c)) throw ValidationError("assignment cost must be finite");
            flat[static_cast<std::size_t>(i) * static_cast<std::size_t>(n) +
                 static_cast<std::size_t>(j)] = c;
        }
    }

    const double best = detail::assignment_optimum(flat, m, n);
    const double tol = 1e-9 * std::max(1.0, std::abs(best));

    AssignmentSolution out;
    out.row_to_col.assign(static_cast<std::size_t>(m), -1);
    std::vector<char> col_used(static_cast<std::size_t>(n), 0);
    int required = std::min(m, n);  // matches still to place
    double fixed = 0.0;

    // Fix rows in order; for each, take the smallest column (unmatched last)
    // whose completion still reaches the optimum.
    for (int r = 0; r < m; ++r) {
        const int rows_left = m - r - 1;
        std::vector<int> free_cols;
        free_cols.reserve(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            if (!col_used[static_cast<std::size_t>(j)]) free_cols.push_back(j);
        }

        // Remaining submatrix over rows r+1.. and all currently free columns,
        // with one column dropped when the candidate consumes it.
        auto completion = [&](int skip_col) {
            std::vector<int> cols;
            cols.reserve(free_cols.size());
            for (int j : free_cols) {
                if (j != skip_col) cols.push_back(j);
            }
            std::vector<double> sub(static_cast<std::size_t>(rows_left) * cols.size());
            for (int i = 0; i < rows_left; ++i) {
                for (std::size_t j = 0; j < cols.size(); ++j) {
                    sub[static_cast<std::size_t>(i) * cols.size() + j] =
                        flat[static_cast<std::size_t>(r + 1 + i) * static_cast<std::size_t>(n) +
                             static_cast<std::size_t>(cols[j])];
                }
            }
            return detail::assignment_optimum(sub, rows_left, static_cast<int>(cols.size()));
        };

        bool placed = false;
        for (int j : free_cols) {
            const int cols_after = static_cast<int>(free_cols.size()) - 1;
            if (std::min(rows_left, cols_after) < required - 1) continue;
            const double c = flat[static_cast<std::size_t>(r) * static_cast<std::size_t>(n) +
                                  static_cast<std::size_t>(j)];
            if (std::abs(fixed + c + completion(j) - best) <= tol) {
                out.row_to_col[static_cast<std::size_t>(r)] = j;
                col_used[static_cast<std::size_t>(j)] = 1;
                fixed += c;
                --required;
                placed = true;
                break;
            }
        }
        if (!placed) {
            // Leaving the row unmatched must itself be feasible and optimal.
            if (std::min(rows_left, static_cast<int>(free_cols.size())) < required ||
                std::abs(fixed + completion(-1) - best) > tol) {
                throw NumericalError("assignment refinement failed to reach the optimum");
            }
        }
    }

    out.total = fixed;
    return out;
}

}  // namespace vesselatlas
