#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "vesselatlas/errors.hpp"

namespace vesselatlas {

struct LbfgsConfig {
    int memory = 10;
    int max_iters = 200;
    double grad_rtol = 1e-5;   // stop when |g| <= grad_rtol * max(1, |g(x0)|)
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
};

struct LbfgsOutcome {
    std::vector<double> x;
    double value = 0.0;
    std::vector<double> gradient;
    std::vector<double> trace;  // accepted objective values, starting at x0
    int iterations = 0;
    bool converged = false;
    bool line_search_failed = false;
};

// Objective callback: fill `grad` and return the value. A non-finite return is
// treated as "step too far" by the line search, never as an accepted value.
using LbfgsObjective = std::function<double(std::span<const double>, std::span<double>)>;

namespace detail {

inline double dot_n(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm_n(std::span<const double> a) { return std::sqrt(dot_n(a, a)); }

}  // namespace detail

// Limited-memory BFGS with a strong-Wolfe line search (bracket + bisection
// zoom). On line-search failure the best iterate found so far is returned
// with line_search_failed set; accepted iterates never increase the value.
inline LbfgsOutcome lbfgs_minimize(const LbfgsObjective& objective,
                                   std::vector<double> x0,
                                   const LbfgsConfig& cfg) {
    if (cfg.memory < 1 || cfg.max_iters < 0 || !(cfg.grad_rtol >= 0.0) ||
        !(cfg.wolfe_c1 > 0.0) || !(cfg.wolfe_c2 > cfg.wolfe_c1) || !(cfg.wolfe_c2 < 1.0)) {
        throw ValidationError("invalid L-BFGS configuration");
    }
    const std::size_t n = x0.size();
    const double inf = std::numeric_limits<double>::infinity();

    LbfgsOutcome out;
    out.x = std::move(x0);
    out.gradient.assign(n, 0.0);
    out.value = objective(out.x, out.gradient);
    if (!std::isfinite(out.value)) {
        throw NumericalError("objective non-finite at the initial point");
    }
    out.trace.push_back(out.value);

    const double g0_norm = detail::norm_n(out.gradient);
    const double g_stop = cfg.grad_rtol * std::max(1.0, g0_norm);
    if (g0_norm <= g_stop) {
        out.converged = true;
        return out;
    }

    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> history;

    std::vector<double> direction(n), x_try(n), g_try(n), x_prev(n), g_prev(n);

    for (int iter = 0; iter < cfg.max_iters; ++iter) {
        // Two-loop recursion for direction = -H * g.
        direction.assign(out.gradient.begin(), out.gradient.end());
        std::vector<double> alpha(history.size());
        for (std::size_t h = history.size(); h-- > 0;) {
            const Pair& p = history[h];
            alpha[h] = p.rho * detail::dot_n(p.s, direction);
            for (std::size_t i = 0; i < n; ++i) direction[i] -= alpha[h] * p.y[i];
        }
        if (!history.empty()) {
            const Pair& last = history.back();
            const double gamma = detail::dot_n(last.s, last.y) / detail::dot_n(last.y, last.y);
            for (std::size_t i = 0; i < n; ++i) direction[i] *= gamma;
        }
        for (std::size_t h = 0; h < history.size(); ++h) {
            const Pair& p = history[h];
            const double beta = p.rho * detail::dot_n(p.y, direction);
            for (std::size_t i = 0; i < n; ++i) direction[i] += (alpha[h] - beta) * p.s[i];
        }
        for (std::size_t i = 0; i < n; ++i) direction[i] = -direction[i];

        double dg0 = detail::dot_n(direction, out.gradient);
        if (!(dg0 < 0.0)) {
            history.clear();
            for (std::size_t i = 0; i < n; ++i) direction[i] = -out.gradient[i];
            dg0 = -detail::dot_n(out.gradient, out.gradient);
        }

        // phi(t) = f(x + t d). One evaluation yields both phi and phi'. The
        // most recent finite evaluation is kept so accepting it is free, and
        // the best improvement seen backs the failure path.
        double phi_best = out.value;
        bool have_best_eval = false;
        double t_last = -1.0, v_last = inf;
        auto eval = [&](double t) {
            for (std::size_t i = 0; i < n; ++i) x_try[i] = out.x[i] + t * direction[i];
            double v;
            try {
                v = objective(x_try, g_try);
            } catch (const NumericalError&) {
                v = inf;
            }
            if (!std::isfinite(v)) return std::pair<double, double>{inf, 0.0};
            t_last = t;
            v_last = v;
            if (v < phi_best) {
                phi_best = v;
                x_prev = x_try;
                g_prev = g_try;
                have_best_eval = true;
            }
            return std::pair<double, double>{v, detail::dot_n(g_try, direction)};
        };

        const double phi0 = out.value;
        const double c1 = cfg.wolfe_c1, c2 = cfg.wolfe_c2;
        double t_accept = -1.0;

        // Bracketing phase (Nocedal & Wright alg. 3.5).
        double lo = 0.0, hi = -1.0;  // hi < 0: not bracketed yet
        double phi_lo = phi0;
        double t_prev = 0.0, phi_prev = phi0;
        double t = iter == 0 ? std::min(1.0, 1.0 / g0_norm) : 1.0;
        for (int k = 0; k < 30 && t_accept < 0.0; ++k) {
            auto [phi, dphi] = eval(t);
            if (phi > phi0 + c1 * t * dg0 || (k > 0 && phi >= phi_prev) || !std::isfinite(phi)) {
                lo = t_prev;
                hi = t;
                break;
            }
            if (std::abs(dphi) <= -c2 * dg0) {
                t_accept = t;
                break;
            }
            if (dphi >= 0.0) {
                lo = t;
                hi = t_prev;
                phi_lo = phi;
                break;
            }
            t_prev = t;
            phi_prev = phi;
            phi_lo = phi;
            t *= 2.0;
        }

        // Zoom phase (alg. 3.6, bisection refinement).
        if (t_accept < 0.0 && hi >= 0.0) {
            for (int k = 0; k < 40; ++k) {
                const double mid = 0.5 * (lo + hi);
                if (!(std::abs(hi - lo) > 1e-16 * std::max(1.0, std::abs(lo)))) break;
                auto [phi, dphi] = eval(mid);
                if (phi > phi0 + c1 * mid * dg0 || phi >= phi_lo || !std::isfinite(phi)) {
                    hi = mid;
                    continue;
                }
                if (std::abs(dphi) <= -c2 * dg0) {
                    t_accept = mid;
                    break;
                }
                if (dphi * (hi - lo) >= 0.0) hi = lo;
                lo = mid;
                phi_lo = phi;
            }
        }

        if (t_accept < 0.0) {
            // No strong-Wolfe point. Keep the best strict improvement if one
            // was seen; either way stop here and report the failure.
            if (have_best_eval && phi_best < out.value) {
                out.x = x_prev;
                out.value = phi_best;
                out.gradient = g_prev;
                out.trace.push_back(out.value);
                out.iterations = iter + 1;
            }
            out.line_search_failed = true;
            return out;
        }

        // Acceptance always follows directly from an eval() at t_accept, so
        // its state is still in x_try/g_try; recompute defensively otherwise.
        double v_accept;
        if (t_last == t_accept) {
            v_accept = v_last;
        } else {
            for (std::size_t i = 0; i < n; ++i) x_try[i] = out.x[i] + t_accept * direction[i];
            v_accept = objective(x_try, g_try);
        }

        Pair pair;
        pair.s.resize(n);
        pair.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            pair.s[i] = x_try[i] - out.x[i];
            pair.y[i] = g_try[i] - out.gradient[i];
        }
        const double sy = detail::dot_n(pair.s, pair.y);
        if (sy > 1e-12 * detail::norm_n(pair.s) * detail::norm_n(pair.y)) {
            pair.rho = 1.0 / sy;
            history.push_back(std::move(pair));
            if (static_cast<int>(history.size()) > cfg.memory) history.pop_front();
        }

        out.x = x_try;
        out.value = v_accept;
        out.gradient = g_try;
        out.trace.push_back(out.value);
        out.iterations = iter + 1;

        if (detail::norm_n(out.gradient) <= g_stop) {
            out.converged = true;
            return out;
        }
    }
    return out;
}

}  // namespace vesselatlas
