#pragma once
// Independent oracles shared by the unit and acceptance suites: a central
// finite-difference gradient check and a brute-force active-set QP solver
// for validating the GEM dual.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cilbench/network.hpp"

namespace cilbench::testsupport {

// Largest relative error between `grad` and central finite differences of
// `loss_at` over the network parameters. `loss_at` must evaluate the loss at
// the network's current parameters without mutating them.
inline double fd_max_rel_error(Network& net, const std::function<double()>& loss_at,
                               const std::vector<double>& grad, double h = 1e-5) {
    std::vector<double>& theta = net.params();
    if (grad.size() != theta.size()) throw std::invalid_argument("fd: gradient length mismatch");
    double max_rel = 0.0;
    for (size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        const double up = loss_at();
        theta[i] = saved - h;
        const double down = loss_at();
        theta[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::fabs(fd), std::fabs(grad[i]), 1e-6});
        max_rel = std::max(max_rel, std::fabs(fd - grad[i]) / denom);
    }
    return max_rel;
}

// Equality-constrained least-distance solve via the Gram system
// (G G^T) mu = gamma - G g, x = g + G^T mu. Returns false when the Gram
// matrix is singular.
inline bool solve_equality_qp(const std::vector<double>& g,
                              const std::vector<const std::vector<double>*>& active, double gamma,
                              std::vector<double>& x, std::vector<double>& mu) {
    const size_t m = active.size();
    x = g;
    mu.assign(m, 0.0);
    if (m == 0) return true;

    std::vector<std::vector<double>> a(m, std::vector<double>(m + 1, 0.0));
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < m; ++j)
            for (size_t d = 0; d < g.size(); ++d) a[i][j] += (*active[i])[d] * (*active[j])[d];
        double gi_g = 0.0;
        for (size_t d = 0; d < g.size(); ++d) gi_g += (*active[i])[d] * g[d];
        a[i][m] = gamma - gi_g;
    }

    // Gaussian elimination with partial pivoting.
    for (size_t col = 0; col < m; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < m; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        if (std::fabs(a[pivot][col]) < 1e-12) return false;
        std::swap(a[col], a[pivot]);
        for (size_t r = 0; r < m; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (size_t c = col; c <= m; ++c) a[r][c] -= f * a[col][c];
        }
    }
    for (size_t i = 0; i < m; ++i) mu[i] = a[i][m] / a[i][i];
    for (size_t i = 0; i < m; ++i)
        for (size_t d = 0; d < g.size(); ++d) x[d] += mu[i] * (*active[i])[d];
    return true;
}

// Brute-force oracle for min ||x - g||^2 s.t. <x, refs[k]> >= gamma:
// enumerates every active set, solves the equality-constrained problem, and
// keeps the best primal- and dual-feasible candidate (KKT conditions).
inline std::vector<double> qp_oracle(const std::vector<double>& g,
                                     const std::vector<std::vector<double>>& refs, double gamma,
                                     double tol = 1e-9) {
    const size_t m = refs.size();
    if (m > 20) throw std::invalid_argument("qp_oracle: too many constraints");
    std::vector<double> best;
    double best_obj = std::numeric_limits<double>::infinity();
    for (unsigned subset = 0; subset < (1u << m); ++subset) {
        std::vector<const std::vector<double>*> active;
        for (size_t k = 0; k < m; ++k)
            if (subset & (1u << k)) active.push_back(&refs[k]);
        std::vector<double> x, mu;
        if (!solve_equality_qp(g, active, gamma, x, mu)) continue;

        bool ok = true;
        for (double v : mu) ok = ok && v >= -tol;  // dual feasibility
        for (size_t k = 0; ok && k < m; ++k) {
            double dot = 0.0;
            for (size_t d = 0; d < g.size(); ++d) dot += x[d] * refs[k][d];
            ok = dot >= gamma - tol;  // primal feasibility
        }
        if (!ok) continue;

        double obj = 0.0;
        for (size_t d = 0; d < g.size(); ++d) obj += (x[d] - g[d]) * (x[d] - g[d]);
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
    }
    if (best.empty()) throw std::runtime_error("qp_oracle: no feasible candidate");
    return best;
}

}  // namespace cilbench::testsupport
