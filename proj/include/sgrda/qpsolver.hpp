#pragma once

// Minimizes w'Qw + c'w over a product of probability simplices, one simplex per block of
// M consecutive variables. Q is block-sparse: dense diagonal blocks plus one dense block
// per coupled block pair.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sgrda/error.hpp"

namespace sgrda {

/// Q_{first,second} of a coupled block pair; Q_{second,first} is its transpose.
struct CouplingBlock {
    int first = 0;
    int second = 0;
    Eigen::MatrixXd block;
};

/// Block-structured quadratic w'Qw + c'w. Stores only the upper coupling blocks.
struct EnergyProblem {
    int blocks = 0;  // N
    int width = 0;   // M
    double alpha = 0.0;
    std::vector<Eigen::MatrixXd> diagonal;  // Q_ii, M x M
    std::vector<CouplingBlock> couplings;   // first < second
    Eigen::VectorXd linear;                 // c, length N*M

    Eigen::Index dim() const { return static_cast<Eigen::Index>(blocks) * width; }

    auto segment(Eigen::VectorXd& v, int i) const { return v.segment(static_cast<Eigen::Index>(i) * width, width); }
    auto segment(const Eigen::VectorXd& v, int i) const {
        return v.segment(static_cast<Eigen::Index>(i) * width, width);
    }

    /// Q w.
    Eigen::VectorXd multiply(const Eigen::VectorXd& w) const {
        Eigen::VectorXd out(dim());
        for (int i = 0; i < blocks; ++i) segment(out, i).noalias() = diagonal[static_cast<std::size_t>(i)] * segment(w, i);
        for (const auto& cb : couplings) {
            segment(out, cb.first).noalias() += cb.block * segment(w, cb.second);
            segment(out, cb.second).noalias() += cb.block.transpose() * segment(w, cb.first);
        }
        return out;
    }

    double objective(const Eigen::VectorXd& w) const { return w.dot(multiply(w)) + w.dot(linear); }

    Eigen::VectorXd gradient(const Eigen::VectorXd& w) const { return 2.0 * multiply(w) + linear; }

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd q = Eigen::MatrixXd::Zero(dim(), dim());
        for (int i = 0; i < blocks; ++i)
            q.block(static_cast<Eigen::Index>(i) * width, static_cast<Eigen::Index>(i) * width, width, width) =
                diagonal[static_cast<std::size_t>(i)];
        for (const auto& cb : couplings) {
            q.block(static_cast<Eigen::Index>(cb.first) * width, static_cast<Eigen::Index>(cb.second) * width, width,
                    width) = cb.block;
            q.block(static_cast<Eigen::Index>(cb.second) * width, static_cast<Eigen::Index>(cb.first) * width, width,
                    width) = cb.block.transpose();
        }
        return q;
    }

    void validate() const {
        if (blocks < 1 || width < 1) throw UsageError("energy problem needs at least one block of width >= 1");
        if (static_cast<int>(diagonal.size()) != blocks) throw UsageError("diagonal block count mismatch");
        if (linear.size() != dim()) throw UsageError("linear term length mismatch");
        for (const auto& d : diagonal)
            if (d.rows() != width || d.cols() != width) throw UsageError("diagonal block shape mismatch");
        for (const auto& cb : couplings) {
            if (cb.first < 0 || cb.second >= blocks || cb.first >= cb.second)
                throw UsageError("coupling block indices invalid");
            if (cb.block.rows() != width || cb.block.cols() != width) throw UsageError("coupling block shape mismatch");
        }
    }
};

struct SolverConfig {
    int max_sweeps = 200;
    double rel_tol = 1e-8;
    int block_inner_iters = 50;
    /// Convergence additionally requires the KKT residual to fall below this.
    double kkt_tol = 1e-9;
    /// Entries below this are flushed to zero once at the end.
    double zero_threshold = 1e-12;
    std::uint64_t seed = 0;
};

struct SolverResult {
    Eigen::VectorXd w;
    double objective = 0.0;
    int sweeps_used = 0;
    double kkt_residual = 0.0;
    bool converged = false;
    /// Objective at the start, then after each sweep, accumulated from the exact per-block
    /// decreases; agrees with a fresh evaluation up to rounding.
    std::vector<double> objective_trace;
};

/// Euclidean projection onto {x >= 0, sum x = 1} by sort-and-threshold.
inline Eigen::VectorXd project_simplex(const Eigen::Ref<const Eigen::VectorXd>& v) {
    const Eigen::Index n = v.size();
    if (n < 1) throw UsageError("cannot project an empty vector");
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0, theta = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cumsum += u[static_cast<std::size_t>(j)];
        const double t = (cumsum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<std::size_t>(j)] - t > 0) theta = t;
    }
    Eigen::VectorXd x = (v.array() - theta).cwiseMax(0.0);
    const double s = x.sum();
    if (s > 0) {
        x /= s;
    } else {
        // all mass clipped: happens only through rounding when v is a near-vertex
        Eigen::Index k = 0;
        v.maxCoeff(&k);
        x.setZero();
        x[k] = 1.0;
    }
    return x;
}

namespace detail {

// Projected-gradient step length (in simplex coordinates) treated as stationary.
inline constexpr double kStationaryStep = 1e-13;
// Projection step, in units of 1/L for the block Lipschitz constant L.
inline constexpr double kProjectionStepScale = 16.0;

/// Minimizes x'Hx + b'x over the simplex starting from feasible x (in place).
/// Alternates a projected-gradient step and a Newton step restricted to the current support;
/// every step uses an exact line search, so the block objective never increases.
class BlockSimplexQp {
public:
    BlockSimplexQp(const Eigen::MatrixXd& h, double lipschitz) : h_(h), lipschitz_(lipschitz) {}

    /// Returns true when the block reached a stationary point before `max_iters`.
    bool minimize(Eigen::Ref<Eigen::VectorXd> x, const Eigen::VectorXd& b, int max_iters) const {
        // The exact line search keeps any step safe; a long one identifies the support sooner.
        const double step = lipschitz_ > 0 ? kProjectionStepScale / lipschitz_ : 1e12;
        for (int it = 0; it < max_iters; ++it) {
            Eigen::VectorXd g = 2.0 * h_ * x + b;
            Eigen::VectorXd d = project_simplex(x - step * g) - x;
            if (d.lpNorm<Eigen::Infinity>() <= kStationaryStep) return true;
            if (!line_step(x, g, d, 1.0)) return true;

            g = 2.0 * h_ * x + b;
            newton_on_support(x, g);
        }
        return false;
    }

private:
    // x += gamma d with gamma the exact minimizer on [0, gamma_max]; false if no descent.
    bool line_step(Eigen::Ref<Eigen::VectorXd> x, const Eigen::VectorXd& g, const Eigen::VectorXd& d,
                   double gamma_max) const {
        const double slope = g.dot(d);
        if (!(slope < 0)) return false;
        const double curv = d.dot(h_ * d);
        double gamma = gamma_max;
        if (curv > 0) gamma = std::min(gamma_max, -slope / (2.0 * curv));
        if (!(gamma > 0)) return false;
        x += gamma * d;
        x = x.cwiseMax(0.0);  // convex combination of feasible points; clears rounding
        renormalize(x);
        return true;
    }

    void newton_on_support(Eigen::Ref<Eigen::VectorXd> x, const Eigen::VectorXd& g) const {
        std::vector<Eigen::Index> support;
        for (Eigen::Index k = 0; k < x.size(); ++k)
            if (x[k] > 0) support.push_back(k);
        const auto s = static_cast<Eigen::Index>(support.size());
        if (s < 2) return;

        // [2H_SS 1; 1' 0] [d; mu] = [-g_S; 0]
        Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(s + 1, s + 1);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(s + 1);
        for (Eigen::Index a = 0; a < s; ++a) {
            for (Eigen::Index c = 0; c < s; ++c) kkt(a, c) = 2.0 * h_(support[a], support[c]);
            kkt(a, s) = kkt(s, a) = 1.0;
            rhs[a] = -g[support[a]];
        }
        Eigen::VectorXd sol = kkt.partialPivLu().solve(rhs);
        if (!sol.allFinite() || (kkt * sol - rhs).lpNorm<Eigen::Infinity>() > 1e-9 * (1.0 + rhs.lpNorm<Eigen::Infinity>()))
            sol = kkt.completeOrthogonalDecomposition().solve(rhs);  // singular face
        Eigen::VectorXd d = Eigen::VectorXd::Zero(x.size());
        const double drift = sol.head(s).sum() / static_cast<double>(s);
        for (Eigen::Index a = 0; a < s; ++a) d[support[a]] = sol[a] - drift;
        if (!d.allFinite() || d.lpNorm<Eigen::Infinity>() <= 1e-15) return;

        // largest step keeping x + gamma d >= 0
        double gamma_max = std::numeric_limits<double>::infinity();
        Eigen::Index blocking = -1;
        for (Eigen::Index k : support)
            if (d[k] < 0 && -x[k] / d[k] < gamma_max) {
                gamma_max = -x[k] / d[k];
                blocking = k;
            }
        const double slope = g.dot(d);
        if (!(slope < 0)) return;
        const double curv = d.dot(h_ * d);
        double gamma = curv > 0 ? -slope / (2.0 * curv) : gamma_max;
        const bool hits = gamma >= gamma_max;
        gamma = std::min(gamma, gamma_max);
        if (!(gamma > 0) || !std::isfinite(gamma)) return;
        x += gamma * d;
        if (hits && blocking >= 0) x[blocking] = 0.0;
        x = x.cwiseMax(0.0);
        renormalize(x);
    }

    static void renormalize(Eigen::Ref<Eigen::VectorXd> x) {
        const double s = x.sum();
        if (s > 0) x /= s;
    }

    const Eigen::MatrixXd& h_;
    double lipschitz_;
};

inline double block_kkt_residual(const Eigen::Ref<const Eigen::VectorXd>& x, const Eigen::Ref<const Eigen::VectorXd>& g) {
    return (x - project_simplex(x - g)).lpNorm<Eigen::Infinity>();
}

}  // namespace detail

/// Max over blocks of ||x_i - P(x_i - grad_i)||_inf.
inline double kkt_residual(const EnergyProblem& problem, const Eigen::VectorXd& w) {
    const Eigen::VectorXd g = problem.gradient(w);
    double r = 0.0;
    for (int i = 0; i < problem.blocks; ++i)
        r = std::max(r, detail::block_kkt_residual(problem.segment(w, i), problem.segment(g, i)));
    return r;
}

/// Block-coordinate descent over the per-block simplices in ascending block order.
/// Never throws on non-convergence; inspect `converged` and `kkt_residual`.
inline SolverResult solve_block_coordinate(const EnergyProblem& problem, const SolverConfig& config = {},
                                           const std::optional<Eigen::VectorXd>& init = std::nullopt) {
    problem.validate();
    if (config.max_sweeps < 1 || !(config.rel_tol > 0)) throw UsageError("invalid solver configuration");
    const int n = problem.blocks, m = problem.width;

    SolverResult res;
    res.w.resize(problem.dim());
    if (init) {
        if (init->size() != problem.dim()) throw UsageError("warm start has wrong length");
        for (int i = 0; i < n; ++i) problem.segment(res.w, i) = project_simplex(problem.segment(*init, i));
    } else {
        res.w.setConstant(1.0 / m);
    }

    // coupling lookup per block
    std::vector<std::vector<std::size_t>> touching(static_cast<std::size_t>(n));
    for (std::size_t e = 0; e < problem.couplings.size(); ++e) {
        touching[static_cast<std::size_t>(problem.couplings[e].first)].push_back(e);
        touching[static_cast<std::size_t>(problem.couplings[e].second)].push_back(e);
    }
    std::vector<double> lipschitz(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(problem.diagonal[static_cast<std::size_t>(i)],
                                                          Eigen::EigenvaluesOnly);
        lipschitz[static_cast<std::size_t>(i)] = 2.0 * std::max(0.0, es.eigenvalues().maxCoeff());
    }

    // A block whose last solve settled and whose neighbours have not moved since faces the
    // identical subproblem again and is skipped.
    std::vector<bool> settled(static_cast<std::size_t>(n), false);
    std::vector<std::uint64_t> changed_at(static_cast<std::size_t>(n), 0), solved_at(static_cast<std::size_t>(n), 0);
    std::uint64_t clock = 0;

    double f = problem.objective(res.w);
    res.objective_trace.push_back(f);
    Eigen::VectorXd b(m);
    for (int sweep = 1; sweep <= config.max_sweeps; ++sweep) {
        double sweep_decrease = 0.0;
        for (int i = 0; i < n; ++i) {
            const auto ui = static_cast<std::size_t>(i);
            if (settled[ui]) {
                bool stale = false;
                for (std::size_t e : touching[ui]) {
                    const auto& cb = problem.couplings[e];
                    const int j = cb.first == i ? cb.second : cb.first;
                    stale |= changed_at[static_cast<std::size_t>(j)] > solved_at[ui];
                }
                if (!stale) continue;
            }
            b = problem.segment(problem.linear, i);
            for (std::size_t e : touching[ui]) {
                const auto& cb = problem.couplings[e];
                if (cb.first == i)
                    b.noalias() += 2.0 * cb.block * problem.segment(res.w, cb.second);
                else
                    b.noalias() += 2.0 * cb.block.transpose() * problem.segment(res.w, cb.first);
            }
            const auto& h = problem.diagonal[ui];
            auto xi = problem.segment(res.w, i);
            const Eigen::VectorXd before = xi;
            settled[ui] = detail::BlockSimplexQp(h, lipschitz[ui]).minimize(xi, b, config.block_inner_iters);
            // objective change evaluated from the step itself, free of cancellation
            const Eigen::VectorXd step = xi - before;
            const double delta = step.dot(2.0 * h * before + b) + step.dot(h * step);
            if (delta < 0) {
                changed_at[ui] = ++clock;
                sweep_decrease -= delta;
            } else {
                xi = before;
                settled[ui] = true;
            }
            solved_at[ui] = clock;
        }
        res.sweeps_used = sweep;
        const double decrease = sweep_decrease;
        f -= decrease;
        res.objective_trace.push_back(f);
        if (decrease <= config.rel_tol * std::max(1.0, std::abs(f))) {
            res.kkt_residual = kkt_residual(problem, res.w);
            if (res.kkt_residual <= config.kkt_tol || decrease <= 0) break;
        }
    }

    for (int i = 0; i < n; ++i) {
        auto xi = problem.segment(res.w, i);
        const Eigen::VectorXd kept = (xi.array() < config.zero_threshold).select(0.0, xi);
        if (kept.sum() > 0) xi = kept / kept.sum();
    }
    res.objective = problem.objective(res.w);
    res.kkt_residual = kkt_residual(problem, res.w);
    res.converged = res.kkt_residual <= std::max(config.kkt_tol, 1e-6);
    return res;
}

struct OracleResult {
    Eigen::VectorXd w;
    double objective = 0.0;
};

namespace detail {

/// All vectors of non-negative multiples of 1/units summing to 1, length m.
inline std::vector<Eigen::VectorXd> simplex_lattice(int m, int units) {
    std::vector<Eigen::VectorXd> out;
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
        if (pos == m - 1) {
            counts[static_cast<std::size_t>(pos)] = left;
            Eigen::VectorXd v(m);
            for (int k = 0; k < m; ++k) v[k] = static_cast<double>(counts[static_cast<std::size_t>(k)]) / units;
            out.push_back(v);
            return;
        }
        for (int c = left; c >= 0; --c) {
            counts[static_cast<std::size_t>(pos)] = c;
            rec(pos + 1, left - c);
        }
    };
    rec(0, units);
    return out;
}

}  // namespace detail

/// Exact minimum of the objective over the product of discretized simplices (each block a
/// lattice of multiples of `grid_step`). Plain enumeration when the product has at most
/// `max_enumeration` points; for larger instances whose couplings form a path 0-1-...-(N-1)
/// the same lattice optimum is found by min-sum dynamic programming along the path.
inline OracleResult brute_force_oracle(const EnergyProblem& problem, double grid_step,
                                       double max_enumeration = 1e7) {
    problem.validate();
    if (problem.blocks * problem.width > 9) throw UsageError("oracle instance too large (N*M > 9)");
    const double units_d = 1.0 / grid_step;
    const int units = static_cast<int>(std::lround(units_d));
    if (units < 1 || std::abs(units_d - units) > 1e-9) throw UsageError("grid step must divide 1");

    const auto lattice = detail::simplex_lattice(problem.width, units);
    const auto p = static_cast<double>(lattice.size());
    const int n = problem.blocks;

    auto unary = [&](int i, const Eigen::VectorXd& x) {
        return x.dot(problem.diagonal[static_cast<std::size_t>(i)] * x) + x.dot(problem.segment(problem.linear, i));
    };

    OracleResult best;
    best.objective = std::numeric_limits<double>::infinity();
    if (std::pow(p, n) <= max_enumeration) {
        std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
        Eigen::VectorXd w(problem.dim());
        for (;;) {
            for (int i = 0; i < n; ++i) problem.segment(w, i) = lattice[idx[static_cast<std::size_t>(i)]];
            const double f = problem.objective(w);
            if (f < best.objective) {
                best.objective = f;
                best.w = w;
            }
            int k = n - 1;
            while (k >= 0 && ++idx[static_cast<std::size_t>(k)] == lattice.size()) idx[static_cast<std::size_t>(k--)] = 0;
            if (k < 0) break;
        }
        return best;
    }

    // path-structured fallback
    std::vector<const CouplingBlock*> link(static_cast<std::size_t>(n), nullptr);  // link[i]: (i-1, i)
    for (const auto& cb : problem.couplings) {
        if (cb.second != cb.first + 1) throw UsageError("oracle instance too large and not path-coupled");
        link[static_cast<std::size_t>(cb.second)] = &cb;
    }
    const std::size_t pl = lattice.size();
    std::vector<std::vector<double>> cost(static_cast<std::size_t>(n), std::vector<double>(pl));
    std::vector<std::vector<std::size_t>> arg(static_cast<std::size_t>(n), std::vector<std::size_t>(pl, 0));
    for (std::size_t a = 0; a < pl; ++a) cost[0][a] = unary(0, lattice[a]);
    for (int i = 1; i < n; ++i) {
        const auto* cb = link[static_cast<std::size_t>(i)];
        for (std::size_t a = 0; a < pl; ++a) {
            double best_prev = std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t pa = 0; pa < pl; ++pa) {
                double v = cost[static_cast<std::size_t>(i - 1)][pa];
                if (cb) v += 2.0 * lattice[pa].dot(cb->block * lattice[a]);
                if (v < best_prev) {
                    best_prev = v;
                    best_idx = pa;
                }
            }
            cost[static_cast<std::size_t>(i)][a] = best_prev + unary(i, lattice[a]);
            arg[static_cast<std::size_t>(i)][a] = best_idx;
        }
    }
    const auto& last = cost[static_cast<std::size_t>(n - 1)];
    std::size_t a = static_cast<std::size_t>(std::min_element(last.begin(), last.end()) - last.begin());
    best.w.resize(problem.dim());
    for (int i = n - 1; i >= 0; --i) {
        problem.segment(best.w, i) = lattice[a];
        a = arg[static_cast<std::size_t>(i)][a];
    }
    best.objective = problem.objective(best.w);
    return best;
}

}  // namespace sgrda
