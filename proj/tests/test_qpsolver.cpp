#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "sgrda/qpsolver.hpp"

using namespace sgrda;

namespace {

EnergyProblem single_block(const Eigen::MatrixXd& q, const Eigen::VectorXd& c) {
    EnergyProblem p;
    p.blocks = 1;
    p.width = static_cast<int>(q.rows());
    p.diagonal = {q};
    p.linear = c;
    return p;
}

// Random PSD chain problem built as a Gram matrix of random features.
EnergyProblem random_chain(int n, int m, std::mt19937& rng, int feature_dim = 4) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(feature_dim * (2 * n), n * m);
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = g(rng);
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n * m, n * m);
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd f = a.block(feature_dim * i, m * i, feature_dim, m);
        q.block(m * i, m * i, m, m) += f.transpose() * f;
    }
    for (int i = 0; i + 1 < n; ++i) {
        Eigen::MatrixXd oi = a.block(feature_dim * (n + i), m * i, feature_dim, m);
        Eigen::MatrixXd oj = a.block(feature_dim * (n + i), m * (i + 1), feature_dim, m);
        q.block(m * i, m * i, m, m) += 0.25 * oi.transpose() * oi;
        q.block(m * (i + 1), m * (i + 1), m, m) += 0.25 * oj.transpose() * oj;
        q.block(m * i, m * (i + 1), m, m) -= 0.25 * oi.transpose() * oj;
        q.block(m * (i + 1), m * i, m, m) -= 0.25 * oj.transpose() * oi;
    }
    EnergyProblem p;
    p.blocks = n;
    p.width = m;
    p.alpha = 0.25;
    for (int i = 0; i < n; ++i) p.diagonal.push_back(q.block(m * i, m * i, m, m));
    for (int i = 0; i + 1 < n; ++i) p.couplings.push_back({i, i + 1, q.block(m * i, m * (i + 1), m, m)});
    p.linear.resize(n * m);
    for (int k = 0; k < n * m; ++k) p.linear[k] = 2.0 * g(rng);
    return p;
}

void expect_feasible_and_monotone(const EnergyProblem& p, const SolverResult& r) {
    for (int i = 0; i < p.blocks; ++i) {
        auto b = p.segment(r.w, i);
        EXPECT_NEAR(b.sum(), 1.0, 1e-9);
        EXPECT_GE(b.minCoeff(), -1e-12);
    }
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
        EXPECT_LE(r.objective_trace[k], r.objective_trace[k - 1]);
    // the accumulated trace tracks a fresh evaluation of the objective
    EXPECT_NEAR(r.objective_trace.back(), r.objective, 1e-9 * std::max(1.0, std::abs(r.objective)));
    EXPECT_NEAR(r.objective_trace.front(), p.objective(Eigen::VectorXd::Constant(p.dim(), 1.0 / p.width)),
                1e-12 * std::max(1.0, std::abs(r.objective_trace.front())));
}

}  // namespace

TEST(ProjectSimplex, WorkedExamples) {
    Eigen::VectorXd a(3);
    a << 0.3, 0.3, 0.4;
    EXPECT_LT((project_simplex(a) - a).norm(), 1e-15);

    Eigen::VectorXd b(2);
    b << 2.0, 0.0;
    Eigen::VectorXd pb = project_simplex(b);
    EXPECT_DOUBLE_EQ(pb[0], 1.0);
    EXPECT_DOUBLE_EQ(pb[1], 0.0);

    Eigen::VectorXd c(2);
    c << 0.6, 0.6;
    Eigen::VectorXd pc = project_simplex(c);
    EXPECT_DOUBLE_EQ(pc[0], 0.5);
    EXPECT_DOUBLE_EQ(pc[1], 0.5);
}

TEST(ProjectSimplex, MatchesBisectionOracle) {
    std::mt19937 rng(3);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial % 9;
        Eigen::VectorXd v(n);
        for (int k = 0; k < n; ++k) v[k] = g(rng);
        // oracle: threshold tau solves sum max(v - tau, 0) = 1, found by bisection
        double lo = v.minCoeff() - 1.0, hi = v.maxCoeff();
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            ((v.array() - mid).cwiseMax(0.0).sum() > 1.0 ? lo : hi) = mid;
        }
        Eigen::VectorXd expect = (v.array() - 0.5 * (lo + hi)).cwiseMax(0.0);
        Eigen::VectorXd got = project_simplex(v);
        EXPECT_LT((got - expect).lpNorm<Eigen::Infinity>(), 1e-9);
        EXPECT_NEAR(got.sum(), 1.0, 1e-15);
        EXPECT_GE(got.minCoeff(), 0.0);
    }
}

TEST(Solver, AnalyticCases) {
    {
        auto p = single_block(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
        auto r = solve_block_coordinate(p);
        EXPECT_NEAR(r.w[0], 0.5, 1e-8);
        EXPECT_NEAR(r.w[1], 0.5, 1e-8);
        EXPECT_NEAR(r.objective, 0.5, 1e-8);
        expect_feasible_and_monotone(p, r);
    }
    {
        Eigen::MatrixXd q = Eigen::Vector2d(1.0, 2.0).asDiagonal();
        auto p = single_block(q, Eigen::VectorXd::Zero(2));
        auto r = solve_block_coordinate(p);
        EXPECT_NEAR(r.w[0], 2.0 / 3.0, 1e-8);
        EXPECT_NEAR(r.w[1], 1.0 / 3.0, 1e-8);
        EXPECT_NEAR(r.objective, 2.0 / 3.0, 1e-8);
        EXPECT_TRUE(r.converged);
        expect_feasible_and_monotone(p, r);
    }
    {
        auto p = single_block(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(-2.0, 0.0));
        auto r = solve_block_coordinate(p);
        EXPECT_NEAR(r.w[0], 1.0, 1e-8);
        EXPECT_NEAR(r.w[1], 0.0, 1e-8);
        EXPECT_NEAR(r.objective, -1.0, 1e-8);
        expect_feasible_and_monotone(p, r);
    }
}

TEST(Solver, RejectsBadConfigAndShapes) {
    auto p = single_block(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
    SolverConfig bad;
    bad.max_sweeps = 0;
    EXPECT_THROW(solve_block_coordinate(p, bad), UsageError);
    p.linear = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(solve_block_coordinate(p), UsageError);
}

TEST(Oracle, WorkedExamples) {
    Eigen::MatrixXd q = Eigen::Vector2d(1.0, 2.0).asDiagonal();
    auto o = brute_force_oracle(single_block(q, Eigen::VectorXd::Zero(2)), 0.05);
    EXPECT_NEAR(o.w[0], 0.65, 1e-12);
    EXPECT_NEAR(o.w[1], 0.35, 1e-12);
    EXPECT_NEAR(o.objective, 2.0 / 3.0, 0.01);

    auto one = brute_force_oracle(single_block(Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::VectorXd::Ones(1)), 0.05);
    EXPECT_EQ(one.w[0], 1.0);
    EXPECT_DOUBLE_EQ(one.objective, 4.0);

    EnergyProblem big;
    big.blocks = 4;
    big.width = 3;
    big.diagonal.assign(4, Eigen::MatrixXd::Identity(3, 3));
    big.linear = Eigen::VectorXd::Zero(12);
    EXPECT_THROW(brute_force_oracle(big, 0.05), UsageError);
}

TEST(Oracle, PathDynamicProgramMatchesEnumeration) {
    std::mt19937 rng(17);
    for (int t = 0; t < 5; ++t) {
        auto p = random_chain(3, 3, rng);
        auto enumerated = brute_force_oracle(p, 0.1);       // 66^3 points, enumerated
        auto path = brute_force_oracle(p, 0.1, 0.0);        // forced onto the path route
        EXPECT_NEAR(path.objective, enumerated.objective, 1e-12);
        auto refined = brute_force_oracle(p, 0.05);         // 231^3 points, path route
        EXPECT_LE(refined.objective, enumerated.objective + 1e-12);
    }
}

TEST(Solver, OracleDominanceOnRandomChains) {
    std::mt19937 rng(2024);
    for (int seed = 0; seed < 50; ++seed) {
        const int n = 1 + seed % 3, m = 2 + seed % 2;
        auto p = random_chain(n, m, rng);
        auto r = solve_block_coordinate(p);
        auto o = brute_force_oracle(p, 0.05);
        EXPECT_LE(r.objective, o.objective + 1e-6) << "seed " << seed;
        EXPECT_LT(r.kkt_residual, 1e-6) << "seed " << seed;
        EXPECT_TRUE(r.converged);
        expect_feasible_and_monotone(p, r);
    }
}

TEST(Solver, WarmStartReconvergesQuickly) {
    std::mt19937 rng(5);
    for (int t = 0; t < 10; ++t) {
        auto p = random_chain(3, 3, rng);
        auto r = solve_block_coordinate(p);
        auto again = solve_block_coordinate(p, {}, r.w);
        EXPECT_LE(again.sweeps_used, 2);
        EXPECT_NEAR(again.objective, r.objective, 1e-10);
    }
}

TEST(Solver, PermutationEquivariance) {
    std::mt19937 rng(8);
    for (int t = 0; t < 10; ++t) {
        const int n = 3, m = 3;
        auto p = random_chain(n, m, rng);
        std::vector<int> perm{2, 0, 1};
        Eigen::PermutationMatrix<Eigen::Dynamic> pm(m);
        for (int k = 0; k < m; ++k) pm.indices()[k] = perm[k];
        EnergyProblem q = p;
        for (int i = 0; i < n; ++i) {
            q.diagonal[i] = pm * p.diagonal[i] * pm.transpose();
            q.segment(q.linear, i) = pm * p.segment(p.linear, i);
        }
        for (auto& cb : q.couplings) cb.block = pm * cb.block * pm.transpose();
        auto a = solve_block_coordinate(p), b = solve_block_coordinate(q);
        for (int i = 0; i < n; ++i)
            EXPECT_LT((pm * p.segment(a.w, i) - q.segment(b.w, i)).lpNorm<Eigen::Infinity>(), 1e-8);
    }
}

TEST(Solver, SparseSolutionsOnLargerProblems) {
    std::mt19937 rng(99);
    auto p = random_chain(40, 20, rng, 6);
    auto r = solve_block_coordinate(p);
    expect_feasible_and_monotone(p, r);
    EXPECT_TRUE(r.converged) << r.kkt_residual;
    // optimality against the dense gradient: every block satisfies its simplex KKT conditions
    EXPECT_LT(kkt_residual(p, r.w), 1e-6);
    const auto zeros = (r.w.array() < 1e-6).count();
    EXPECT_GT(zeros, r.w.size() / 2);
}
