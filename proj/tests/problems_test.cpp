#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "esom/problems.hpp"

using namespace esom;

namespace {

Vector fd_gradient(const ObjectiveOracle& f, const Vector& x) {
    Vector g(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[k]));
        Vector a = x, b = x;
        a[k] += h;
        b[k] -= h;
        g[k] = (f.value(a) - f.value(b)) / (2.0 * h);
    }
    return g;
}

DenseMatrix fd_hessian(const ObjectiveOracle& f, const Vector& x) {
    const std::size_t p = x.size();
    DenseMatrix h(p, p);
    for (std::size_t k = 0; k < p; ++k) {
        const double step = 1e-5 * std::max(1.0, std::abs(x[k]));
        Vector a = x, b = x;
        a[k] += step;
        b[k] -= step;
        const Vector d = (1.0 / (2.0 * step)) * (f.gradient(a) - f.gradient(b));
        for (std::size_t r = 0; r < p; ++r) h(r, k) = d[r];
    }
    return h;
}

void expect_oracle_derivatives(const ProblemInstance& prob, std::uint64_t seed, double spread) {
    Rng rng(seed);
    for (std::size_t i = 0; i < prob.n(); ++i) {
        for (int trial = 0; trial < 5; ++trial) {
            const Vector x = spread * randn(rng, prob.p());
            const ObjectiveOracle& f = prob.oracle(i);
            const Vector g = f.gradient(x);
            EXPECT_LE(norm(fd_gradient(f, x) - g), 1e-6 * std::max(1.0, norm(g))) << "node " << i;
            const DenseMatrix h = f.hessian(x);
            EXPECT_LE((fd_hessian(f, x) - h).frobenius_norm(), 1e-5 * std::max(1.0, h.frobenius_norm())) << "node " << i;
            EXPECT_LE(h.asymmetry(), 1e-15);
        }
    }
}

ProblemInstance identity_design(const Vector& b) {
    LeastSquaresData d;
    d.designs.push_back(DenseMatrix::identity(b.size()));
    d.responses.push_back(b);
    return make_least_squares_from_data(std::move(d));
}

} // namespace

TEST(LeastSquares, IdentityDesign) {
    const ProblemInstance prob = identity_design(Vector{1.0, -2.0, 0.5});
    EXPECT_NEAR(prob.x_star()[0], 1.0, 1e-15);
    EXPECT_NEAR(prob.x_star()[1], -2.0, 1e-15);
    EXPECT_NEAR(prob.x_star()[2], 0.5, 1e-15);
    EXPECT_DOUBLE_EQ(prob.constants().m, 2.0);
    EXPECT_DOUBLE_EQ(prob.constants().M, 2.0);
    EXPECT_EQ(prob.constants().L, 0.0);
}

TEST(LeastSquares, PaperSizedInstance) {
    const ProblemInstance prob = make_least_squares(20, 5, 5, 10.0, 100.0, 1);
    EXPECT_EQ(prob.n(), 20u);
    EXPECT_EQ(prob.p(), 5u);
    const SymEig e = sym_eig(global_hessian(prob, Vector(5)));
    EXPECT_NEAR(e.values[4] / e.values[0], 10.0, 1e-6 * 10.0);
    EXPECT_NEAR(norm(prob.x_star()), 100.0, 1e-8 * 100.0);
    EXPECT_LE(norm(global_gradient(prob, prob.x_star())), 1e-10 * std::max(1.0, norm(prob.x_star())));
    EXPECT_EQ(prob.constants().L, 0.0);
    EXPECT_TRUE(prob.quadratic());
}

TEST(LeastSquares, HessianScaleFixesLargestEigenvalue) {
    LeastSquaresOptions opt;
    opt.hessian_scale = 1.0;
    const ProblemInstance prob = make_least_squares(20, 5, 5, 10.0, 100.0, 2, opt);
    const SymEig e = sym_eig(global_hessian(prob, Vector(5)));
    EXPECT_NEAR(e.values[4], 1.0, 1e-12);
    EXPECT_NEAR(e.values[4] / e.values[0], 10.0, 1e-6 * 10.0);
    EXPECT_NEAR(norm(prob.x_star()), 100.0, 1e-8 * 100.0);
}

TEST(LeastSquares, ConstantsBoundLocalHessians) {
    const ProblemInstance prob = make_least_squares(6, 3, 4, 5.0, 10.0, 3);
    for (std::size_t i = 0; i < prob.n(); ++i) {
        const SymEig e = sym_eig(prob.oracle(i).hessian(Vector(3)));
        EXPECT_GE(e.values[0], prob.constants().m - 1e-9);
        EXPECT_LE(e.values[2], prob.constants().M + 1e-9);
    }
}

TEST(LeastSquares, DeterministicPerSeed) {
    const ProblemInstance a = make_least_squares(5, 2, 3, 4.0, 1.0, 9);
    const ProblemInstance b = make_least_squares(5, 2, 3, 4.0, 1.0, 9);
    std::ostringstream sa, sb;
    write_problem(sa, a);
    write_problem(sb, b);
    EXPECT_EQ(sa.str(), sb.str());
}

TEST(LeastSquares, ParameterValidation) {
    EXPECT_THROW(make_least_squares(1, 5, 2, 2.0, 1.0, 1), ParameterError);
    EXPECT_THROW(make_least_squares(3, 2, 2, 0.5, 1.0, 1), ParameterError);
    EXPECT_THROW(make_least_squares(3, 2, 2, 2.0, 0.0, 1), ParameterError);
    LeastSquaresOptions none;
    none.max_attempts = 0;
    EXPECT_THROW(make_least_squares(3, 2, 2, 2.0, 1.0, 1, none), NumericalFailure);
}

TEST(LeastSquares, FiniteDifferenceOracle) {
    expect_oracle_derivatives(make_least_squares(4, 3, 3, 10.0, 5.0, 4), 41, 2.0);
}

TEST(LeastSquares, ClosedFormMatchesNewtonReference) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const ProblemInstance prob = make_least_squares(10, 4, 3, 10.0, 100.0, seed);
        const Vector newton = newton_reference(prob);
        EXPECT_LE(norm(newton - prob.x_star()), 1e-10 * norm(prob.x_star())) << "seed " << seed;
    }
}

TEST(Logistic, PaperSizedInstance) {
    const ProblemInstance prob = make_logistic(20, 3, 3, 1.0, 1);
    EXPECT_EQ(prob.n(), 20u);
    EXPECT_DOUBLE_EQ(prob.constants().m, 1.0 / 20);
    EXPECT_GT(prob.constants().M, prob.constants().m);
    EXPECT_GT(prob.constants().L, 0.0);
    EXPECT_LE(norm(global_gradient(prob, prob.x_star())), 1e-12 * std::max(1.0, norm(prob.x_star())));
    for (std::size_t i = 0; i < prob.n(); ++i) {
        const auto& d = std::get<LogisticData>(prob.data());
        for (double l : d.labels[i]) EXPECT_TRUE(l == 1.0 || l == -1.0);
    }
}

TEST(Logistic, ZeroFeatureIsPureQuadratic) {
    LogisticData d;
    d.lambda = 2.0;
    d.samples.push_back(DenseMatrix(1, 3));
    d.labels.push_back(Vector{1.0});
    const ProblemInstance prob = make_logistic_from_data(std::move(d));
    const DenseMatrix h = prob.oracle(0).hessian(Vector{0.3, -1.0, 4.0});
    EXPECT_LE((h - 2.0 * DenseMatrix::identity(3)).max_abs(), 1e-15);
    EXPECT_LE(norm(prob.x_star()), 1e-15);
}

TEST(Logistic, FiniteDifferenceOracle) {
    expect_oracle_derivatives(make_logistic(5, 3, 3, 1.0, 2), 17, 1.5);
}

TEST(Logistic, HessianEigenvaluesWithinConstants) {
    const ProblemInstance prob = make_logistic(20, 3, 3, 1.0, 3);
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector x = 3.0 * randn(rng, 3);
        for (std::size_t i = 0; i < prob.n(); ++i) {
            const SymEig e = sym_eig(prob.oracle(i).hessian(x));
            EXPECT_GE(e.values[0], prob.constants().m - 1e-9);
            EXPECT_LE(e.values[2], prob.constants().M + 1e-9);
        }
    }
}

TEST(Logistic, HessianLipschitzBound) {
    const ProblemInstance prob = make_logistic(20, 3, 3, 1.0, 4);
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector x = randn(rng, 3), y = randn(rng, 3);
        for (std::size_t i = 0; i < prob.n(); ++i) {
            const double lhs = spectral_norm(prob.oracle(i).hessian(x) - prob.oracle(i).hessian(y));
            EXPECT_LE(lhs, prob.constants().L * norm(x - y) + 1e-9);
        }
    }
}

TEST(Logistic, StableForLargeMargins) {
    LogisticOracle f(DenseMatrix{{1.0}}, Vector{1.0}, 0.1);
    EXPECT_TRUE(std::isfinite(f.value(Vector{-1000.0})));
    EXPECT_NEAR(f.value(Vector{-1000.0}), 0.05 * 1e6 + 1000.0, 1e-6);
    EXPECT_NEAR(f.gradient(Vector{1000.0})[0], 100.0, 1e-9);
}

TEST(Logistic, RegularizationShrinksSolution) {
    auto solve = [](double lambda) {
        LogisticData d;
        d.lambda = lambda;
        Rng rng(6);
        for (int i = 0; i < 4; ++i) {
            d.samples.push_back(randn_matrix(rng, 3, 2));
            d.labels.push_back(Vector{1.0, 1.0, 1.0});
        }
        return make_logistic_from_data(std::move(d)).x_star();
    };
    const double lam = 5.0;
    EXPECT_LT(norm(solve(10.0 * lam)), norm(solve(lam)));
    EXPECT_LT(norm(solve(1000.0 * lam)), 1e-2);
}

TEST(Logistic, RejectsBadInput) {
    EXPECT_THROW(make_logistic(3, 2, 2, 0.0, 1), ParameterError);
    EXPECT_THROW(LogisticOracle(DenseMatrix(1, 2), Vector{0.5}, 1.0), ParameterError);
}

TEST(VStar, SingleNodeIsZero) {
    const ProblemInstance prob = identity_design(Vector{1.0, 2.0});
    const WeightMatrix w(Graph(1, {}), DenseMatrix::identity(1));
    EXPECT_LE(norm(compute_v_star(prob, w)), 1e-15);
}

TEST(VStar, KktResidualAndConsensusComponent) {
    const ProblemInstance prob = make_least_squares(8, 3, 4, 10.0, 100.0, 5);
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(8, 0.4, 5));
    const SqrtIMinusZ root(w);
    const Vector v = compute_v_star(prob, root);
    const Vector g = stacked_gradient(prob, prob.x_star_stacked());
    EXPECT_LE(norm(g + root.apply(v, 3)), 1e-8);
    EXPECT_LE(norm(consensus_projection(v, 8, 3)), 1e-10);
}

TEST(VStar, MismatchedGraph) {
    const ProblemInstance prob = make_least_squares(4, 2, 3, 2.0, 1.0, 5);
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(5, 0.6, 5));
    EXPECT_THROW(compute_v_star(prob, w), DimensionError);
}

TEST(ProblemFile, RoundTripIsExact) {
    for (const ProblemInstance& prob : {make_least_squares(4, 3, 2, 3.0, 7.0, 8), make_logistic(4, 2, 3, 0.5, 8)}) {
        std::stringstream ss;
        write_problem(ss, prob);
        const ProblemInstance back = read_problem(ss);
        EXPECT_EQ(back.family(), prob.family());
        EXPECT_EQ(back.x_star(), prob.x_star());
        EXPECT_EQ(back.constants().M, prob.constants().M);
        EXPECT_EQ(back.metadata(), prob.metadata());
        Rng rng(1);
        const Vector x = randn(rng, prob.p());
        for (std::size_t i = 0; i < prob.n(); ++i) EXPECT_EQ(back.oracle(i).gradient(x), prob.oracle(i).gradient(x));
        std::stringstream again;
        write_problem(again, back);
        EXPECT_EQ(again.str(), ss.str());
    }
}

TEST(ProblemFile, Malformed) {
    std::stringstream a("esom-problem 1\nfamily nope\n");
    EXPECT_THROW(read_problem(a), ConfigError);
    std::stringstream b("esom-problem 1\nfamily least_squares\nn 1\np 1\nnode 0 1\n1\n");
    EXPECT_THROW(read_problem(b), IoError);
    std::stringstream c("garbage");
    EXPECT_THROW(read_problem(c), IoError);
}
