#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "esom/graph.hpp"

using namespace esom;

namespace {

Graph path3() { return Graph(3, {{0, 1}, {1, 2}}); }
Graph complete3() { return Graph(3, {{0, 1}, {0, 2}, {1, 2}}); }

std::size_t bfs_reach(const Graph& g) {
    std::vector<char> seen(g.n(), 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 0;
    while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        ++count;
        for (std::size_t v = 0; v < g.n(); ++v)
            if (!seen[v] && g.has_edge(u, v)) {
                seen[v] = 1;
                stack.push_back(v);
            }
    }
    return count;
}

// Every mixing-matrix condition: symmetry, stochastic rows, support, positive
// diagonal, one-dimensional null space of I - W.
void expect_mixing_conditions(const WeightMatrix& w) {
    const std::size_t n = w.n();
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row += w.weight(i, j);
            EXPECT_EQ(w.weight(i, j), w.weight(j, i));
            const bool support = i == j || w.graph().has_edge(i, j);
            if (support) {
                EXPECT_GT(w.weight(i, j), 0.0);
            } else {
                EXPECT_EQ(w.weight(i, j), 0.0);
            }
        }
        EXPECT_NEAR(row, 1.0, 1e-12);
    }
    const SymEig e = sym_eig(DenseMatrix::identity(n) - w.matrix());
    EXPECT_NEAR(e.values[0], 0.0, 1e-12);
    if (n > 1) {
        EXPECT_GT(e.values[1], 1e-12);
    }
}

} // namespace

TEST(GenerateGraph, TwoNodesGiveOneEdge) {
    const Graph g = generate_connected_graph(2, 1.0, 7);
    ASSERT_EQ(g.edges().size(), 1u);
    EXPECT_EQ(g.edges()[0], (Edge{0, 1}));
}

TEST(GenerateGraph, PaperSizedEdgeBudget) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Graph g = generate_connected_graph(20, 3.0 / 20.0, seed);
        EXPECT_EQ(g.edges().size(), 28u);
        EXPECT_EQ(bfs_reach(g), 20u);
    }
}

TEST(GenerateGraph, ConnectedForManyRatios) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const std::size_t n = 3 + seed % 17;
        const double r = std::min(1.0, 2.0 / static_cast<double>(n) + 0.03 * static_cast<double>(seed % 7));
        const Graph g = generate_connected_graph(n, r, seed);
        EXPECT_EQ(g.edges().size(), edge_budget(n, r));
        EXPECT_EQ(bfs_reach(g), n);
        EXPECT_TRUE(g.is_connected());
    }
}

TEST(GenerateGraph, DeterministicPerSeed) {
    EXPECT_EQ(generate_connected_graph(15, 0.3, 4).edges(), generate_connected_graph(15, 0.3, 4).edges());
    EXPECT_NE(generate_connected_graph(15, 0.3, 4).edges(), generate_connected_graph(15, 0.3, 5).edges());
}

TEST(GenerateGraph, InfeasibleRatio) {
    EXPECT_THROW(generate_connected_graph(20, 0.05, 1), InfeasibleRatio);
    EXPECT_THROW(generate_connected_graph(1, 1.0, 1), ParameterError);
    EXPECT_THROW(generate_connected_graph(5, 0.0, 1), ParameterError);
}

TEST(Graph, RejectsBadEdges) {
    EXPECT_THROW(Graph(3, {{1, 1}}), ParameterError);
    EXPECT_THROW(Graph(3, {{0, 3}}), ParameterError);
    EXPECT_THROW(Graph(3, {{0, 1}, {1, 0}}), ParameterError);
}

TEST(Metropolis, PathByHand) {
    const WeightMatrix w = WeightMatrix::metropolis(path3());
    EXPECT_DOUBLE_EQ(w.weight(0, 1), 1.0 / 3);
    EXPECT_DOUBLE_EQ(w.weight(1, 2), 1.0 / 3);
    EXPECT_DOUBLE_EQ(w.weight(0, 0), 2.0 / 3);
    EXPECT_DOUBLE_EQ(w.weight(2, 2), 2.0 / 3);
    EXPECT_NEAR(w.weight(1, 1), 1.0 / 3, 1e-16);
    EXPECT_EQ(w.weight(0, 2), 0.0);
    EXPECT_NEAR(w.min_self_weight(), 1.0 / 3, 1e-16);
}

TEST(Metropolis, CompleteThreeByHand) {
    const WeightMatrix w = WeightMatrix::metropolis(complete3());
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(w.weight(i, j), 1.0 / 3, 1e-16);
}

TEST(Metropolis, HundredRandomGraphsSatisfyMixingConditions) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const std::size_t n = 2 + seed % 25;
        const double r = std::min(1.0, 2.5 / static_cast<double>(n) + 0.01 * static_cast<double>(seed % 11));
        expect_mixing_conditions(WeightMatrix::metropolis(generate_connected_graph(n, r, seed)));
    }
}

TEST(Metropolis, RejectsDisconnectedGraph) {
    EXPECT_THROW(WeightMatrix::metropolis(Graph(4, {{0, 1}, {2, 3}})), ParameterError);
}

TEST(LambdaHat, HandValues) {
    EXPECT_NEAR(lambda_hat_min(WeightMatrix::metropolis(path3())), 1.0 / 3, 1e-14);
    // K_3: W = J/3, so I - W = I - J/3 has eigenvalues (0, 1, 1)
    const WeightMatrix k3 = WeightMatrix::metropolis(complete3());
    EXPECT_NEAR(lambda_hat_min(k3), 1.0, 1e-14);
    const SymEig& e = k3.laplacian_eig();
    EXPECT_NEAR(e.values[0], 0.0, 1e-14);
    EXPECT_NEAR(e.values[1], 1.0, 1e-14);
    EXPECT_NEAR(e.values[2], 1.0, 1e-14);
}

TEST(ApplyZ, ConsensusVectorIsFixed) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(6, 0.5, 3));
    Vector x(12);
    for (std::size_t i = 0; i < 6; ++i) {
        x[2 * i] = 1.5;
        x[2 * i + 1] = -2.0;
    }
    const Vector z = apply_Z(w, x, 2);
    for (std::size_t k = 0; k < 12; ++k) EXPECT_NEAR(z[k], x[k], 1e-15);
}

TEST(ApplyZ, SingleNodeIsIdentity) {
    const WeightMatrix w(Graph(1, {}), DenseMatrix::identity(1));
    const Vector x{1.0, 2.0, 3.0};
    EXPECT_EQ(apply_Z(w, x, 3), x);
}

TEST(ApplyZ, MatchesDenseKronecker) {
    const WeightMatrix w = WeightMatrix::metropolis(path3());
    Rng rng(12);
    const Vector x = randn(rng, 6);
    const Vector dense = kron_identity(w.matrix(), 2) * x;
    const Vector fast = apply_Z(w, x, 2);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(fast[k], dense[k], 1e-14);
}

TEST(ApplyZ, SelfAdjoint) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(10, 0.3, 8));
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector x = randn(rng, 30), y = randn(rng, 30);
        EXPECT_NEAR(dot(apply_Z(w, x, 3), y), dot(x, apply_Z(w, y, 3)), 1e-12);
    }
}

TEST(ApplyZ, LengthMismatch) {
    const WeightMatrix w = WeightMatrix::metropolis(path3());
    EXPECT_THROW(apply_Z(w, Vector(5), 2), DimensionError);
}

TEST(SqrtIMinusZ, AnnihilatesConsensus) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(7, 0.4, 2));
    const SqrtIMinusZ s(w);
    Vector x(14);
    for (std::size_t i = 0; i < 7; ++i) {
        x[2 * i] = 3.0;
        x[2 * i + 1] = 0.25;
    }
    EXPECT_LE(norm(s.apply(x, 2)), 1e-12);
}

TEST(SqrtIMinusZ, SquaresToIMinusZ) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(9, 0.35, 6));
    const SqrtIMinusZ s(w);
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
        const Vector x = randn(rng, 27);
        const Vector twice = s.apply(s.apply(x, 3), 3);
        EXPECT_LE(norm(twice - apply_I_minus_Z(w, x, 3)), 1e-10);
    }
}

TEST(SqrtIMinusZ, PathEigenvalues) {
    const SqrtIMinusZ s(WeightMatrix::metropolis(path3()));
    EXPECT_NEAR(s.eigenvalues()[0], 0.0, 1e-7);
    EXPECT_NEAR(s.eigenvalues()[1], std::sqrt(1.0 / 3), 1e-14);
    EXPECT_NEAR(s.eigenvalues()[2], 1.0, 1e-14);
}

TEST(SqrtIMinusZ, ZeroExactlyOnConsensusSubspace) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(8, 0.3, 10));
    const SqrtIMinusZ s(w);
    Rng rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector x = randn(rng, 16);
        const Vector mean = consensus_projection(x, 8, 2);
        EXPECT_GT(norm(s.apply(x, 2)), 1e-10);
        EXPECT_LE(norm(s.apply(mean, 2)), 1e-10);
    }
}

TEST(SqrtIMinusZ, PseudoInverseRoundTrip) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(8, 0.3, 10));
    const SqrtIMinusZ s(w);
    Rng rng(13);
    const Vector x = randn(rng, 16);
    const Vector q = s.apply(x, 2);
    EXPECT_LE(norm(s.apply(s.apply_pinv(q, 2), 2) - q), 1e-10);
}

TEST(GraphFile, RoundTrip) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(12, 0.3, 21));
    std::stringstream ss;
    write_weight_matrix(ss, w);
    const WeightMatrix back = read_weight_matrix(ss);
    EXPECT_EQ(back.graph().edges(), w.graph().edges());
    for (std::size_t i = 0; i < 12; ++i)
        for (std::size_t j = 0; j < 12; ++j) EXPECT_EQ(back.weight(i, j), w.weight(i, j));
}

TEST(GraphFile, FormatIsFirstLineCountThenTriples) {
    std::stringstream ss;
    write_weight_matrix(ss, WeightMatrix::metropolis(path3()));
    EXPECT_EQ(ss.str(), "3\n0 1 0.33333333333333331\n1 2 0.33333333333333331\n");
}

TEST(GraphFile, MalformedInput) {
    std::stringstream a("3\n0 1\n");
    EXPECT_THROW(read_weight_matrix(a), IoError);
    std::stringstream b("");
    EXPECT_THROW(read_weight_matrix(b), IoError);
    std::stringstream c("3\n0 1 0.5\n");  // node 2 isolated
    EXPECT_THROW(read_weight_matrix(c), ParameterError);
}
