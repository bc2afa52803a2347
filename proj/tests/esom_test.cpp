#include <gtest/gtest.h>

#include <cmath>

#include "esom/esom.hpp"

using namespace esom;

namespace {

ProblemInstance scalar_half_square() {
    LeastSquaresData d;
    d.designs.push_back(DenseMatrix{{std::sqrt(0.5)}});
    d.responses.push_back(Vector{0.0});
    return make_least_squares_from_data(std::move(d));
}

struct Fixture {
    ProblemInstance prob;
    WeightMatrix w;
};

Fixture small_ls(std::uint64_t seed = 3) {
    return {make_least_squares(6, 3, 4, 5.0, 10.0, seed), WeightMatrix::metropolis(generate_connected_graph(6, 0.4, seed))};
}

Fixture small_logistic(std::uint64_t seed = 4) {
    return {make_logistic(6, 3, 4, 1.0, seed), WeightMatrix::metropolis(generate_connected_graph(6, 0.4, seed))};
}

Fixture path3_ls() {
    return {make_least_squares(3, 2, 3, 3.0, 2.0, 7), WeightMatrix::metropolis(Graph(3, {{0, 1}, {1, 2}}))};
}

Vector dense_gradient(const Fixture& fx, const Vector& x, const Vector& q, double alpha) {
    const std::size_t p = fx.prob.p();
    return stacked_gradient(fx.prob, x) + q + alpha * apply_I_minus_Z(fx.w, x, p);
}

} // namespace

TEST(AlgorithmParams, Validation) {
    EXPECT_NO_THROW((AlgorithmParams{0.1, 1.0, 0}.validate()));
    EXPECT_THROW((AlgorithmParams{0.0, 1.0, 0}.validate()), ConfigError);
    EXPECT_THROW((AlgorithmParams{0.1, -1.0, 0}.validate()), ConfigError);
    EXPECT_THROW((AlgorithmParams{0.1, 1.0, -1}.validate()), ConfigError);
    EXPECT_THROW((AlgorithmParams{NAN, 1.0, 0}.validate()), ConfigError);
}

TEST(LocalGradient, MatchesStackedForm) {
    const Fixture fx = small_ls();
    Rng rng(1);
    const Vector x = randn(rng, 18);
    std::vector<NodeState> states = initial_states(fx.w, 3, x);
    for (auto& s : states) s.q = randn(rng, 3);
    const Vector dense = dense_gradient(fx, x, stack_q(states), 0.3);
    for (std::size_t i = 0; i < 6; ++i) {
        const Vector gi = local_gradient(i, states, fx.w, fx.prob.oracle(i), 0.3);
        EXPECT_LE(norm(gi - dense.segment(i * 3, 3)), 1e-12);
    }
}

TEST(LocalGradient, SingleNodeIsPlainGradientPlusDual) {
    const ProblemInstance prob = scalar_half_square();
    const WeightMatrix w(Graph(1, {}), DenseMatrix::identity(1));
    std::vector<NodeState> states = initial_states(w, 1, Vector{3.0});
    states[0].q = Vector{0.5};
    EXPECT_DOUBLE_EQ(local_gradient(0, states, w, prob.oracle(0), 7.0)[0], 3.5);
}

TEST(DescentDirection, KZeroIsBlockNewton) {
    const Fixture fx = path3_ls();
    Rng rng(2);
    const Vector x = randn(rng, 6);
    const DenseEsomMatrices m = dense_esom_matrices(fx.prob, fx.w, x, 0.2, 1.0, 0);
    const Vector g = dense_gradient(fx, x, Vector(6), 0.2);
    const Vector dense = -(m.H_tilde_inv * g);
    for (std::size_t i = 0; i < 3; ++i) {
        const Cholesky D(local_D(fx.prob.oracle(i).hessian(x.segment(2 * i, 2)), fx.w.self_weight(i), 0.2, 1.0));
        EXPECT_LE(norm(-D.solve(g.segment(2 * i, 2)) - dense.segment(2 * i, 2)), 1e-12);
    }
}

TEST(DescentDirection, ZeroGradientGivesZeroDirection) {
    const Fixture fx = path3_ls();
    const Cholesky D(local_D(fx.prob.oracle(1).hessian(Vector(2)), fx.w.self_weight(1), 0.2, 1.0));
    const Vector zero(2);
    const std::vector<std::pair<std::size_t, const Vector*>> dirs{{0, &zero}, {2, &zero}};
    const Vector d = descent_direction(1, zero, zero, dirs, D, fx.w, 0.2);
    EXPECT_EQ(norm(d), 0.0);
}

TEST(DescentDirection, MissingNeighborIsRejected) {
    const Fixture fx = path3_ls();
    const Cholesky D(local_D(fx.prob.oracle(1).hessian(Vector(2)), fx.w.self_weight(1), 0.2, 1.0));
    const Vector zero(2);
    EXPECT_THROW(descent_direction(1, zero, zero, {{0, &zero}}, D, fx.w, 0.2), ProtocolError);
    EXPECT_THROW(descent_direction(1, zero, zero, {{0, &zero}, {1, &zero}}, D, fx.w, 0.2), ProtocolError);
}

TEST(DescentDirection, KTwoMatchesDenseSeriesOnPath) {
    const Fixture fx = path3_ls();
    Rng rng(3);
    const Vector x = randn(rng, 6);
    const double alpha = 0.4, eps = 0.7;
    const DenseEsomMatrices m = dense_esom_matrices(fx.prob, fx.w, x, alpha, eps, 2);
    const Vector g = dense_gradient(fx, x, Vector(6), alpha);
    const Vector dense = -(m.H_tilde_inv * g);

    std::vector<Cholesky> D;
    for (std::size_t i = 0; i < 3; ++i)
        D.emplace_back(local_D(fx.prob.oracle(i).hessian(x.segment(2 * i, 2)), fx.w.self_weight(i), alpha, eps));
    std::vector<Vector> d(3);
    for (std::size_t i = 0; i < 3; ++i) d[i] = -D[i].solve(g.segment(2 * i, 2));
    for (int k = 0; k < 2; ++k) {
        std::vector<Vector> next(3);
        for (std::size_t i = 0; i < 3; ++i) {
            std::vector<std::pair<std::size_t, const Vector*>> dirs;
            for (std::size_t j : fx.w.neighbors(i)) dirs.emplace_back(j, &d[j]);
            next[i] = descent_direction(i, g.segment(2 * i, 2), d[i], dirs, D[i], fx.w, alpha);
        }
        d = next;
    }
    for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(norm(d[i] - dense.segment(2 * i, 2)), 1e-12);
}

TEST(DenseMatrices, SplittingIdentity) {
    const Fixture fx = small_logistic();
    Rng rng(5);
    const Vector x = randn(rng, 18);
    const DenseEsomMatrices m = dense_esom_matrices(fx.prob, fx.w, x, 0.3, 0.5, 1);
    EXPECT_LE((m.D - m.B - m.H).max_abs(), 1e-13);
    EXPECT_LE(m.B.asymmetry(), 1e-15);
    EXPECT_LE(m.H_tilde_inv.asymmetry(), 1e-12);
}

TEST(DenseMatrices, LargeKApproachesExactInverse) {
    const Fixture fx = small_ls();
    Rng rng(6);
    const Vector x = randn(rng, 18);
    const DenseEsomMatrices m = dense_esom_matrices(fx.prob, fx.w, x, 0.2, 1.0, 50);
    const DenseMatrix exact = Cholesky(m.H).inverse();
    EXPECT_LE((m.H_tilde_inv - exact).max_abs(), 1e-10 * std::max(1.0, exact.max_abs()));
}

TEST(EsomStep, ScalarExample) {
    const ProblemInstance prob = scalar_half_square();
    const WeightMatrix w(Graph(1, {}), DenseMatrix::identity(1));
    Network net(w);
    std::vector<NodeState> states = initial_states(w, 1, Vector{2.0});
    for (int K : {0, 1, 3}) {
        std::vector<NodeState> s = states;
        Network fresh(w);
        esom_step(s, fresh, prob, AlgorithmParams{0.5, 1.0, K});
        EXPECT_NEAR(s[0].x[0], 1.0, 1e-15) << "K=" << K;
        EXPECT_EQ(s[0].q[0], 0.0);
    }
    const DenseState d = esom_step_dense(Vector{2.0}, Vector{0.0}, w, prob, AlgorithmParams{0.5, 1.0, 0});
    EXPECT_NEAR(d.x[0], 1.0, 1e-15);
}

TEST(EsomStep, OptimumIsFixedPoint) {
    const Fixture fx = small_logistic();
    const std::size_t p = fx.prob.p();
    const SqrtIMinusZ root(fx.w);
    const Vector q_star = root.apply(compute_v_star(fx.prob, root), p);
    for (int K : {0, 1, 2}) {
        std::vector<NodeState> states = initial_states(fx.w, p, fx.prob.x_star_stacked());
        for (std::size_t i = 0; i < fx.w.n(); ++i) states[i].q = q_star.segment(i * p, p);
        Network net(fx.w);
        esom_step(states, net, fx.prob, AlgorithmParams{0.3, 0.5, K});
        EXPECT_LE(norm(stack_x(states) - fx.prob.x_star_stacked()), 1e-8);
        EXPECT_LE(norm(stack_q(states) - q_star), 1e-8);
    }
}

TEST(EsomStep, MessagePassingMatchesDenseForHundredSteps) {
    for (const Fixture& fx : {small_ls(), small_logistic()}) {
        const std::size_t p = fx.prob.p();
        for (int K : {0, 1, 2}) {
            const AlgorithmParams prm{0.3, 0.8, K};
            std::vector<NodeState> states = initial_states(fx.w, p, Vector(fx.w.n() * p));
            Network net(fx.w);
            Vector x(fx.w.n() * p), q(fx.w.n() * p);
            for (int t = 0; t < 100; ++t) {
                esom_step(states, net, fx.prob, prm);
                const DenseState d = esom_step_dense(x, q, fx.w, fx.prob, prm);
                x = d.x;
                q = d.q;
            }
            const double scale = std::max(1.0, norm(x));
            EXPECT_LE(norm(stack_x(states) - x), 1e-10 * scale) << "K=" << K;
            EXPECT_LE(norm(stack_q(states) - q), 1e-10 * std::max(1.0, norm(q))) << "K=" << K;
        }
    }
}

TEST(EsomStep, DualStaysOrthogonalToConsensus) {
    const Fixture fx = small_logistic();
    const std::size_t p = fx.prob.p();
    std::vector<NodeState> states = initial_states(fx.w, p, Vector(fx.w.n() * p));
    Network net(fx.w);
    for (int t = 0; t < 50; ++t) {
        esom_step(states, net, fx.prob, AlgorithmParams{0.3, 0.5, 1});
        const Vector q = stack_q(states);
        EXPECT_LE(norm(consensus_projection(q, fx.w.n(), p)), 1e-12 * std::max(1.0, norm(q)));
    }
}

TEST(EsomStep, RoundsAreKPlusOnePerIteration) {
    const Fixture fx = small_ls();
    for (int K : {0, 1, 2, 4}) {
        std::vector<NodeState> states = initial_states(fx.w, 3, Vector(18));
        Network net(fx.w);
        for (int t = 0; t < 7; ++t) {
            const MessageLog inc = esom_step(states, net, fx.prob, AlgorithmParams{0.2, 1.0, K});
            EXPECT_EQ(inc.rounds, static_cast<std::uint64_t>(K + 1));
            EXPECT_EQ(inc.messages, static_cast<std::uint64_t>((K + 1) * 6));
        }
        EXPECT_EQ(net.log().rounds, static_cast<std::uint64_t>(7 * (K + 1)));
    }
}

TEST(EsomStep, ReadsOnlyFromNeighbors) {
    const Fixture fx = small_ls();
    std::vector<NodeState> states = initial_states(fx.w, 3, Vector(18));
    Network net(fx.w);
    net.access_log().enabled = true;
    for (int t = 0; t < 3; ++t) esom_step(states, net, fx.prob, AlgorithmParams{0.2, 1.0, 2});
    ASSERT_FALSE(net.access_log().reads.empty());
    for (const AccessRecord& r : net.access_log().reads)
        EXPECT_TRUE(r.reader == r.owner || fx.w.graph().has_edge(r.reader, r.owner));
}

TEST(Network, RejectsNonNeighborMissingAndWrongTag) {
    const WeightMatrix w = WeightMatrix::metropolis(Graph(3, {{0, 1}, {1, 2}}));
    Network net(w);
    const MessageTag tag{Channel::direction, 0, 0};
    EXPECT_THROW(net.receive(0, 1, tag), ProtocolError);
    net.post(1, tag, Vector{1.0});
    EXPECT_THROW(net.receive(0, 1, tag), ProtocolError);  // not delivered yet
    net.post(2, tag, Vector{2.0});
    net.deliver();
    EXPECT_EQ(net.receive(0, 1, tag)[0], 1.0);
    EXPECT_THROW(net.receive(0, 2, tag), ProtocolError);
    EXPECT_THROW(net.receive(0, 1, MessageTag{Channel::direction, 0, 1}), ProtocolError);
    EXPECT_THROW(net.receive(0, 1, MessageTag{Channel::iterate, 0, 0}), ProtocolError);
}

TEST(EsomStep, StaleNeighborCacheIsRejected) {
    const Fixture fx = small_ls();
    std::vector<NodeState> states = initial_states(fx.w, 3, Vector(18));
    states[2].iteration = 1;
    for (auto& s : states) s.iteration = 1;
    states[4].neighbors.front().stamp = 0;
    Network net(fx.w);
    EXPECT_THROW(esom_step(states, net, fx.prob, AlgorithmParams{0.2, 1.0, 0}), ProtocolError);
}

TEST(EsomStep, DesynchronizedNodesAreRejected) {
    const Fixture fx = small_ls();
    std::vector<NodeState> states = initial_states(fx.w, 3, Vector(18));
    states[3].iteration = 5;
    Network net(fx.w);
    EXPECT_THROW(esom_step(states, net, fx.prob, AlgorithmParams{0.2, 1.0, 0}), ProtocolError);
}

TEST(Lyapunov, HandValue) {
    EXPECT_DOUBLE_EQ(lyapunov(Vector{1.0, 2.0}, Vector{0.0, 0.0}, Vector{3.0}, Vector{1.0}, 0.5, 2.0), 5.0 + 4.0);
}

TEST(RecoverDual, RoundTripAndRejection) {
    const WeightMatrix w = WeightMatrix::metropolis(generate_connected_graph(6, 0.4, 9));
    const SqrtIMinusZ root(w);
    Rng rng(9);
    const Vector v = root.apply(randn(rng, 12), 2);  // in the range of the root
    const Vector q = root.apply(v, 2);
    EXPECT_LE(norm(recover_dual_v(q, root, 2) - v), 1e-9 * std::max(1.0, norm(v)));
    Vector bad = q;
    for (std::size_t i = 0; i < 6; ++i) bad[2 * i] += 1.0;
    EXPECT_THROW(recover_dual_v(bad, root, 2), InconsistentState);
}

TEST(RunEsom, ConvergesAndLogsRounds) {
    const Fixture fx = small_ls();
    RunOptions opt;
    opt.max_iters = 400;
    opt.lyapunov = true;
    const RunTrace tr = run_esom(fx.prob, fx.w, AlgorithmParams{20.0, 0.5, 1}, opt);
    EXPECT_EQ(tr.label, "ESOM-1");
    ASSERT_EQ(tr.records.size(), 401u);
    EXPECT_EQ(tr.records[0].rel_err, 1.0);
    EXPECT_LT(tr.final_error(), 1e-10);
    EXPECT_EQ(tr.records.back().comm_rounds, 800u);
    for (std::size_t t = 1; t < tr.records.size(); ++t) {
        ASSERT_TRUE(tr.records[t].lyapunov.has_value());
        EXPECT_LE(*tr.records[t].lyapunov, *tr.records[t - 1].lyapunov * (1.0 + 1e-12) + 1e-14 * *tr.records[0].lyapunov);
    }
}

TEST(RunEsom, StopToleranceOneMeansNoIterations) {
    const Fixture fx = small_ls();
    RunOptions opt;
    opt.stop_tol = 1.0;
    const RunTrace tr = run_esom(fx.prob, fx.w, AlgorithmParams{0.2, 0.5, 0}, opt);
    EXPECT_EQ(tr.iterations(), 0u);
    EXPECT_EQ(tr.records.size(), 1u);
}

TEST(RunEsom, HugeAlphaWithTinyEpsilonStillStable) {
    // the proximal dual step is unconditionally stable for quadratics
    const Fixture fx = small_ls();
    RunOptions opt;
    opt.max_iters = 50;
    EXPECT_NO_THROW(run_esom(fx.prob, fx.w, AlgorithmParams{1e3, 1e-3, 0}, opt));
}

TEST(RunEsom, DivergenceIsReported) {
    const Fixture fx = small_ls();
    RunOptions opt;
    opt.max_iters = 5;
    opt.divergence_threshold = 0.5;  // the initial error is 1
    try {
        run_esom(fx.prob, fx.w, AlgorithmParams{0.2, 0.5, 0}, opt);
        FAIL() << "expected DivergenceError";
    } catch (const DivergenceError& e) {
        EXPECT_NE(std::string(e.what()).find("alpha=0.20000000000000001"), std::string::npos) << e.what();
    }
}

TEST(RunEsom, SnapshotsHoldIterateAndDual) {
    const Fixture fx = small_ls();
    RunOptions opt;
    opt.max_iters = 5;
    opt.snapshots = true;
    const RunTrace tr = run_esom(fx.prob, fx.w, AlgorithmParams{0.2, 0.5, 1}, opt);
    ASSERT_EQ(tr.snapshots.size(), 6u);
    EXPECT_EQ(tr.snapshots[3].iter, 3u);
    EXPECT_EQ(tr.snapshots[0].x.size(), 18u);
    EXPECT_EQ(tr.snapshots[0].dual.size(), 18u);
}
