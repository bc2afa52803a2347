#pragma once

// ESOM-K: message-passing simulation of the per-node recursions, and the dense matrix
// form used as a reference.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "esom/graph.hpp"
#include "esom/numkit.hpp"
#include "esom/problems.hpp"
#include "esom/trace.hpp"

namespace esom {

struct AlgorithmParams {
    double alpha = 0.1;
    double epsilon = 1.0;
    int K = 0;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be positive, got " + format_real(alpha));
        if (!(epsilon > 0.0) || !std::isfinite(epsilon))
            throw ConfigError("epsilon must be positive, got " + format_real(epsilon));
        if (K < 0) throw ConfigError("K must be non-negative, got " + std::to_string(K));
    }
};

inline std::string esom_label(int K) { return "ESOM-" + std::to_string(K); }

// ---------------------------------------------------------------------------
// Simulated synchronous network

enum class Channel { iterate, direction };

// Identifies one message: which quantity, for which outer iteration and inner round.
struct MessageTag {
    Channel channel = Channel::iterate;
    std::uint64_t iteration = 0;
    int inner = 0;
    bool operator==(const MessageTag&) const = default;
};

inline std::string describe(const MessageTag& t) {
    return std::string(t.channel == Channel::iterate ? "iterate" : "direction") + "(t=" + std::to_string(t.iteration) +
           ", k=" + std::to_string(t.inner) + ")";
}

struct AccessRecord {
    std::size_t reader;
    std::size_t owner;
    MessageTag tag;
};

// Every read performed through a Network, in order.
struct AccessLog {
    std::vector<AccessRecord> reads;
    bool enabled = false;
};

struct MessageLog {
    std::uint64_t rounds = 0;       // synchronous exchange rounds
    std::uint64_t messages = 0;     // vectors sent, one per node per round
    MessageLog& operator+=(const MessageLog& o) {
        rounds += o.rounds;
        messages += o.messages;
        return *this;
    }
};

// Double-buffered mailboxes. Nodes post into the pending buffer; deliver() makes the
// round's posts visible; receive() only sees delivered posts and only from neighbors.
class Network {
public:
    explicit Network(const WeightMatrix& w) : w_(&w), visible_(w.n()), pending_(w.n()) {}

    const WeightMatrix& weights() const noexcept { return *w_; }

    void post(std::size_t sender, MessageTag tag, Vector payload) {
        pending_.at(sender) = Slot{tag, std::move(payload)};
        ++posted_;
    }

    // Ends a round. Returns the number of messages made visible.
    MessageLog deliver(bool count = true) {
        MessageLog inc;
        for (std::size_t i = 0; i < pending_.size(); ++i) {
            if (pending_[i]) {
                visible_[i] = std::move(pending_[i]);
                pending_[i].reset();
            }
        }
        if (count && posted_ > 0) {
            inc.rounds = 1;
            inc.messages = posted_;
        }
        posted_ = 0;
        log_ += inc;
        return inc;
    }

    const Vector& receive(std::size_t reader, std::size_t owner, const MessageTag& want) {
        if (reader != owner && !w_->graph().has_edge(reader, owner))
            throw ProtocolError("node " + std::to_string(reader) + " tried to read node " + std::to_string(owner) +
                                ", which is not a neighbor");
        const auto& slot = visible_.at(owner);
        if (!slot) throw ProtocolError("node " + std::to_string(reader) + ": no message from node " + std::to_string(owner));
        if (!(slot->tag == want))
            throw ProtocolError("node " + std::to_string(reader) + " expected " + describe(want) + " from node " +
                                std::to_string(owner) + " but found " + describe(slot->tag));
        if (access_.enabled) access_.reads.push_back(AccessRecord{reader, owner, want});
        return slot->payload;
    }

    const MessageLog& log() const noexcept { return log_; }
    AccessLog& access_log() noexcept { return access_; }
    const AccessLog& access_log() const noexcept { return access_; }

private:
    struct Slot {
        MessageTag tag;
        Vector payload;
    };
    const WeightMatrix* w_;
    std::vector<std::optional<Slot>> visible_;
    std::vector<std::optional<Slot>> pending_;
    std::uint64_t posted_ = 0;
    MessageLog log_;
    AccessLog access_;
};

struct NeighborCopy {
    std::size_t node = 0;
    Vector x;
    std::uint64_t stamp = 0;  // iteration the copy belongs to
};

struct NodeState {
    Vector x;
    Vector q;
    std::uint64_t iteration = 0;
    std::vector<NeighborCopy> neighbors;  // same order as W.neighbors(i)
};

// x_{i,0} given, q_{i,0} = 0, neighbor caches filled with the initial iterates (no
// communication is charged for the common initialization).
inline std::vector<NodeState> initial_states(const WeightMatrix& w, std::size_t p, const Vector& x0) {
    check_stacked(w, x0, p);
    std::vector<NodeState> states(w.n());
    for (std::size_t i = 0; i < w.n(); ++i) {
        states[i].x = x0.segment(i * p, p);
        states[i].q = Vector(p);
        for (std::size_t j : w.neighbors(i)) states[i].neighbors.push_back(NeighborCopy{j, x0.segment(j * p, p), 0});
    }
    return states;
}

inline Vector stack_x(const std::vector<NodeState>& states) {
    const std::size_t p = states.front().x.size();
    Vector out(states.size() * p);
    for (std::size_t i = 0; i < states.size(); ++i) out.set_segment(i * p, states[i].x);
    return out;
}
inline Vector stack_q(const std::vector<NodeState>& states) {
    const std::size_t p = states.front().q.size();
    Vector out(states.size() * p);
    for (std::size_t i = 0; i < states.size(); ++i) out.set_segment(i * p, states[i].q);
    return out;
}

inline void check_neighbor_cache(std::size_t i, const NodeState& s, const WeightMatrix& w) {
    const auto& nb = w.neighbors(i);
    if (s.neighbors.size() != nb.size()) throw ProtocolError("node " + std::to_string(i) + ": neighbor cache incomplete");
    for (std::size_t k = 0; k < nb.size(); ++k) {
        if (s.neighbors[k].node != nb[k])
            throw ProtocolError("node " + std::to_string(i) + ": neighbor cache holds a non-neighbor");
        if (s.neighbors[k].stamp != s.iteration)
            throw ProtocolError("node " + std::to_string(i) + ": stale copy of node " + std::to_string(nb[k]) +
                                " (stamp " + std::to_string(s.neighbors[k].stamp) + ", iteration " +
                                std::to_string(s.iteration) + ")");
    }
}

// Σ_{j∈N_i} w_ij (x_i - x_j) = (1-w_ii)x_i - Σ_j w_ij x_j. The difference form keeps the
// network-wide sum of these terms exactly balanced, so q gains no consensus drift.
inline Vector neighbor_difference(std::size_t i, const NodeState& s, const WeightMatrix& w) {
    Vector out(s.x.size());
    for (const auto& nb : s.neighbors) {
        const double wij = w.weight(i, nb.node);
        for (std::size_t r = 0; r < out.size(); ++r) out[r] += wij * (s.x[r] - nb.x[r]);
    }
    return out;
}

// g_i = ∇f_i(x_i) + q_i + α(1-w_ii)x_i - α Σ_{j∈N_i} w_ij x_j, from node i's own cache.
inline Vector local_gradient(std::size_t i, const std::vector<NodeState>& states, const WeightMatrix& w,
                             const ObjectiveOracle& f, double alpha, bool include_dual = true) {
    const NodeState& s = states.at(i);
    check_neighbor_cache(i, s, w);
    Vector g = f.gradient(s.x);
    if (include_dual) g += s.q;
    g.axpy(alpha, neighbor_difference(i, s, w));
    return g;
}

inline Vector local_gradient(std::size_t i, const std::vector<NodeState>& states, const WeightMatrix& w,
                             const ObjectiveOracle& f, const AlgorithmParams& prm) {
    return local_gradient(i, states, w, f, prm.alpha, true);
}

// D_ii = ∇²f_i(x_i) + (2α(1-w_ii) + ε) I
inline DenseMatrix local_D(const DenseMatrix& hess, double w_ii, double alpha, double epsilon) {
    DenseMatrix d = hess;
    d.add_to_diagonal(2.0 * alpha * (1.0 - w_ii) + epsilon);
    return d;
}

// d_i(k+1) = D_ii⁻¹[α(1-w_ii) d_i(k) + α Σ_{j∈N_i} w_ij d_j(k) - g_i].
// `neighbor_dirs` pairs each neighbor index with its d_j(k).
inline Vector descent_direction(std::size_t i, const Vector& g_i, const Vector& own_dir,
                                const std::vector<std::pair<std::size_t, const Vector*>>& neighbor_dirs,
                                const Cholesky& D_ii, const WeightMatrix& w, double alpha) {
    const auto& nb = w.neighbors(i);
    if (neighbor_dirs.size() != nb.size())
        throw ProtocolError("node " + std::to_string(i) + ": missing neighbor direction");
    Vector rhs = -g_i;
    rhs.axpy(alpha * (1.0 - w.self_weight(i)), own_dir);
    for (std::size_t k = 0; k < nb.size(); ++k) {
        if (neighbor_dirs[k].first != nb[k] || neighbor_dirs[k].second == nullptr)
            throw ProtocolError("node " + std::to_string(i) + ": missing direction from node " + std::to_string(nb[k]));
        rhs.axpy(alpha * w.weight(i, nb[k]), *neighbor_dirs[k].second);
    }
    return D_ii.solve(rhs);
}

// Settings of one truncated-series step. ESOM uses (α, ε, K, step 1, dual on); NN-K is
// the same with ε = 0, no dual and a stepsize.
struct SeriesStep {
    double alpha;
    double epsilon;
    int K;
    double step = 1.0;
    bool dual = true;
};

namespace detail {

inline MessageLog series_iteration(std::vector<NodeState>& states, Network& net, const ProblemInstance& prob,
                                   const SeriesStep& cfg) {
    const WeightMatrix& w = net.weights();
    const std::size_t n = w.n();
    const std::uint64_t t = states.front().iteration;
    const MessageLog before = net.log();

    std::vector<Cholesky> factors;
    factors.reserve(n);
    std::vector<Vector> g(n), d(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (states[i].iteration != t) throw ProtocolError("nodes are not synchronized");
        factors.emplace_back(local_D(prob.oracle(i).hessian(states[i].x), w.self_weight(i), cfg.alpha, cfg.epsilon));
        g[i] = local_gradient(i, states, w, prob.oracle(i), cfg.alpha, cfg.dual);
        d[i] = -factors[i].solve(g[i]);
    }

    for (int k = 0; k < cfg.K; ++k) {
        const MessageTag tag{Channel::direction, t, k};
        for (std::size_t i = 0; i < n; ++i) net.post(i, tag, d[i]);
        net.deliver();
        std::vector<Vector> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<std::pair<std::size_t, const Vector*>> dirs;
            for (std::size_t j : w.neighbors(i)) dirs.emplace_back(j, &net.receive(i, j, tag));
            next[i] = descent_direction(i, g[i], net.receive(i, i, tag), dirs, factors[i], w, cfg.alpha);
        }
        d = std::move(next);
    }

    const MessageTag xtag{Channel::iterate, t + 1, 0};
    for (std::size_t i = 0; i < n; ++i) {
        states[i].x.axpy(cfg.step, d[i]);
        net.post(i, xtag, states[i].x);
    }
    net.deliver();
    for (std::size_t i = 0; i < n; ++i) {
        NodeState& s = states[i];
        for (auto& nb : s.neighbors) {
            nb.x = net.receive(i, nb.node, xtag);
            nb.stamp = t + 1;
        }
        s.iteration = t + 1;
        if (cfg.dual) {
            // q_i += α(1-w_ii)x_i - α Σ_j w_ij x_j
            s.q.axpy(cfg.alpha, neighbor_difference(i, s, w));
        }
    }
    MessageLog inc;
    inc.rounds = net.log().rounds - before.rounds;
    inc.messages = net.log().messages - before.messages;
    return inc;
}

} // namespace detail

// One ESOM-K iteration on every node; K direction rounds plus one iterate round.
inline MessageLog esom_step(std::vector<NodeState>& states, Network& net, const ProblemInstance& prob,
                            const AlgorithmParams& prm) {
    prm.validate();
    if (states.size() != prob.n() || net.weights().n() != prob.n())
        throw DimensionError("esom_step: states, network and problem disagree on n");
    return detail::series_iteration(states, net, prob, SeriesStep{prm.alpha, prm.epsilon, prm.K, 1.0, true});
}

// ---------------------------------------------------------------------------
// Dense reference form

struct DenseEsomMatrices {
    DenseMatrix hessian;       // ∇²f(x), block diagonal
    DenseMatrix D;             // ∇²f + εI + 2α(I - Z_d)
    DenseMatrix B;             // α(I - 2Z_d + Z)
    DenseMatrix H;             // ∇²f + εI + α(I - Z)
    DenseMatrix H_tilde_inv;   // D^{-1/2} Σ_{u≤K} (D^{-1/2} B D^{-1/2})^u D^{-1/2}
};

inline DenseEsomMatrices dense_esom_matrices(const ProblemInstance& prob, const WeightMatrix& w, const Vector& x,
                                             double alpha, double epsilon, int K) {
    const std::size_t n = w.n(), p = prob.p(), np = n * p;
    DenseEsomMatrices out;
    out.hessian = stacked_hessian(prob, x);
    const DenseMatrix Z = kron_identity(w.matrix(), p);
    const DenseMatrix I = DenseMatrix::identity(np);
    DenseMatrix Zd(np, np);
    for (std::size_t k = 0; k < np; ++k) Zd(k, k) = Z(k, k);

    out.D = out.hessian + 2.0 * alpha * (I - Zd);
    out.D.add_to_diagonal(epsilon);
    out.B = alpha * (I - 2.0 * Zd + Z);
    out.H = out.hessian + alpha * (I - Z);
    out.H.add_to_diagonal(epsilon);

    // D is block diagonal, so D^{-1/2} is assembled block by block.
    DenseMatrix d_inv_half(np, np);
    for (std::size_t i = 0; i < n; ++i) {
        const SymEig e = sym_eig(out.D.block(i * p, i * p, p, p));
        for (std::size_t k = 0; k < p; ++k)
            if (!(e.values[k] > 0.0)) throw NotPositiveDefinite("dense_esom_matrices: D block is not positive definite");
        d_inv_half.set_block(i * p, i * p, sym_matrix_function(e, [](double l) { return 1.0 / std::sqrt(l); }));
    }
    const DenseMatrix core = d_inv_half * out.B * d_inv_half;
    DenseMatrix sum = I;
    DenseMatrix power = I;
    for (int u = 1; u <= K; ++u) {
        power = power * core;
        sum += power;
    }
    out.H_tilde_inv = d_inv_half * sum * d_inv_half;
    return out;
}

struct DenseState {
    Vector x;
    Vector q;
};

// x' = x - H̃⁻¹(K)[∇f(x) + q + α(I-Z)x], q' = q + α(I-Z)x'.
inline DenseState esom_step_dense(const Vector& x, const Vector& q, const WeightMatrix& w, const ProblemInstance& prob,
                                  const AlgorithmParams& prm) {
    prm.validate();
    const std::size_t p = prob.p();
    check_stacked(w, x, p);
    check_stacked(w, q, p);
    const DenseEsomMatrices m = dense_esom_matrices(prob, w, x, prm.alpha, prm.epsilon, prm.K);
    const DenseMatrix IZ = DenseMatrix::identity(x.size()) - kron_identity(w.matrix(), p);
    const Vector g = stacked_gradient(prob, x) + q + prm.alpha * (IZ * x);
    DenseState out;
    out.x = x - m.H_tilde_inv * g;
    out.q = q + prm.alpha * (IZ * out.x);
    return out;
}

// ‖v - v*‖² + αε‖x - x*‖²
inline double lyapunov(const Vector& v, const Vector& v_star, const Vector& x, const Vector& x_star, double alpha,
                       double epsilon) {
    const Vector dv = v - v_star;
    const Vector dx = x - x_star;
    return dot(dv, dv) + alpha * epsilon * dot(dx, dx);
}

// v with (I-Z)^{1/2} v = q, minimum norm.
inline Vector recover_dual_v(const Vector& q, const SqrtIMinusZ& root, std::size_t p, double tol = 1e-8) {
    const std::size_t n = root.n();
    if (q.size() != n * p) throw DimensionError("recover_dual_v: length mismatch");
    const Vector mean = consensus_projection(q, n, p);
    if (norm(mean) > tol * std::max(1.0, norm(q)))
        throw InconsistentState("recover_dual_v: q has a consensus component of norm " + format_real(norm(mean)));
    return root.apply_pinv(q, p);
}

inline Vector recover_dual_v(const Vector& q, const WeightMatrix& w, std::size_t p) {
    return recover_dual_v(q, SqrtIMinusZ(w), p);
}

// Helpers for Lyapunov values in run loops; built only when requested.
struct LyapunovContext {
    SqrtIMinusZ root;
    Vector v_star;
    Vector x_star;
};

inline std::optional<LyapunovContext> make_lyapunov_context(const ProblemInstance& prob, const WeightMatrix& w,
                                                            bool wanted) {
    if (!wanted) return std::nullopt;
    LyapunovContext ctx{SqrtIMinusZ(w), Vector(), prob.x_star_stacked()};
    ctx.v_star = compute_v_star(prob, ctx.root);
    return ctx;
}

// ---------------------------------------------------------------------------

inline RunTrace run_esom(const ProblemInstance& prob, const WeightMatrix& w, const AlgorithmParams& prm,
                         const RunOptions& opt) {
    prm.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = prob.p();
    RunTrace trace;
    trace.algorithm = "esom";
    trace.label = esom_label(prm.K);
    trace.params = {{"alpha", format_real(prm.alpha)}, {"epsilon", format_real(prm.epsilon)}, {"K", std::to_string(prm.K)}};

    const TraceMetrics metrics(prob, w);
    const auto lyap = make_lyapunov_context(prob, w, opt.lyapunov);
    Network net(w);
    std::vector<NodeState> states = initial_states(w, p, Vector(w.n() * p));

    auto record = [&](std::size_t iter) {
        const Vector x = stack_x(states);
        TraceRecord r = metrics.record(iter, net.log().rounds, x);
        Vector q;
        if (lyap || opt.snapshots) q = stack_q(states);
        if (lyap) r.lyapunov = lyapunov(lyap->root.apply_pinv(q, p), lyap->v_star, x, lyap->x_star, prm.alpha, prm.epsilon);
        trace.records.push_back(r);
        if (opt.snapshots) trace.snapshots.push_back(Snapshot{iter, x, q});
        check_divergence(trace, r, opt);
        return r.rel_err;
    };

    double err = record(0);
    for (std::size_t t = 0; t < opt.max_iters && !(opt.stop_tol > 0.0 && err <= opt.stop_tol); ++t) {
        esom_step(states, net, prob, prm);
        err = record(t + 1);
    }
    trace.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

} // namespace esom
