#pragma once

// PMM (centralized), EXTRA, DGD, NN-K and node-based decentralized ADMM.

#include <chrono>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "esom/esom.hpp"
#include "esom/graph.hpp"
#include "esom/numkit.hpp"
#include "esom/problems.hpp"
#include "esom/trace.hpp"

namespace esom {

struct BaselineParams {
    std::string algorithm = "esom";  // esom | pmm | extra | dgd | nn | dadmm
    double alpha = 0.1;              // dual stepsize / penalty coefficient
    double epsilon = 1.0;            // proximal coefficient (esom, pmm, extra)
    int K = 0;                       // series order (esom, nn)
    double stepsize = 1.0;           // γ for dgd and nn
    double penalty = 1.0;            // c for dadmm
    double inner_tol = 1e-12;
    int max_inner = 50;

    void validate() const {
        auto positive = [](double v, const char* what) {
            if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(what) + " must be positive");
        };
        if (algorithm == "esom" || algorithm == "pmm" || algorithm == "extra") {
            positive(alpha, "alpha");
            positive(epsilon, "epsilon");
        } else if (algorithm == "dgd") {
            if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
            positive(stepsize, "stepsize");
        } else if (algorithm == "nn") {
            positive(alpha, "alpha");
            positive(stepsize, "stepsize");
        } else if (algorithm == "dadmm") {
            positive(penalty, "penalty");
        } else {
            throw ConfigError("unknown algorithm '" + algorithm + "'");
        }
        if (K < 0) throw ConfigError("K must be non-negative");
        if (!(inner_tol > 0.0 && inner_tol <= 1e-4)) throw ConfigError("inner tolerance must be in (0, 1e-4]");
        if (max_inner < 1) throw ConfigError("max inner iterations must be >= 1");
    }
};

namespace detail {

inline RunTrace start_trace(std::string algorithm, std::string label, std::map<std::string, std::string> params) {
    RunTrace t;
    t.algorithm = std::move(algorithm);
    t.label = std::move(label);
    t.params = std::move(params);
    return t;
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline bool should_stop(const RunOptions& opt, double err) { return opt.stop_tol > 0.0 && err <= opt.stop_tol; }

} // namespace detail

// ---------------------------------------------------------------------------
// PMM (centralized: uses (I-Z)^{1/2} and v explicitly)

struct PmmState {
    Vector x;
    Vector v;
};

// x_{t+1} = argmin L(x, v_t) + (ε/2)||x - x_t||² by damped Newton, then
// v_{t+1} = v_t + α(I-Z)^{1/2} x_{t+1}.
inline PmmState pmm_step(const PmmState& s, const ProblemInstance& prob, const WeightMatrix& w, const SqrtIMinusZ& root,
                         double alpha, double epsilon, double inner_tol = 1e-12, int max_inner = 50) {
    const std::size_t p = prob.p(), np = s.x.size();
    const Vector sv = root.apply(s.v, p);
    const DenseMatrix IZ = DenseMatrix::identity(np) - kron_identity(w.matrix(), p);

    auto objective = [&](const Vector& x) {
        const Vector dx = x - s.x;
        return stacked_value(prob, x) + dot(sv, x) + 0.5 * alpha * dot(x, apply_I_minus_Z(w, x, p)) +
               0.5 * epsilon * dot(dx, dx);
    };
    auto gradient = [&](const Vector& x) {
        Vector g = stacked_gradient(prob, x) + sv + alpha * apply_I_minus_Z(w, x, p);
        g.axpy(epsilon, x - s.x);
        return g;
    };
    // Tolerance is relative to the size of the terms that cancel at the solution.
    const double scale = std::max(1.0, norm(stacked_gradient(prob, s.x)) + norm(sv) + epsilon * norm(s.x));

    Vector x = s.x;
    double f = objective(x);
    Vector g = gradient(x);
    double best = norm(g);
    int stalled = 0;
    for (int it = 0; it < max_inner && norm(g) > inner_tol * scale; ++it) {
        DenseMatrix h = stacked_hessian(prob, x) + alpha * IZ;
        h.add_to_diagonal(epsilon);
        const Vector d = -cholesky_solve(h, g);
        double step = 1.0;
        Vector trial = x + d;
        double ft = objective(trial);
        const double slope = dot(g, d);
        while (ft > f + 1e-4 * step * slope && step > 1e-10 && std::abs(ft - f) > 1e-14 * std::max(1.0, std::abs(f))) {
            step *= 0.5;
            trial = x + step * d;
            ft = objective(trial);
        }
        x = std::move(trial);
        f = ft;
        g = gradient(x);
        const double gn = norm(g);
        if (gn < 0.5 * best) {
            best = gn;
            stalled = 0;
        } else if (++stalled >= 3) {
            break;
        }
    }
    const double gn = norm(g);
    if (gn > 1e3 * inner_tol * scale) {
        std::ostringstream msg;
        msg << "pmm_step: inner Newton stopped at ||grad|| = " << gn << " (scale " << scale << "), ||x|| = " << norm(x)
            << ", x[0..]: ";
        for (std::size_t k = 0; k < std::min<std::size_t>(x.size(), 6); ++k) msg << x[k] << ' ';
        throw NumericalFailure(msg.str());
    }
    PmmState out{x, s.v};
    out.v.axpy(alpha, root.apply(x, p));
    return out;
}

inline RunTrace run_pmm(const ProblemInstance& prob, const WeightMatrix& w, double alpha, double epsilon,
                        const RunOptions& opt, double inner_tol = 1e-12, int max_inner = 50) {
    BaselineParams bp;
    bp.algorithm = "pmm";
    bp.alpha = alpha;
    bp.epsilon = epsilon;
    bp.inner_tol = inner_tol;
    bp.max_inner = max_inner;
    bp.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = prob.p(), np = prob.n() * p;
    RunTrace trace = detail::start_trace("pmm", "PMM", {{"alpha", format_real(alpha)}, {"epsilon", format_real(epsilon)}});
    const TraceMetrics metrics(prob, w);
    const SqrtIMinusZ root(w);
    std::optional<Vector> v_star;
    if (opt.lyapunov) v_star = compute_v_star(prob, root);
    const Vector xs = prob.x_star_stacked();

    PmmState s{Vector(np), Vector(np)};
    auto record = [&](std::size_t iter) {
        TraceRecord r = metrics.record(iter, 0, s.x);  // centralized: no network rounds
        if (v_star) r.lyapunov = lyapunov(s.v, *v_star, s.x, xs, alpha, epsilon);
        trace.records.push_back(r);
        if (opt.snapshots) trace.snapshots.push_back(Snapshot{iter, s.x, s.v});
        check_divergence(trace, r, opt);
        return r.rel_err;
    };
    double err = record(0);
    for (std::size_t t = 0; t < opt.max_iters && !detail::should_stop(opt, err); ++t) {
        s = pmm_step(s, prob, w, root, alpha, epsilon, inner_tol, max_inner);
        err = record(t + 1);
    }
    trace.wall_seconds = detail::seconds_since(start);
    return trace;
}

// ---------------------------------------------------------------------------
// EXTRA in the primal-dual parameterization:
//   x_{t+1} = x_t - (1/ε)[∇f(x_t) + α(I-Z)^{1/2} v_t + α(I-Z) x_t],  v_{t+1} = v_t + α(I-Z)^{1/2} x_{t+1}
// which, after eliminating v, is the two-term recursion used by run_extra.

// x_{t+1} from (x_t, x_{t-1}) without any dual variable.
inline Vector extra_recursion_step(const Vector& x, const Vector& x_prev, const Vector& grad, const Vector& grad_prev,
                                   const WeightMatrix& w, std::size_t p, double alpha, double epsilon) {
    const Vector lx = apply_I_minus_Z(w, x, p);
    const Vector lx_prev = apply_I_minus_Z(w, x_prev, p);
    Vector next = 2.0 * x - x_prev;
    next.axpy(-(alpha + alpha * alpha) / epsilon, lx);
    next.axpy(alpha / epsilon, lx_prev);
    next.axpy(-1.0 / epsilon, grad - grad_prev);
    return next;
}

inline RunTrace run_extra(const ProblemInstance& prob, const WeightMatrix& w, double alpha, double epsilon,
                          const RunOptions& opt) {
    BaselineParams bp;
    bp.algorithm = "extra";
    bp.alpha = alpha;
    bp.epsilon = epsilon;
    bp.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = prob.p(), np = prob.n() * p;
    RunTrace trace =
        detail::start_trace("extra", "EXTRA", {{"alpha", format_real(alpha)}, {"epsilon", format_real(epsilon)}});
    const TraceMetrics metrics(prob, w);

    Vector x(np);
    std::uint64_t comms = 0;
    auto record = [&](std::size_t iter) {
        const TraceRecord r = metrics.record(iter, comms, x);
        trace.records.push_back(r);
        if (opt.snapshots) trace.snapshots.push_back(Snapshot{iter, x, Vector()});
        check_divergence(trace, r, opt);
        return r.rel_err;
    };
    double err = record(0);
    if (opt.max_iters == 0 || detail::should_stop(opt, err)) {
        trace.wall_seconds = detail::seconds_since(start);
        return trace;
    }
    // first step with v_0 = 0
    Vector grad = stacked_gradient(prob, x);
    Vector x_prev = x;
    Vector grad_prev = grad;
    x.axpy(-1.0 / epsilon, grad + alpha * apply_I_minus_Z(w, x, p));
    comms += 1;
    err = record(1);
    for (std::size_t t = 1; t < opt.max_iters && !detail::should_stop(opt, err); ++t) {
        grad = stacked_gradient(prob, x);
        Vector next = extra_recursion_step(x, x_prev, grad, grad_prev, w, p, alpha, epsilon);
        x_prev = std::move(x);
        grad_prev = std::move(grad);
        x = std::move(next);
        comms += 1;
        err = record(t + 1);
    }
    trace.wall_seconds = detail::seconds_since(start);
    return trace;
}

// The same method run through the explicit dual variable; returns x_0, ..., x_T.
inline std::vector<Vector> extra_dual_form_trajectory(const ProblemInstance& prob, const WeightMatrix& w, double alpha,
                                                      double epsilon, std::size_t iters) {
    const std::size_t p = prob.p(), np = prob.n() * p;
    const SqrtIMinusZ root(w);
    Vector x(np), v(np);
    std::vector<Vector> out{x};
    for (std::size_t t = 0; t < iters; ++t) {
        Vector step = stacked_gradient(prob, x) + alpha * root.apply(v, p) + alpha * apply_I_minus_Z(w, x, p);
        x.axpy(-1.0 / epsilon, step);
        v.axpy(alpha, root.apply(x, p));
        out.push_back(x);
    }
    return out;
}

// ---------------------------------------------------------------------------
// DGD on the penalized objective f(x) + (α/2) xᵀ(I-Z)x

inline RunTrace run_dgd(const ProblemInstance& prob, const WeightMatrix& w, double alpha, double stepsize,
                        const RunOptions& opt) {
    BaselineParams bp;
    bp.algorithm = "dgd";
    bp.alpha = alpha;
    bp.stepsize = stepsize;
    bp.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = prob.p(), np = prob.n() * p;
    RunTrace trace = detail::start_trace("dgd", "DGD", {{"alpha", format_real(alpha)}, {"stepsize", format_real(stepsize)}});
    const TraceMetrics metrics(prob, w);
    Vector x(np);
    std::uint64_t comms = 0;
    auto record = [&](std::size_t iter) {
        const TraceRecord r = metrics.record(iter, comms, x);
        trace.records.push_back(r);
        if (opt.snapshots) trace.snapshots.push_back(Snapshot{iter, x, Vector()});
        check_divergence(trace, r, opt);
        return r.rel_err;
    };
    double err = record(0);
    for (std::size_t t = 0; t < opt.max_iters && !detail::should_stop(opt, err); ++t) {
        Vector g = stacked_gradient(prob, x);
        if (alpha != 0.0) g.axpy(alpha, apply_I_minus_Z(w, x, p));
        x.axpy(-stepsize, g);
        comms += 1;
        err = record(t + 1);
    }
    trace.wall_seconds = detail::seconds_since(start);
    return trace;
}

// Minimizer of the penalized objective for quadratic f: (∇²f + α(I-Z)) x̂ = ∇²f x - ∇f(x)
// evaluated at x = 0.
inline Vector penalized_solution_quadratic(const ProblemInstance& prob, const WeightMatrix& w, double alpha) {
    if (!prob.quadratic()) throw ParameterError("penalized_solution_quadratic: objective is not quadratic");
    const std::size_t p = prob.p(), np = prob.n() * p;
    const Vector zero(np);
    DenseMatrix h = stacked_hessian(prob, zero);
    if (alpha != 0.0) h += alpha * (DenseMatrix::identity(np) - kron_identity(w.matrix(), p));
    return cholesky_solve(h, -stacked_gradient(prob, zero));
}

// ---------------------------------------------------------------------------
// Network Newton-K: truncated series on ∇²f + α(I-Z), step x ← x + γ d

inline MessageLog nn_step(std::vector<NodeState>& states, Network& net, const ProblemInstance& prob, double alpha,
                          double stepsize, int K) {
    return detail::series_iteration(states, net, prob, SeriesStep{alpha, 0.0, K, stepsize, false});
}

// Dense NN direction -Ĥ⁻¹(K) ĝ with ĝ = ∇f(x) + α(I-Z)x.
inline Vector nn_direction_dense(const ProblemInstance& prob, const WeightMatrix& w, const Vector& x, double alpha,
                                 int K) {
    const DenseEsomMatrices m = dense_esom_matrices(prob, w, x, alpha, 0.0, K);
    const Vector g = stacked_gradient(prob, x) + alpha * apply_I_minus_Z(w, x, prob.p());
    return -(m.H_tilde_inv * g);
}

inline std::string nn_label(int K) { return "NN-" + std::to_string(K); }

inline RunTrace run_nn(const ProblemInstance& prob, const WeightMatrix& w, double alpha, double stepsize, int K,
                       const RunOptions& opt) {
    BaselineParams bp;
    bp.algorithm = "nn";
    bp.alpha = alpha;
    bp.stepsize = stepsize;
    bp.K = K;
    bp.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t p = prob.p();
    RunTrace trace = detail::start_trace(
        "nn", nn_label(K), {{"alpha", format_real(alpha)}, {"stepsize", format_real(stepsize)}, {"K", std::to_string(K)}});
    const TraceMetrics metrics(prob, w);
    Network net(w);
    std::vector<NodeState> states = initial_states(w, p, Vector(w.n() * p));
    auto record = [&](std::size_t iter) {
        const Vector x = stack_x(states);
        const TraceRecord r = metrics.record(iter, net.log().rounds, x);
        trace.records.push_back(r);
        if (opt.snapshots) trace.snapshots.push_back(Snapshot{iter, x, Vector()});
        check_divergence(trace, r, opt);
        return r.rel_err;
    };
    double err = record(0);
    for (std::size_t t = 0; t < opt.max_iters && !detail::should_stop(opt, err); ++t) {
        nn_step(states, net, prob, alpha, stepsize, K);
        err = record(t + 1);
    }
    trace.wall_seconds = detail::seconds_since(start);
    return trace;
}

// ---------------------------------------------------------------------------
// Decentralized ADMM, node-based form:
//   x_i ← argmin f_i(x) + φ_iᵀx + c d_i ||x||² - c (d_i x_i + Σ_{j∈N_i} x_j)ᵀ x
//   φ_i ← φ_i + c (d_i x_i - Σ_{j∈N_i} x_j)

// argmin f(x) + bᵀx + (s/2)||x||² by damped Newton from x0.
inline Vector minimize_local(const ObjectiveOracle& f, const Vector& b, double s, Vector x, double tol, int max_iters) {
    auto value = [&](const Vector& z) { return f.value(z) + dot(b, z) + 0.5 * s * dot(z, z); };
    auto grad = [&](const Vector& z) {
        Vector g = f.gradient(z) + b;
        g.axpy(s, z);
        return g;
    };
    double fx = value(x);
    Vector g = grad(x);
    const double scale = std::max(1.0, norm(b) + norm(f.gradient(x)));
    for (int it = 0; it < max_iters; ++it) {
        if (norm(g) <= tol * scale) return x;
        DenseMatrix h = f.hessian(x);
        h.add_to_diagonal(s);
        const Vector d = -cholesky_solve(h, g);
        double step = 1.0;
        Vector trial = x + d;
        double ft = value(trial);
        const double slope = dot(g, d);
        while (ft > fx + 1e-4 * step * slope && step > 1e-10 && std::abs(ft - fx) > 1e-14 * std::max(1.0, std::abs(fx))) {
            step *= 0.5;
            trial = x + step * d;
            ft = value(trial);
        }
        x = std::move(trial);
        fx = ft;
        g = grad(x);
        if (f.quadratic() && step == 1.0) {
            // exact after one full step; one more pass only polishes rounding
            if (norm(g) > tol * scale) {
                h = f.hessian(x);
                h.add_to_diagonal(s);
                x -= cholesky_solve(h, g);
            }
            return x;
        }
    }
    if (norm(g) <= 1e3 * tol * scale) return x;
    throw NumericalFailure("minimize_local: Newton did not converge, ||grad|| = " + format_real(norm(g)));
}

inline RunTrace run_dadmm(const ProblemInstance& prob, const WeightMatrix& w, double penalty, const RunOptions& opt,
                          double inner_tol = 1e-10, int max_inner = 50) {
    BaselineParams bp;
    bp.algorithm = "dadmm";
    bp.penalty = penalty;
    bp.inner_tol = std::min(inner_tol, 1e-4);
    bp.max_inner = max_inner;
    bp.validate();
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = prob.n(), p = prob.p();
    RunTrace trace = detail::start_trace("dadmm", "DADMM", {{"penalty", format_real(penalty)}});
    const TraceMetrics metrics(prob, w);
    const Graph& g = w.graph();

    std::vector<Vector> x(n, Vector(p)), phi(n, Vector(p));
    std::uint64_t comms = 0;
    auto stacked = [&] {
        Vector out(n * p);
        for (std::size_t i = 0; i < n; ++i) out.set_segment(i * p, x[i]);
        return out;
    };
    auto record = [&](std::size_t iter) {
        const Vector xs = stacked();
        const TraceRecord r = metrics.record(iter, comms, xs);
        trace.records.push_back(r);
        if (opt.snapshots) {
            Vector ph(n * p);
            for (std::size_t i = 0; i < n; ++i) ph.set_segment(i * p, phi[i]);
            trace.snapshots.push_back(Snapshot{iter, xs, ph});
        }
        check_divergence(trace, r, opt);
        return r.rel_err;
    };
    double err = record(0);
    for (std::size_t t = 0; t < opt.max_iters && !detail::should_stop(opt, err); ++t) {
        std::vector<Vector> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double di = static_cast<double>(g.degree(i));
            Vector anchor = di * x[i];
            for (std::size_t j : g.neighbors(i)) anchor += x[j];
            Vector b = phi[i];
            b.axpy(-penalty, anchor);
            next[i] = minimize_local(prob.oracle(i), b, 2.0 * penalty * di, x[i], bp.inner_tol, max_inner);
        }
        x = std::move(next);
        comms += 1;  // exchange of the new local iterates
        for (std::size_t i = 0; i < n; ++i) {
            const double di = static_cast<double>(g.degree(i));
            Vector r = di * x[i];
            for (std::size_t j : g.neighbors(i)) r -= x[j];
            phi[i].axpy(penalty, r);
        }
        err = record(t + 1);
    }
    trace.wall_seconds = detail::seconds_since(start);
    return trace;
}

// ---------------------------------------------------------------------------

// Runs any registered method with the trace label derived from its parameters.
inline RunTrace run_method(const ProblemInstance& prob, const WeightMatrix& w, const BaselineParams& bp,
                           const RunOptions& opt) {
    bp.validate();
    if (bp.algorithm == "esom") return run_esom(prob, w, AlgorithmParams{bp.alpha, bp.epsilon, bp.K}, opt);
    if (bp.algorithm == "pmm") return run_pmm(prob, w, bp.alpha, bp.epsilon, opt, bp.inner_tol, bp.max_inner);
    if (bp.algorithm == "extra") return run_extra(prob, w, bp.alpha, bp.epsilon, opt);
    if (bp.algorithm == "dgd") return run_dgd(prob, w, bp.alpha, bp.stepsize, opt);
    if (bp.algorithm == "nn") return run_nn(prob, w, bp.alpha, bp.stepsize, bp.K, opt);
    if (bp.algorithm == "dadmm") return run_dadmm(prob, w, bp.penalty, opt, std::max(bp.inner_tol, 1e-10), bp.max_inner);
    throw ConfigError("unknown algorithm '" + bp.algorithm + "'");
}

} // namespace esom
