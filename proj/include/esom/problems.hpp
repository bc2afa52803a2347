#pragma once

// Per-node objectives for the two experiment families, their curvature constants and the
// centralized reference solution.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "esom/format.hpp"
#include "esom/graph.hpp"
#include "esom/numkit.hpp"

namespace esom {

class ObjectiveOracle {
public:
    virtual ~ObjectiveOracle() = default;
    virtual std::size_t dim() const = 0;
    virtual double value(const Vector& x) const = 0;
    virtual Vector gradient(const Vector& x) const = 0;
    virtual DenseMatrix hessian(const Vector& x) const = 0;
    // True when the Hessian does not depend on x.
    virtual bool quadratic() const { return false; }
};

// f(x) = ||A x - y||²
class LeastSquaresOracle final : public ObjectiveOracle {
public:
    LeastSquaresOracle(DenseMatrix a, Vector y) : a_(std::move(a)), y_(std::move(y)) {
        if (a_.rows() != y_.size()) throw DimensionError("LeastSquaresOracle: rows(A) != len(y)");
        hessian_ = 2.0 * (a_.transpose() * a_);
    }
    std::size_t dim() const override { return a_.cols(); }
    double value(const Vector& x) const override {
        const Vector r = a_ * x - y_;
        return dot(r, r);
    }
    Vector gradient(const Vector& x) const override { return 2.0 * (a_.transpose() * (a_ * x - y_)); }
    DenseMatrix hessian(const Vector&) const override { return hessian_; }
    bool quadratic() const override { return true; }

    const DenseMatrix& design() const noexcept { return a_; }
    const Vector& response() const noexcept { return y_; }

private:
    DenseMatrix a_;
    Vector y_;
    DenseMatrix hessian_;
};

// f(x) = (λ/2n)||x||² + Σ_j ln(1 + exp(-y_j s_jᵀx)); `reg` is λ/n.
class LogisticOracle final : public ObjectiveOracle {
public:
    LogisticOracle(DenseMatrix samples, Vector labels, double reg)
        : s_(std::move(samples)), y_(std::move(labels)), reg_(reg) {
        if (s_.rows() != y_.size()) throw DimensionError("LogisticOracle: sample/label count mismatch");
        for (double l : y_)
            if (l != 1.0 && l != -1.0) throw ParameterError("LogisticOracle: labels must be -1 or +1");
        if (!(reg_ > 0.0)) throw ParameterError("LogisticOracle: regularizer must be positive");
    }
    std::size_t dim() const override { return s_.cols(); }

    double value(const Vector& x) const override {
        double f = 0.5 * reg_ * dot(x, x);
        const Vector z = s_ * x;
        for (std::size_t j = 0; j < z.size(); ++j) f += softplus(-y_[j] * z[j]);
        return f;
    }
    Vector gradient(const Vector& x) const override {
        Vector g = reg_ * x;
        const Vector z = s_ * x;
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double coef = -y_[j] * sigmoid(-y_[j] * z[j]);
            for (std::size_t r = 0; r < dim(); ++r) g[r] += coef * s_(j, r);
        }
        return g;
    }
    DenseMatrix hessian(const Vector& x) const override {
        DenseMatrix h = DenseMatrix::identity(dim());
        h *= reg_;
        const Vector z = s_ * x;
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double w = sigmoid(z[j]) * sigmoid(-z[j]);
            for (std::size_t a = 0; a < dim(); ++a)
                for (std::size_t b = 0; b < dim(); ++b) h(a, b) += w * s_(j, a) * s_(j, b);
        }
        return h;
    }

    const DenseMatrix& samples() const noexcept { return s_; }
    const Vector& labels() const noexcept { return y_; }
    double reg() const noexcept { return reg_; }

    static double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }
    static double sigmoid(double t) {
        if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
        const double e = std::exp(t);
        return e / (1.0 + e);
    }

private:
    DenseMatrix s_;
    Vector y_;
    double reg_;
};

struct LeastSquaresData {
    std::vector<DenseMatrix> designs;  // M_i, m_i × p
    std::vector<Vector> responses;     // y_i
};

struct LogisticData {
    std::vector<DenseMatrix> samples;  // row j of node i is s_ij
    std::vector<Vector> labels;
    double lambda = 1.0;
};

enum class Family { least_squares, logistic };

inline std::string family_name(Family f) { return f == Family::least_squares ? "least_squares" : "logistic"; }
inline Family parse_family(const std::string& s) {
    if (s == "least_squares" || s == "ls") return Family::least_squares;
    if (s == "logistic") return Family::logistic;
    throw ConfigError("unknown problem family '" + s + "'");
}

struct ProblemConstants {
    double m = 0.0;  // strong convexity of every f_i
    double M = 0.0;  // smoothness of every f_i
    double L = 0.0;  // Hessian Lipschitz constant
};

class ProblemInstance {
public:
    ProblemInstance() = default;

    std::size_t n() const noexcept { return oracles_.size(); }
    std::size_t p() const noexcept { return p_; }
    Family family() const noexcept { return family_; }
    const ObjectiveOracle& oracle(std::size_t i) const { return *oracles_.at(i); }
    const ProblemConstants& constants() const noexcept { return constants_; }
    const Vector& x_star() const noexcept { return x_star_; }
    // x* copied into every node block.
    Vector x_star_stacked() const {
        Vector out(n() * p());
        for (std::size_t i = 0; i < n(); ++i) out.set_segment(i * p(), x_star_);
        return out;
    }
    bool quadratic() const {
        for (const auto& o : oracles_)
            if (!o->quadratic()) return false;
        return true;
    }

    const std::variant<LeastSquaresData, LogisticData>& data() const noexcept { return data_; }
    // Free-form generation parameters (seed, κ, distance, ...), kept for logging.
    const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }
    std::map<std::string, std::string>& metadata() noexcept { return metadata_; }

    void set_x_star(Vector x) {
        if (x.size() != p_) throw DimensionError("set_x_star: expected length p");
        x_star_ = std::move(x);
    }
    void set_constants(ProblemConstants c) { constants_ = c; }

    static ProblemInstance from_least_squares(LeastSquaresData d) {
        ProblemInstance out;
        out.family_ = Family::least_squares;
        if (d.designs.empty() || d.designs.size() != d.responses.size())
            throw DimensionError("least squares: need one (M_i, y_i) pair per node");
        out.p_ = d.designs.front().cols();
        for (std::size_t i = 0; i < d.designs.size(); ++i) {
            if (d.designs[i].cols() != out.p_) throw DimensionError("least squares: nodes disagree on p");
            out.oracles_.push_back(std::make_shared<LeastSquaresOracle>(d.designs[i], d.responses[i]));
        }
        out.data_ = std::move(d);
        return out;
    }

    static ProblemInstance from_logistic(LogisticData d) {
        ProblemInstance out;
        out.family_ = Family::logistic;
        if (d.samples.empty() || d.samples.size() != d.labels.size())
            throw DimensionError("logistic: need one sample block per node");
        if (!(d.lambda > 0.0)) throw ParameterError("logistic: lambda must be positive");
        out.p_ = d.samples.front().cols();
        const double reg = d.lambda / static_cast<double>(d.samples.size());
        for (std::size_t i = 0; i < d.samples.size(); ++i) {
            if (d.samples[i].cols() != out.p_) throw DimensionError("logistic: nodes disagree on p");
            out.oracles_.push_back(std::make_shared<LogisticOracle>(d.samples[i], d.labels[i], reg));
        }
        out.data_ = std::move(d);
        return out;
    }

private:
    Family family_ = Family::least_squares;
    std::size_t p_ = 0;
    std::vector<std::shared_ptr<const ObjectiveOracle>> oracles_;
    std::variant<LeastSquaresData, LogisticData> data_;
    ProblemConstants constants_;
    Vector x_star_;
    std::map<std::string, std::string> metadata_;
};

// ---------------------------------------------------------------------------
// Stacked evaluation helpers; x has n blocks of size p.

inline void check_problem_stacked(const ProblemInstance& prob, const Vector& x) {
    if (x.size() != prob.n() * prob.p())
        throw DimensionError("stacked vector length " + std::to_string(x.size()) + " != n*p");
}

inline double stacked_value(const ProblemInstance& prob, const Vector& x) {
    check_problem_stacked(prob, x);
    double f = 0.0;
    for (std::size_t i = 0; i < prob.n(); ++i) f += prob.oracle(i).value(x.segment(i * prob.p(), prob.p()));
    return f;
}

inline Vector stacked_gradient(const ProblemInstance& prob, const Vector& x) {
    check_problem_stacked(prob, x);
    const std::size_t p = prob.p();
    Vector g(x.size());
    for (std::size_t i = 0; i < prob.n(); ++i) g.set_segment(i * p, prob.oracle(i).gradient(x.segment(i * p, p)));
    return g;
}

inline std::vector<DenseMatrix> hessian_blocks(const ProblemInstance& prob, const Vector& x) {
    check_problem_stacked(prob, x);
    const std::size_t p = prob.p();
    std::vector<DenseMatrix> out;
    out.reserve(prob.n());
    for (std::size_t i = 0; i < prob.n(); ++i) out.push_back(prob.oracle(i).hessian(x.segment(i * p, p)));
    return out;
}

// Block-diagonal ∇²f(x), np × np.
inline DenseMatrix stacked_hessian(const ProblemInstance& prob, const Vector& x) {
    const std::size_t p = prob.p();
    const auto blocks = hessian_blocks(prob, x);
    DenseMatrix h(prob.n() * p, prob.n() * p);
    for (std::size_t i = 0; i < blocks.size(); ++i) h.set_block(i * p, i * p, blocks[i]);
    return h;
}

// Σ_i ∇f_i(x) for a common x.
inline Vector global_gradient(const ProblemInstance& prob, const Vector& x) {
    Vector g(prob.p());
    for (std::size_t i = 0; i < prob.n(); ++i) g += prob.oracle(i).gradient(x);
    return g;
}
inline DenseMatrix global_hessian(const ProblemInstance& prob, const Vector& x) {
    DenseMatrix h(prob.p(), prob.p());
    for (std::size_t i = 0; i < prob.n(); ++i) h += prob.oracle(i).hessian(x);
    return h;
}
inline double global_value(const ProblemInstance& prob, const Vector& x) {
    double f = 0.0;
    for (std::size_t i = 0; i < prob.n(); ++i) f += prob.oracle(i).value(x);
    return f;
}

// ---------------------------------------------------------------------------
// Reference solvers

struct NewtonOptions {
    double tol = 1e-12;  // on ||Σ∇f_i|| / max(1, ||x||)
    int max_iters = 200;
};

// Damped Newton with Armijo backtracking on Σ_i f_i.
inline Vector newton_reference(const ProblemInstance& prob, const NewtonOptions& opt = {}) {
    Vector x(prob.p());
    double f = global_value(prob, x);
    double gnorm = 0.0;
    for (int it = 0; it < opt.max_iters; ++it) {
        const Vector g = global_gradient(prob, x);
        gnorm = norm(g);
        if (gnorm <= opt.tol * std::max(1.0, norm(x))) return x;
        const Vector d = -cholesky_solve(global_hessian(prob, x), g);
        const double slope = dot(g, d);
        double step = 1.0;
        Vector trial = x + d;
        double ft = global_value(prob, trial);
        // Near the solution the decrease is below rounding and the full step is taken.
        while (ft > f + 1e-4 * step * slope && step > 1e-10 && std::abs(ft - f) > 1e-14 * std::max(1.0, std::abs(f))) {
            step *= 0.5;
            trial = x + step * d;
            ft = global_value(prob, trial);
        }
        x = std::move(trial);
        f = ft;
    }
    const Vector g = global_gradient(prob, x);
    if (norm(g) <= opt.tol * std::max(1.0, norm(x))) return x;
    std::ostringstream msg;
    msg << "newton_reference: no convergence after " << opt.max_iters << " iterations, ||grad|| = " << norm(g)
        << ", ||x|| = " << norm(x);
    throw NumericalFailure(msg.str());
}

// Normal equations Σ 2MᵢᵀMᵢ x = Σ 2Mᵢᵀyᵢ.
inline Vector least_squares_closed_form(const LeastSquaresData& d) {
    const std::size_t p = d.designs.front().cols();
    DenseMatrix h(p, p);
    Vector b(p);
    for (std::size_t i = 0; i < d.designs.size(); ++i) {
        const DenseMatrix at = d.designs[i].transpose();
        h += at * d.designs[i];
        b += at * d.responses[i];
    }
    return cholesky_solve(h, b);
}

inline Vector solve_reference(const ProblemInstance& prob) {
    if (prob.family() == Family::least_squares) {
        Vector x = least_squares_closed_form(std::get<LeastSquaresData>(prob.data()));
        // one refinement step against the oracle gradients
        const Vector g = global_gradient(prob, x);
        x -= cholesky_solve(global_hessian(prob, x), g);
        return x;
    }
    return newton_reference(prob);
}

// ---------------------------------------------------------------------------
// Curvature constants

inline ProblemConstants least_squares_constants(const LeastSquaresData& d) {
    ProblemConstants c{INFINITY, 0.0, 0.0};
    for (const DenseMatrix& a : d.designs) {
        const SymEig e = sym_eig(2.0 * (a.transpose() * a));
        c.m = std::min(c.m, std::max(0.0, e.values[0]));
        c.M = std::max(c.M, e.values[e.values.size() - 1]);
    }
    return c;
}

inline ProblemConstants logistic_constants(const LogisticData& d) {
    const double reg = d.lambda / static_cast<double>(d.samples.size());
    ProblemConstants c{reg, reg, 0.0};
    for (const DenseMatrix& s : d.samples) {
        const SymEig e = sym_eig(s.transpose() * s);
        c.M = std::max(c.M, reg + 0.25 * e.values[e.values.size() - 1]);
        double cubes = 0.0;
        for (std::size_t j = 0; j < s.rows(); ++j) cubes += std::pow(norm(s.row(j)), 3);
        c.L = std::max(c.L, cubes / (6.0 * std::sqrt(3.0)));
    }
    return c;
}

inline ProblemInstance finalize_instance(ProblemInstance prob) {
    prob.set_constants(prob.family() == Family::least_squares
                           ? least_squares_constants(std::get<LeastSquaresData>(prob.data()))
                           : logistic_constants(std::get<LogisticData>(prob.data())));
    prob.set_x_star(solve_reference(prob));
    return prob;
}

inline ProblemInstance make_least_squares_from_data(LeastSquaresData d) {
    return finalize_instance(ProblemInstance::from_least_squares(std::move(d)));
}
inline ProblemInstance make_logistic_from_data(LogisticData d) {
    return finalize_instance(ProblemInstance::from_logistic(std::move(d)));
}

// ---------------------------------------------------------------------------
// Generators

struct LeastSquaresOptions {
    // When positive, singular values are rescaled so that λ_max(2 Σ MᵢᵀMᵢ) equals this
    // value. Zero keeps the σ_max of the raw standard-normal stack.
    double hessian_scale = 0.0;
    double noise_std = 1.0;
    int max_attempts = 10;
};

inline ProblemInstance make_least_squares(std::size_t n, std::size_t p, std::size_t m_i, double target_condition,
                                          double target_distance, std::uint64_t seed,
                                          const LeastSquaresOptions& opt = {}) {
    if (n == 0 || p == 0 || m_i == 0) throw ParameterError("make_least_squares: n, p and m_i must be positive");
    if (n * m_i < p) throw ParameterError("make_least_squares: n*m_i < p, stacked matrix cannot have full column rank");
    if (!(target_condition >= 1.0)) throw ParameterError("make_least_squares: condition must be >= 1");
    if (p == 1 && target_condition != 1.0) throw ParameterError("make_least_squares: p = 1 forces condition 1");
    if (!(target_distance > 0.0)) throw ParameterError("make_least_squares: distance must be positive");
    if (opt.hessian_scale < 0.0) throw ParameterError("make_least_squares: hessian_scale must be >= 0");

    for (int attempt = 0; attempt < opt.max_attempts; ++attempt) {
        Rng rng = Rng(seed, 0x6c73ULL).split(static_cast<std::uint64_t>(attempt));
        const std::size_t rows = n * m_i;
        const DenseMatrix a = randn_matrix(rng, rows, p);
        const SymEig gram = sym_eig(a.transpose() * a);
        const double smin = std::sqrt(std::max(gram.values[0], 0.0));
        const double smax = std::sqrt(std::max(gram.values[p - 1], 0.0));
        if (!(smin > 1e-8 * smax)) continue;

        // A' = U Σ' Vᵀ = A · V diag(σ'/σ) Vᵀ
        const double lo = smax / std::sqrt(target_condition);
        double scale = 1.0;
        if (opt.hessian_scale > 0.0) scale = std::sqrt(opt.hessian_scale / (2.0 * smax * smax));
        const double spread = smax - smin;
        const DenseMatrix remap = sym_matrix_function(gram, [&](double l) {
            const double s = std::sqrt(std::max(l, 0.0));
            const double t = spread > 0.0 ? lo + (s - smin) * (smax - lo) / spread : smax;
            return scale * t / s;
        });
        const DenseMatrix stacked = a * remap;

        const Vector x_tilde = randn(rng, p);
        Vector y = stacked * x_tilde;
        if (opt.noise_std > 0.0) y.axpy(opt.noise_std, randn(rng, rows));

        LeastSquaresData d;
        for (std::size_t i = 0; i < n; ++i) {
            d.designs.push_back(stacked.block(i * m_i, 0, m_i, p));
            d.responses.push_back(y.segment(i * m_i, m_i));
        }
        const Vector xs = least_squares_closed_form(d);
        const double xn = norm(xs);
        if (!(xn > 0.0)) continue;
        const double ys = target_distance / xn;
        for (Vector& r : d.responses) r *= ys;

        ProblemInstance prob = make_least_squares_from_data(std::move(d));
        auto& meta = prob.metadata();
        meta["generator"] = "least_squares";
        meta["seed"] = std::to_string(seed);
        meta["attempt"] = std::to_string(attempt);
        meta["m_i"] = std::to_string(m_i);
        meta["condition"] = format_real(target_condition);
        meta["distance"] = format_real(target_distance);
        meta["hessian_scale"] = format_real(opt.hessian_scale);
        meta["noise_std"] = format_real(opt.noise_std);
        return prob;
    }
    throw NumericalFailure("make_least_squares: stacked matrix rank deficient after " +
                           std::to_string(opt.max_attempts) + " attempts");
}

struct LogisticOptions {
    double feature_scale = 1.0;
    // Labels are sign(sᵀx̃ + label_noise·ν) for a hidden x̃.
    double label_noise = 0.5;
};

inline ProblemInstance make_logistic(std::size_t n, std::size_t p, std::size_t m_i, double lambda, std::uint64_t seed,
                                     const LogisticOptions& opt = {}) {
    if (n == 0 || p == 0 || m_i == 0) throw ParameterError("make_logistic: n, p and m_i must be positive");
    if (!(lambda > 0.0)) throw ParameterError("make_logistic: lambda must be positive");
    Rng rng(seed, 0x6c6f67ULL);
    const Vector x_tilde = randn(rng, p);
    LogisticData d;
    d.lambda = lambda;
    for (std::size_t i = 0; i < n; ++i) {
        DenseMatrix s = randn_matrix(rng, m_i, p);
        s *= opt.feature_scale;
        Vector labels(m_i);
        for (std::size_t j = 0; j < m_i; ++j) {
            const double score = dot(s.row(j), x_tilde) + opt.label_noise * rng.normal();
            labels[j] = score >= 0.0 ? 1.0 : -1.0;
        }
        d.samples.push_back(std::move(s));
        d.labels.push_back(std::move(labels));
    }
    ProblemInstance prob = make_logistic_from_data(std::move(d));
    auto& meta = prob.metadata();
    meta["generator"] = "logistic";
    meta["seed"] = std::to_string(seed);
    meta["m_i"] = std::to_string(m_i);
    meta["lambda"] = format_real(lambda);
    meta["feature_scale"] = format_real(opt.feature_scale);
    meta["label_noise"] = format_real(opt.label_noise);
    return prob;
}

// ---------------------------------------------------------------------------
// Optimal dual from the KKT condition ∇f(x*) + (I-Z)^{1/2} v* = 0

inline Vector compute_v_star(const ProblemInstance& prob, const SqrtIMinusZ& root, double tol = 1e-8) {
    if (root.n() != prob.n()) throw DimensionError("compute_v_star: graph and problem disagree on n");
    const std::size_t p = prob.p();
    const Vector g = stacked_gradient(prob, prob.x_star_stacked());
    Vector v = -root.apply_pinv(g, p);
    const double residual = norm(g + root.apply(v, p));
    if (!(residual <= tol * std::max(1.0, norm(g))))
        throw InconsistentState("compute_v_star: KKT residual " + format_real(residual) + " exceeds tolerance");
    return v;
}

inline Vector compute_v_star(const ProblemInstance& prob, const WeightMatrix& w) {
    return compute_v_star(prob, SqrtIMinusZ(w));
}

// ---------------------------------------------------------------------------
// Text serialization

inline void write_problem(std::ostream& os, const ProblemInstance& prob) {
    os << "esom-problem 1\n";
    os << "family " << family_name(prob.family()) << '\n';
    os << "n " << prob.n() << '\n';
    os << "p " << prob.p() << '\n';
    for (const auto& [k, v] : prob.metadata()) os << "meta " << k << ' ' << v << '\n';
    const auto& c = prob.constants();
    os << "constants " << format_real(c.m) << ' ' << format_real(c.M) << ' ' << format_real(c.L) << '\n';
    os << "x_star";
    for (double v : prob.x_star()) os << ' ' << format_real(v);
    os << '\n';
    auto write_rows = [&](const DenseMatrix& a, const Vector& last) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            for (std::size_t j = 0; j < a.cols(); ++j) os << format_real(a(r, j)) << ' ';
            os << format_real(last[r]) << '\n';
        }
    };
    if (prob.family() == Family::least_squares) {
        const auto& d = std::get<LeastSquaresData>(prob.data());
        for (std::size_t i = 0; i < d.designs.size(); ++i) {
            os << "node " << i << ' ' << d.designs[i].rows() << '\n';
            write_rows(d.designs[i], d.responses[i]);
        }
    } else {
        const auto& d = std::get<LogisticData>(prob.data());
        os << "lambda " << format_real(d.lambda) << '\n';
        for (std::size_t i = 0; i < d.samples.size(); ++i) {
            os << "node " << i << ' ' << d.samples[i].rows() << '\n';
            write_rows(d.samples[i], d.labels[i]);
        }
    }
    os << "end\n";
}

inline ProblemInstance read_problem(std::istream& is) {
    std::string tok;
    auto expect = [&](const std::string& want) {
        if (!(is >> tok) || tok != want) throw IoError("problem file: expected '" + want + "', got '" + tok + "'");
    };
    auto next_real = [&] {
        if (!(is >> tok)) throw IoError("problem file: truncated");
        return parse_real(tok);
    };
    auto next_count = [&] {
        if (!(is >> tok)) throw IoError("problem file: truncated");
        const long long v = parse_integer(tok);
        if (v < 0) throw IoError("problem file: negative count");
        return static_cast<std::size_t>(v);
    };

    expect("esom-problem");
    if (next_count() != 1) throw IoError("problem file: unsupported version");
    expect("family");
    is >> tok;
    const Family fam = parse_family(tok);
    expect("n");
    const std::size_t n = next_count();
    expect("p");
    const std::size_t p = next_count();
    std::map<std::string, std::string> meta;
    ProblemConstants c;
    Vector xs(p);
    double lambda = 0.0;
    std::vector<DenseMatrix> blocks;
    std::vector<Vector> lasts;
    while (is >> tok) {
        if (tok == "meta") {
            std::string k, v;
            if (!(is >> k >> v)) throw IoError("problem file: truncated meta line");
            meta[k] = v;
        } else if (tok == "constants") {
            c.m = next_real();
            c.M = next_real();
            c.L = next_real();
        } else if (tok == "x_star") {
            for (std::size_t r = 0; r < p; ++r) xs[r] = next_real();
        } else if (tok == "lambda") {
            lambda = next_real();
        } else if (tok == "node") {
            if (next_count() != blocks.size()) throw IoError("problem file: nodes out of order");
            const std::size_t rows = next_count();
            DenseMatrix a(rows, p);
            Vector last(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t j = 0; j < p; ++j) a(r, j) = next_real();
                last[r] = next_real();
            }
            blocks.push_back(std::move(a));
            lasts.push_back(std::move(last));
        } else if (tok == "end") {
            break;
        } else {
            throw IoError("problem file: unknown record '" + tok + "'");
        }
    }
    if (tok != "end") throw IoError("problem file: missing 'end'");
    if (blocks.size() != n) throw IoError("problem file: expected " + std::to_string(n) + " nodes");

    ProblemInstance prob;
    if (fam == Family::least_squares) {
        prob = ProblemInstance::from_least_squares(LeastSquaresData{std::move(blocks), std::move(lasts)});
    } else {
        prob = ProblemInstance::from_logistic(LogisticData{std::move(blocks), std::move(lasts), lambda});
    }
    prob.set_constants(c);
    prob.set_x_star(std::move(xs));
    prob.metadata() = std::move(meta);
    return prob;
}

} // namespace esom
