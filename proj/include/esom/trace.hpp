#pragma once

// Per-iteration run metrics shared by ESOM and every baseline, with CSV round-tripping.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "esom/format.hpp"
#include "esom/graph.hpp"
#include "esom/numkit.hpp"
#include "esom/problems.hpp"

namespace esom {

struct TraceRecord {
    std::size_t iter = 0;
    std::uint64_t comm_rounds = 0;
    double rel_err = 0.0;
    double consensus_err = 0.0;
    double grad_norm = 0.0;
    std::optional<double> lyapunov;
    bool operator==(const TraceRecord&) const = default;
};

// Dense state after an iteration; `dual` is q for ESOM and v for PMM/EXTRA.
struct Snapshot {
    std::size_t iter = 0;
    Vector x;
    Vector dual;
};

struct RunTrace {
    std::string algorithm;                        // e.g. "esom", "pmm"
    std::string label;                            // legend text, e.g. "ESOM-1"
    std::map<std::string, std::string> params;    // logged parameters and seeds
    std::vector<TraceRecord> records;
    std::vector<Snapshot> snapshots;
    double wall_seconds = 0.0;

    std::size_t iterations() const { return records.empty() ? 0 : records.back().iter; }
    const TraceRecord& last() const {
        if (records.empty()) throw InconsistentState("RunTrace: empty trace");
        return records.back();
    }
    double final_error() const { return last().rel_err; }

    // First iteration whose relative error is at or below tol.
    std::optional<std::size_t> iterations_to(double tol) const {
        for (const auto& r : records)
            if (r.rel_err <= tol) return r.iter;
        return std::nullopt;
    }
    std::optional<std::uint64_t> comms_to(double tol) const {
        for (const auto& r : records)
            if (r.rel_err <= tol) return r.comm_rounds;
        return std::nullopt;
    }
};

// Computes the logged metrics for a stacked iterate.
class TraceMetrics {
public:
    TraceMetrics(const ProblemInstance& prob, const WeightMatrix& w) : prob_(&prob), w_(&w) {
        x_star_ = prob.x_star_stacked();
        denom_ = norm(x_star_);  // x₀ = 0
        if (!(denom_ > 0.0)) denom_ = 1.0;
    }
    void set_initial(const Vector& x0) {
        denom_ = norm(x0 - x_star_);
        if (!(denom_ > 0.0)) denom_ = 1.0;
    }

    double rel_err(const Vector& x) const { return norm(x - x_star_) / denom_; }

    TraceRecord record(std::size_t iter, std::uint64_t comms, const Vector& x) const {
        TraceRecord r;
        r.iter = iter;
        r.comm_rounds = comms;
        r.rel_err = rel_err(x);
        r.consensus_err = consensus_error(*w_, x, prob_->p());
        r.grad_norm = norm(stacked_gradient(*prob_, x));
        return r;
    }

    const Vector& x_star() const noexcept { return x_star_; }

private:
    const ProblemInstance* prob_;
    const WeightMatrix* w_;
    Vector x_star_;
    double denom_ = 1.0;
};

struct RunOptions {
    std::size_t max_iters = 1000;
    double stop_tol = 0.0;             // stop once rel_err <= stop_tol; 0 disables
    bool snapshots = false;
    bool lyapunov = false;             // only meaningful for primal-dual methods
    double divergence_threshold = 1e6;
};

inline std::string describe_params(const std::map<std::string, std::string>& params) {
    std::string s;
    for (const auto& [k, v] : params) s += (s.empty() ? "" : ", ") + k + "=" + v;
    return s;
}

// Throws DivergenceError when the relative error blows up or turns non-finite.
inline void check_divergence(const RunTrace& trace, const TraceRecord& r, const RunOptions& opt) {
    if (!std::isfinite(r.rel_err) || r.rel_err > opt.divergence_threshold)
        throw DivergenceError(trace.algorithm + " diverged at iteration " + std::to_string(r.iter) +
                              " (relative error " + format_real(r.rel_err) + ") with " + describe_params(trace.params));
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr const char* kTraceHeader = "iter,comm_rounds,rel_err,consensus_err,grad_norm,lyapunov";

inline void write_trace_csv(std::ostream& os, const RunTrace& trace) {
    os << kTraceHeader << '\n';
    for (const auto& r : trace.records) {
        os << r.iter << ',' << r.comm_rounds << ',' << format_real(r.rel_err) << ',' << format_real(r.consensus_err)
           << ',' << format_real(r.grad_norm) << ',';
        if (r.lyapunov) os << format_real(*r.lyapunov);
        os << '\n';
    }
}

inline void write_trace_csv(const RunTrace& trace, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_trace_csv(os, trace);
    if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline RunTrace read_trace_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw IoError("trace CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTraceHeader) throw IoError("trace CSV: unexpected header '" + line + "'");
    RunTrace trace;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 6) throw IoError("trace CSV: expected 6 fields in '" + line + "'");
        TraceRecord r;
        r.iter = static_cast<std::size_t>(parse_integer(f[0]));
        r.comm_rounds = static_cast<std::uint64_t>(parse_integer(f[1]));
        r.rel_err = parse_real(f[2]);
        r.consensus_err = parse_real(f[3]);
        r.grad_norm = parse_real(f[4]);
        if (!f[5].empty()) r.lyapunov = parse_real(f[5]);
        if (!trace.records.empty() && r.iter <= trace.records.back().iter)
            throw IoError("trace CSV: iterations not strictly increasing");
        trace.records.push_back(r);
    }
    return trace;
}

inline RunTrace read_trace_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    return read_trace_csv(is);
}

// ---------------------------------------------------------------------------
// Snapshot sidecar: run metadata plus one x/dual pair per recorded iteration.

inline void write_snapshots(std::ostream& os, const RunTrace& trace) {
    os << "esom-snapshots 1\n";
    os << "algorithm " << trace.algorithm << '\n';
    for (const auto& [k, v] : trace.params) os << "param " << k << ' ' << v << '\n';
    for (const auto& s : trace.snapshots) {
        os << "snapshot " << s.iter << ' ' << s.x.size() << ' ' << s.dual.size() << '\n';
        for (std::size_t k = 0; k < s.x.size(); ++k) os << (k ? " " : "") << format_real(s.x[k]);
        os << '\n';
        for (std::size_t k = 0; k < s.dual.size(); ++k) os << (k ? " " : "") << format_real(s.dual[k]);
        os << '\n';
    }
    os << "end\n";
}

inline void write_snapshots(const RunTrace& trace, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    write_snapshots(os, trace);
}

// Fills algorithm, params and snapshots of `trace`.
inline void read_snapshots(std::istream& is, RunTrace& trace) {
    std::string tok;
    if (!(is >> tok) || tok != "esom-snapshots") throw IoError("snapshot file: bad magic");
    is >> tok;
    trace.snapshots.clear();
    while (is >> tok) {
        if (tok == "algorithm") {
            is >> trace.algorithm;
        } else if (tok == "param") {
            std::string k, v;
            if (!(is >> k >> v)) throw IoError("snapshot file: truncated param");
            trace.params[k] = v;
        } else if (tok == "snapshot") {
            Snapshot s;
            std::size_t nx = 0, nd = 0;
            if (!(is >> s.iter >> nx >> nd)) throw IoError("snapshot file: truncated header");
            s.x = Vector(nx);
            s.dual = Vector(nd);
            for (std::size_t k = 0; k < nx; ++k) {
                is >> tok;
                s.x[k] = parse_real(tok);
            }
            for (std::size_t k = 0; k < nd; ++k) {
                is >> tok;
                s.dual[k] = parse_real(tok);
            }
            if (!is) throw IoError("snapshot file: truncated vector");
            trace.snapshots.push_back(std::move(s));
        } else if (tok == "end") {
            return;
        } else {
            throw IoError("snapshot file: unknown record '" + tok + "'");
        }
    }
    throw IoError("snapshot file: missing 'end'");
}

inline void read_snapshots(const std::string& path, RunTrace& trace) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    read_snapshots(is, trace);
}

} // namespace esom
