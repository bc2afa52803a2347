#pragma once

// Experiment orchestration: flat config files, bundles, grid tuning, SVG figures and the
// command-line entry point.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "esom/baselines.hpp"
#include "esom/esom.hpp"
#include "esom/format.hpp"
#include "esom/graph.hpp"
#include "esom/problems.hpp"
#include "esom/rates.hpp"
#include "esom/trace.hpp"

namespace esom {

// ---------------------------------------------------------------------------
// Config: `[section]` headers, `key = value` lines, `#` comments.

struct ConfigSection {
    std::string name;  // e.g. "problem" or "run ESOM-0"
    std::map<std::string, std::string> values;

    bool has(const std::string& k) const { return values.count(k) > 0; }
    std::string str(const std::string& k) const {
        auto it = values.find(k);
        if (it == values.end()) throw ConfigError("[" + name + "] missing key '" + k + "'");
        return it->second;
    }
    std::string str(const std::string& k, const std::string& fallback) const { return has(k) ? str(k) : fallback; }
    double real(const std::string& k) const {
        try {
            return parse_real(str(k));
        } catch (const IoError& e) {
            throw ConfigError("[" + name + "] " + k + ": " + e.what());
        }
    }
    double real(const std::string& k, double fallback) const { return has(k) ? real(k) : fallback; }
    long long integer(const std::string& k) const {
        try {
            return parse_integer(str(k));
        } catch (const IoError& e) {
            throw ConfigError("[" + name + "] " + k + ": " + e.what());
        }
    }
    long long integer(const std::string& k, long long fallback) const { return has(k) ? integer(k) : fallback; }
    bool flag(const std::string& k, bool fallback) const {
        if (!has(k)) return fallback;
        const std::string v = str(k);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("[" + name + "] " + k + ": expected a boolean, got '" + v + "'");
    }
};

struct Config {
    std::vector<ConfigSection> sections;

    const ConfigSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    const ConfigSection& get(const std::string& name) const {
        const ConfigSection* s = find(name);
        if (!s) throw ConfigError("config has no [" + name + "] section");
        return *s;
    }
    // Sections named "<prefix> <label>", in file order.
    std::vector<const ConfigSection*> with_prefix(const std::string& prefix) const {
        std::vector<const ConfigSection*> out;
        for (const auto& s : sections)
            if (s.name.rfind(prefix + " ", 0) == 0) out.push_back(&s);
        return out;
    }
};

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline Config parse_config(std::istream& is) {
    Config cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (name.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
            if (cfg.find(name)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate [" + name + "]");
            cfg.sections.push_back(ConfigSection{name, {}});
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        if (cfg.sections.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside a section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!cfg.sections.back().values.emplace(key, value).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return cfg;
}

inline Config load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config '" + path + "'");
    return parse_config(is);
}

// ---------------------------------------------------------------------------
// Instance construction from config

inline Graph make_topology(const ConfigSection& g, std::size_t n, std::uint64_t seed) {
    const std::string kind = g.str("topology", "random");
    std::vector<Edge> edges;
    if (kind == "random") {
        double r = 0.0;
        if (g.has("connectivity")) {
            r = g.real("connectivity");
        } else if (g.has("degree_budget")) {
            // r = d/n, e.g. r = 3/n for a degree budget of 3
            r = g.real("degree_budget") / static_cast<double>(n);
        } else {
            throw ConfigError("[graph] needs connectivity or degree_budget");
        }
        return generate_connected_graph(n, r, seed + static_cast<std::uint64_t>(g.integer("seed_offset", 0)));
    }
    if (kind == "path") {
        for (std::size_t i = 0; i + 1 < n; ++i) edges.push_back(Edge{i, i + 1});
    } else if (kind == "complete") {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) edges.push_back(Edge{i, j});
    } else if (kind == "ring") {
        for (std::size_t i = 0; i < n; ++i) edges.push_back(Edge{std::min(i, (i + 1) % n), std::max(i, (i + 1) % n)});
    } else {
        throw ConfigError("[graph] unknown topology '" + kind + "'");
    }
    return Graph(n, edges);
}

inline ProblemInstance make_problem(const ConfigSection& s, std::uint64_t seed) {
    const Family fam = parse_family(s.str("family"));
    const auto n = static_cast<std::size_t>(s.integer("n"));
    const auto p = static_cast<std::size_t>(s.integer("p"));
    const auto m_i = static_cast<std::size_t>(s.integer("m_i"));
    if (fam == Family::least_squares) {
        LeastSquaresOptions opt;
        opt.hessian_scale = s.real("hessian_scale", 0.0);
        opt.noise_std = s.real("noise_std", 1.0);
        return make_least_squares(n, p, m_i, s.real("condition"), s.real("distance"), seed, opt);
    }
    LogisticOptions opt;
    opt.feature_scale = s.real("feature_scale", 1.0);
    opt.label_noise = s.real("label_noise", 0.5);
    return make_logistic(n, p, m_i, s.real("lambda"), seed, opt);
}

struct Bundle {
    ProblemInstance problem;
    WeightMatrix weights;
};

inline std::uint64_t config_seed(const Config& cfg, std::optional<std::uint64_t> override_seed) {
    if (override_seed) return *override_seed;
    const ConfigSection& e = cfg.get("experiment");
    if (!e.has("seed")) throw ConfigError("[experiment] must set seed (no implicit entropy)");
    const long long s = e.integer("seed");
    if (s < 0) throw ConfigError("[experiment] seed must be non-negative");
    return static_cast<std::uint64_t>(s);
}

inline Bundle make_bundle(const Config& cfg, std::uint64_t seed) {
    const ConfigSection& ps = cfg.get("problem");
    const ConfigSection* gs = cfg.find("graph");
    ConfigSection empty{"graph", {}};
    ProblemInstance prob = make_problem(ps, seed);
    Graph g = make_topology(gs ? *gs : empty, prob.n(), seed);
    const std::string weights = gs ? gs->str("weights", "metropolis") : "metropolis";
    if (weights != "metropolis") throw ConfigError("[graph] unknown weights '" + weights + "'");
    return Bundle{std::move(prob), WeightMatrix::metropolis(g)};
}

inline void write_bundle(const Bundle& b, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream ps(dir + "/problem.txt", std::ios::binary);
    std::ofstream gs(dir + "/graph.txt", std::ios::binary);
    if (!ps || !gs) throw IoError("cannot write bundle into '" + dir + "'");
    write_problem(ps, b.problem);
    write_weight_matrix(gs, b.weights);
}

inline Bundle read_bundle(const std::string& dir) {
    std::ifstream ps(dir + "/problem.txt", std::ios::binary);
    std::ifstream gs(dir + "/graph.txt", std::ios::binary);
    if (!ps || !gs) throw IoError("bundle '" + dir + "' must contain problem.txt and graph.txt");
    ProblemInstance prob = read_problem(ps);
    WeightMatrix w = read_weight_matrix(gs);
    if (w.n() != prob.n()) throw IoError("bundle '" + dir + "': graph and problem disagree on n");
    return Bundle{std::move(prob), std::move(w)};
}

// ---------------------------------------------------------------------------
// Run specifications and grid tuning

struct TuneAxis {
    std::string key;
    double lo = 0.0, hi = 0.0;
    int count = 0;

    double value(int k) const {
        const double frac = count == 1 ? 0.0 : static_cast<double>(k) / (count - 1);
        return lo * std::pow(hi / lo, frac);
    }
};

struct RunSpec {
    std::string label;
    BaselineParams params;
    // optional log-spaced grid (product over axes), minimizing iterations to tune_tol
    std::vector<TuneAxis> tune;
    double tune_tol = 1e-6;
};

inline double& tunable(BaselineParams& bp, const std::string& key) {
    if (key == "alpha") return bp.alpha;
    if (key == "epsilon") return bp.epsilon;
    if (key == "stepsize") return bp.stepsize;
    if (key == "penalty") return bp.penalty;
    throw ConfigError("cannot tune '" + key + "'");
}

// "key lo hi count[; key lo hi count ...]"
inline std::vector<TuneAxis> parse_tune(const std::string& text, const std::string& where) {
    std::vector<TuneAxis> axes;
    std::istringstream all(text);
    std::string part;
    while (std::getline(all, part, ';')) {
        std::istringstream ts(part);
        TuneAxis a;
        std::string extra;
        if (!(ts >> a.key >> a.lo >> a.hi >> a.count) || (ts >> extra) || a.count < 1 || !(a.lo > 0.0) || !(a.hi >= a.lo))
            throw ConfigError("[" + where + "] tune must be 'key lo hi count' with 0 < lo <= hi (axes separated by ';')");
        for (const auto& b : axes)
            if (b.key == a.key) throw ConfigError("[" + where + "] tune lists '" + a.key + "' twice");
        axes.push_back(a);
    }
    if (axes.empty()) throw ConfigError("[" + where + "] tune is empty");
    return axes;
}

inline RunSpec parse_run(const ConfigSection& s) {
    RunSpec r;
    r.label = trim(s.name.substr(4));
    BaselineParams& bp = r.params;
    bp.algorithm = s.str("algo");
    bp.alpha = s.real("alpha", bp.alpha);
    bp.epsilon = s.real("epsilon", bp.epsilon);
    bp.K = static_cast<int>(s.integer("K", 0));
    bp.stepsize = s.real("stepsize", bp.stepsize);
    bp.penalty = s.real("penalty", bp.penalty);
    bp.inner_tol = s.real("inner_tol", bp.inner_tol);
    if (s.has("tune")) {
        r.tune = parse_tune(s.str("tune"), s.name);
        for (const auto& a : r.tune) tunable(bp, a.key);
        r.tune_tol = s.real("tune_tol", 1e-6);
    }
    bp.validate();
    return r;
}

struct TuneResult {
    std::map<std::string, double> values;
    std::optional<std::size_t> iterations;
};

// Grid search over the product of the tune axes; divergent or failing points are
// skipped. Ties keep the earlier point (smaller values, first axis slowest).
inline TuneResult tune_parameter(const ProblemInstance& prob, const WeightMatrix& w, const RunSpec& spec,
                                 std::size_t max_iters) {
    TuneResult best;
    for (const auto& a : spec.tune) best.values[a.key] = a.lo;
    std::vector<int> idx(spec.tune.size(), 0);
    while (true) {
        BaselineParams bp = spec.params;
        std::map<std::string, double> point;
        for (std::size_t d = 0; d < spec.tune.size(); ++d) {
            point[spec.tune[d].key] = spec.tune[d].value(idx[d]);
            tunable(bp, spec.tune[d].key) = point[spec.tune[d].key];
        }
        RunOptions opt;
        opt.max_iters = best.iterations ? std::min(max_iters, *best.iterations) : max_iters;
        opt.stop_tol = spec.tune_tol;
        try {
            const RunTrace t = run_method(prob, w, bp, opt);
            const auto it = t.iterations_to(spec.tune_tol);
            if (it && (!best.iterations || *it < *best.iterations)) {
                best.iterations = it;
                best.values = point;
            }
        } catch (const DivergenceError&) {
        } catch (const NumericalFailure&) {
        } catch (const NotPositiveDefinite&) {
        }
        std::size_t d = spec.tune.size();
        while (d > 0 && ++idx[d - 1] == spec.tune[d - 1].count) idx[--d] = 0;
        if (d == 0) break;
    }
    return best;
}

// ---------------------------------------------------------------------------
// SVG

enum class Axis { iterations, comm_rounds };

inline Axis parse_axis(const std::string& s) {
    if (s == "iters" || s == "iterations") return Axis::iterations;
    if (s == "comms" || s == "comm_rounds") return Axis::comm_rounds;
    throw ConfigError("axis must be iters or comms, got '" + s + "'");
}

inline std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string svg_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline void render_svg(std::ostream& os, const std::vector<RunTrace>& traces, Axis axis) {
    if (traces.empty()) throw ParameterError("render_svg: no traces");
    constexpr double W = 800, H = 500, left = 70, right = 170, top = 30, bottom = 55;
    constexpr double floor_err = 1e-16;
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

    auto xval = [&](const TraceRecord& r) {
        return axis == Axis::iterations ? static_cast<double>(r.iter) : static_cast<double>(r.comm_rounds);
    };
    double xmax = 0.0, ymin = INFINITY, ymax = -INFINITY;
    for (const auto& t : traces)
        for (const auto& r : t.records) {
            xmax = std::max(xmax, xval(r));
            const double ly = std::log10(std::max(r.rel_err, floor_err));
            ymin = std::min(ymin, ly);
            ymax = std::max(ymax, ly);
        }
    if (!std::isfinite(ymin)) ymin = ymax = 0.0;
    double y0 = std::floor(ymin), y1 = std::ceil(ymax);
    if (y1 <= y0) y1 = y0 + 1.0;
    if (xmax <= 0.0) xmax = 1.0;
    const double pw = W - left - right, ph = H - top - bottom;
    auto px = [&](double x) { return left + pw * x / xmax; };
    auto py = [&](double ly) { return top + ph * (y1 - ly) / (y1 - y0); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"500\" viewBox=\"0 0 800 500\">\n";
    os << "<rect width=\"800\" height=\"500\" fill=\"white\"/>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";

    // y ticks: at most 10 decades labelled
    const int decades = static_cast<int>(y1 - y0);
    const int ystride = std::max(1, (decades + 9) / 10);
    for (int d = 0; d <= decades; d += ystride) {
        const double ly = y0 + d;
        os << "<line x1=\"" << left << "\" y1=\"" << svg_num(py(ly)) << "\" x2=\"" << left + pw << "\" y2=\""
           << svg_num(py(ly)) << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << left - 8 << "\" y=\"" << svg_num(py(ly) + 4)
           << "\" font-size=\"12\" text-anchor=\"end\">1e" << static_cast<int>(ly) << "</text>\n";
    }
    for (int k = 0; k <= 10; ++k) {
        const double xv = xmax * k / 10.0;
        char lab[32];
        std::snprintf(lab, sizeof lab, "%.0f", xv);
        os << "<text x=\"" << svg_num(px(xv)) << "\" y=\"" << top + ph + 18 << "\" font-size=\"12\" text-anchor=\"middle\">"
           << lab << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" font-size=\"14\" text-anchor=\"middle\">"
       << (axis == Axis::iterations ? "iterations" : "rounds of communication") << "</text>\n";
    os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << top + ph / 2 << ")\">relative error</text>\n";

    for (std::size_t k = 0; k < traces.size(); ++k) {
        const auto& t = traces[k];
        const char* color = palette[k % (sizeof palette / sizeof palette[0])];
        const std::size_t stride = std::max<std::size_t>(1, t.records.size() / 2000);
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t r = 0; r < t.records.size(); ++r) {
            if (r % stride != 0 && r + 1 != t.records.size()) continue;
            const auto& rec = t.records[r];
            os << svg_num(px(xval(rec))) << ',' << svg_num(py(std::log10(std::max(rec.rel_err, floor_err)))) << ' ';
        }
        os << "\"/>\n";
        const double ly = top + 16 + 20.0 * static_cast<double>(k);
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << left + pw + 36 << "\" y2=\"" << ly - 4
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 42 << "\" y=\"" << ly << "\" font-size=\"12\">"
           << svg_escape(t.label.empty() ? t.algorithm : t.label) << "</text>\n";
    }
    os << "</svg>\n";
}

inline void render_svg(const std::vector<RunTrace>& traces, const std::string& path, Axis axis) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    render_svg(os, traces, axis);
}

// ---------------------------------------------------------------------------
// compare

struct CompareResult {
    std::vector<RunTrace> traces;
    std::map<std::string, std::string> summary;
};

inline RunOptions experiment_options(const Config& cfg) {
    const ConfigSection& e = cfg.get("experiment");
    RunOptions opt;
    const long long iters = e.integer("iters");
    if (iters < 0) throw ConfigError("[experiment] iters must be non-negative");
    opt.max_iters = static_cast<std::size_t>(iters);
    opt.stop_tol = e.real("stop_tol", 0.0);
    opt.snapshots = e.flag("snapshots", false);
    return opt;
}

// Runs every [run ...] section in file order.
inline std::vector<RunTrace> run_experiment(const Config& cfg, const Bundle& b, std::ostream* log = nullptr) {
    const RunOptions opt = experiment_options(cfg);
    std::vector<RunTrace> traces;
    const auto runs = cfg.with_prefix("run");
    if (runs.empty()) throw ConfigError("config defines no [run ...] sections");
    for (const ConfigSection* s : runs) {
        RunSpec spec = parse_run(*s);
        std::map<std::string, double> tuned;
        if (!spec.tune.empty()) {
            tuned = tune_parameter(b.problem, b.weights, spec, opt.max_iters).values;
            for (const auto& [k, v] : tuned) tunable(spec.params, k) = v;
        }
        RunTrace t = run_method(b.problem, b.weights, spec.params, opt);
        t.label = spec.label;
        for (const auto& [k, v] : tuned) t.params["tuned_" + k] = format_real(v);
        if (log) *log << spec.label << ": " << describe_params(t.params) << '\n';
        traces.push_back(std::move(t));
    }
    return traces;
}

inline void write_combined_csv(std::ostream& os, const std::vector<RunTrace>& traces) {
    os << "run," << kTraceHeader << '\n';
    for (const auto& t : traces) {
        std::ostringstream body;
        RunTrace copy;
        copy.records = t.records;
        write_trace_csv(body, copy);
        std::istringstream lines(body.str());
        std::string line;
        std::getline(lines, line);  // header
        while (std::getline(lines, line)) os << t.label << ',' << line << '\n';
    }
}

inline void write_summary_csv(std::ostream& os, const std::vector<RunTrace>& traces, double tol) {
    os << "run,algorithm,params,iters_to_tol,comms_to_tol,final_rel_err\n";
    for (const auto& t : traces) {
        const auto it = t.iterations_to(tol);
        const auto cm = t.comms_to(tol);
        std::string params = describe_params(t.params);
        std::replace(params.begin(), params.end(), ',', ';');
        os << t.label << ',' << t.algorithm << ',' << params << ',' << (it ? std::to_string(*it) : "") << ','
           << (cm ? std::to_string(*cm) : "") << ',' << format_real(t.final_error()) << '\n';
    }
}

// ---------------------------------------------------------------------------
// CLI

inline void print_rates(std::ostream& os, const RateConstants& rc, std::optional<double> fixed_beta,
                        double gamma) {
    os << "m = " << format_real(rc.m) << '\n';
    os << "M = " << format_real(rc.M) << '\n';
    os << "L = " << format_real(rc.L) << '\n';
    os << "c = " << format_real(rc.c) << '\n';
    os << "lambda_hat_min = " << format_real(rc.lambda_hat) << '\n';
    os << "alpha = " << format_real(rc.alpha) << '\n';
    os << "epsilon = " << format_real(rc.epsilon) << '\n';
    os << "K = " << rc.K << '\n';
    os << "rho = " << format_real(rc.rho) << '\n';
    const double beta = fixed_beta ? *fixed_beta : rc.beta;
    os << "beta = " << format_real(beta) << (fixed_beta ? " (fixed)" : " (optimized)") << '\n';
    os << "delta = " << format_real(pmm_delta(rc, beta)) << '\n';
    os << "gamma_min = " << format_real(gamma) << '\n';
    const ZetaInterval zi = zeta_interval(rc, gamma);
    os << "zeta_interval = (" << format_real(zi.lo) << ", " << format_real(zi.hi) << ")\n";
    if (!zi.feasible()) {
        os << "delta_prime = infeasible\n";
        os << "epsilon_min = " << format_real(minimal_feasible_epsilon(rc, 0.0)) << '\n';
        return;
    }
    const DeltaPrimeChoice d = optimize_delta_prime(rc, gamma);
    os << "delta_prime = " << format_real(d.delta_prime) << '\n';
    os << "delta_prime_beta = " << format_real(d.beta) << '\n';
    os << "delta_prime_phi = " << format_real(d.phi) << '\n';
    os << "delta_prime_zeta = " << format_real(d.zeta) << '\n';
    os << "delta_same_beta = " << format_real(d.delta_same_beta) << '\n';
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"ESOM-K decentralized optimization experiments"};
    app.require_subcommand(1);

    std::string config_path, out_path, algo = "esom", bundle_dir, trace_path, axis_name = "iters";
    std::optional<std::uint64_t> seed;
    double alpha = 0.1, epsilon = 1.0, stepsize = 1.0, penalty = 1.0, delta_scale = 1.0;
    std::optional<double> beta;
    int K = 0;
    std::size_t iters = 1000;
    bool snapshots = false, lyap = false;

    auto* gen = app.add_subcommand("gen", "write a problem/graph bundle");
    gen->add_option("--config", config_path, "experiment config")->required();
    gen->add_option("--seed", seed, "override the config seed");
    gen->add_option("--out", out_path, "bundle directory")->required();

    auto* run = app.add_subcommand("run", "run one algorithm on a bundle and write its trace");
    run->add_option("--bundle", bundle_dir, "bundle directory")->required();
    run->add_option("--algo", algo, "esom|pmm|extra|dgd|nn|dadmm");
    run->add_option("--alpha", alpha);
    run->add_option("--epsilon", epsilon);
    run->add_option("--k", K);
    run->add_option("--stepsize", stepsize);
    run->add_option("--penalty", penalty);
    run->add_option("--iters", iters);
    run->add_flag("--snapshots", snapshots, "also write dense snapshots");
    run->add_flag("--lyapunov", lyap, "log the Lyapunov value (esom, pmm)");
    run->add_option("--out", out_path, "output directory")->required();

    auto* rates = app.add_subcommand("rates", "print convergence constants for a bundle");
    rates->add_option("--bundle", bundle_dir)->required();
    rates->add_option("--alpha", alpha);
    rates->add_option("--epsilon", epsilon);
    rates->add_option("--k", K);
    rates->add_option("--beta", beta, "fix beta instead of optimizing it");

    auto* compare = app.add_subcommand("compare", "run every method of a config, write CSVs and SVG");
    compare->add_option("--config", config_path)->required();
    compare->add_option("--seed", seed);
    compare->add_option("--out", out_path)->required();
    compare->add_option("--axis", axis_name, "iters|comms (default: both figures)");
    compare->add_option("--iters", iters, "override the iteration budget");

    auto* verify = app.add_subcommand("verify", "check the proved inequalities along a snapshot trace");
    verify->add_option("--bundle", bundle_dir)->required();
    verify->add_option("--trace", trace_path, "run output directory (with snapshots.txt)")->required();
    verify->add_option("--out", out_path, "bounds CSV path");
    verify->add_option("--delta-scale", delta_scale, "multiply the certified rate (falsifiability)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (gen->parsed()) {
            const Config cfg = load_config(config_path);
            const Bundle b = make_bundle(cfg, config_seed(cfg, seed));
            write_bundle(b, out_path);
            out << "wrote bundle " << out_path << " (n=" << b.problem.n() << ", p=" << b.problem.p()
                << ", edges=" << b.weights.graph().edges().size() << ")\n";
            return 0;
        }
        if (run->parsed()) {
            const Bundle b = read_bundle(bundle_dir);
            BaselineParams bp;
            bp.algorithm = algo;
            bp.alpha = alpha;
            bp.epsilon = epsilon;
            bp.K = K;
            bp.stepsize = stepsize;
            bp.penalty = penalty;
            RunOptions opt;
            opt.max_iters = iters;
            opt.snapshots = snapshots;
            opt.lyapunov = lyap;
            const RunTrace t = run_method(b.problem, b.weights, bp, opt);
            std::filesystem::create_directories(out_path);
            write_trace_csv(t, out_path + "/trace.csv");
            if (snapshots) write_snapshots(t, out_path + "/snapshots.txt");
            out << t.label << ": " << t.iterations() << " iterations, final relative error " << format_real(t.final_error())
                << '\n';
            return 0;
        }
        if (rates->parsed()) {
            const Bundle b = read_bundle(bundle_dir);
            const RateConstants rc = make_rate_constants(b.problem, b.weights, alpha, epsilon, K);
            print_rates(out, rc, beta, gamma_from_step(0.0, rc));
            return 0;
        }
        if (compare->parsed()) {
            Config cfg = load_config(config_path);
            if (compare->count("--iters")) {
                for (auto& s : cfg.sections)
                    if (s.name == "experiment") s.values["iters"] = std::to_string(iters);
            }
            const Bundle b = make_bundle(cfg, config_seed(cfg, seed));
            const std::vector<RunTrace> traces = run_experiment(cfg, b, &err);
            std::filesystem::create_directories(out_path);
            {
                std::ofstream os(out_path + "/combined.csv", std::ios::binary);
                write_combined_csv(os, traces);
                std::ofstream ss(out_path + "/summary.csv", std::ios::binary);
                write_summary_csv(ss, traces, cfg.get("experiment").real("report_tol", 1e-6));
            }
            write_bundle(b, out_path + "/bundle");
            if (compare->count("--axis")) {
                const Axis ax = parse_axis(axis_name);
                render_svg(traces, out_path + (ax == Axis::iterations ? "/figure_iters.svg" : "/figure_comms.svg"), ax);
            } else {
                render_svg(traces, out_path + "/figure_iters.svg", Axis::iterations);
                render_svg(traces, out_path + "/figure_comms.svg", Axis::comm_rounds);
            }
            std::ifstream summary(out_path + "/summary.csv");
            out << summary.rdbuf();
            return 0;
        }
        if (verify->parsed()) {
            const Bundle b = read_bundle(bundle_dir);
            RunTrace t = read_trace_csv(trace_path + "/trace.csv");
            read_snapshots(trace_path + "/snapshots.txt", t);
            AlgorithmParams prm;
            prm.alpha = parse_real(t.params.at("alpha"));
            prm.epsilon = parse_real(t.params.at("epsilon"));
            prm.K = t.params.count("K") ? static_cast<int>(parse_integer(t.params.at("K"))) : 0;
            VerifyOptions vo;
            vo.delta_scale = delta_scale;
            const BoundReport rep = verify_bounds(t, b.problem, b.weights, t.algorithm, prm, vo);
            if (!out_path.empty()) write_bound_csv(rep, out_path);
            for (const char* id : {"a", "b", "c", "d", "e_lower", "e_upper", "zeta_feasible"}) {
                const std::size_t n = rep.count(id);
                if (n == 0) continue;
                out << id << ": " << rep.violations(id) << " violations of " << n << '\n';
            }
            for (const auto& [k, v] : rep.notes) out << k << " = " << v << '\n';
            return rep.all_ok() ? 0 : 3;
        }
    } catch (const std::out_of_range&) {
        err << "error: snapshot file lacks required run parameters\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}

} // namespace esom
