#pragma once

// Network topology, Metropolis mixing matrix and the Z = W ⊗ I_p operators.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "esom/format.hpp"
#include "esom/numkit.hpp"

namespace esom {

struct Edge {
    std::size_t i;
    std::size_t j;  // i < j
    auto operator<=>(const Edge&) const = default;
};

// Undirected simple graph with sorted adjacency lists.
class Graph {
public:
    Graph() = default;

    // Validates that edges are in range, not self-loops and not duplicated. Connectivity
    // is not required here; see is_connected().
    Graph(std::size_t n, std::vector<Edge> edges) : n_(n), adjacency_(n) {
        std::set<Edge> seen;
        for (Edge e : edges) {
            if (e.i == e.j) throw ParameterError("Graph: self-loop on node " + std::to_string(e.i));
            if (e.i > e.j) std::swap(e.i, e.j);
            if (e.j >= n) throw ParameterError("Graph: edge endpoint out of range");
            if (!seen.insert(e).second) throw ParameterError("Graph: duplicate edge");
        }
        edges_.assign(seen.begin(), seen.end());
        for (const Edge& e : edges_) {
            adjacency_[e.i].push_back(e.j);
            adjacency_[e.j].push_back(e.i);
        }
        for (auto& a : adjacency_) std::sort(a.begin(), a.end());
    }

    std::size_t n() const noexcept { return n_; }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<std::size_t>& neighbors(std::size_t i) const { return adjacency_.at(i); }
    std::size_t degree(std::size_t i) const { return adjacency_.at(i).size(); }
    std::vector<std::size_t> degrees() const {
        std::vector<std::size_t> d(n_);
        for (std::size_t i = 0; i < n_; ++i) d[i] = degree(i);
        return d;
    }
    bool has_edge(std::size_t i, std::size_t j) const {
        const auto& a = adjacency_.at(i);
        return std::binary_search(a.begin(), a.end(), j);
    }

    // Number of nodes reached by BFS from node 0.
    std::size_t reachable_from_first() const {
        if (n_ == 0) return 0;
        std::vector<char> seen(n_, 0);
        std::queue<std::size_t> frontier;
        frontier.push(0);
        seen[0] = 1;
        std::size_t count = 1;
        while (!frontier.empty()) {
            const std::size_t u = frontier.front();
            frontier.pop();
            for (std::size_t v : adjacency_[u])
                if (!seen[v]) {
                    seen[v] = 1;
                    ++count;
                    frontier.push(v);
                }
        }
        return count;
    }
    bool is_connected() const { return reachable_from_first() == n_; }

private:
    std::size_t n_ = 0;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::size_t>> adjacency_;
};

// floor(r · n(n-1)/2)
inline std::size_t edge_budget(std::size_t n, double connectivity_ratio) {
    const double all = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    // Nudged so that ratios like 3/20 of 190 land on the intended integer.
    return static_cast<std::size_t>(std::floor(connectivity_ratio * all + 1e-9));
}

// Random connected graph with exactly floor(r·n(n-1)/2) edges: a uniform spanning tree
// (Aldous–Broder walk on K_n) plus uniformly chosen extra edges.
inline Graph generate_connected_graph(std::size_t n, double connectivity_ratio, std::uint64_t seed) {
    if (n < 2) throw ParameterError("generate_connected_graph: need n >= 2");
    if (!(connectivity_ratio > 0.0 && connectivity_ratio <= 1.0))
        throw ParameterError("generate_connected_graph: connectivity ratio must be in (0, 1]");
    const std::size_t budget = edge_budget(n, connectivity_ratio);
    if (budget < n - 1)
        throw InfeasibleRatio("generate_connected_graph: edge budget " + std::to_string(budget) +
                              " is below the n-1 = " + std::to_string(n - 1) + " edges a connected graph needs");

    Rng rng(seed, 0x6772617068ULL);
    std::set<Edge> edges;
    std::vector<char> visited(n, 0);
    std::size_t current = rng.below(n);
    visited[current] = 1;
    std::size_t remaining = n - 1;
    while (remaining > 0) {
        std::size_t next = rng.below(n - 1);
        if (next >= current) ++next;
        if (!visited[next]) {
            visited[next] = 1;
            edges.insert(Edge{std::min(current, next), std::max(current, next)});
            --remaining;
        }
        current = next;
    }

    std::vector<Edge> candidates;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (!edges.count(Edge{i, j})) candidates.push_back(Edge{i, j});
    // partial Fisher–Yates
    const std::size_t extra = budget - (n - 1);
    for (std::size_t k = 0; k < extra; ++k) {
        const std::size_t pick = k + rng.below(candidates.size() - k);
        std::swap(candidates[k], candidates[pick]);
        edges.insert(candidates[k]);
    }
    return Graph(n, std::vector<Edge>(edges.begin(), edges.end()));
}

// Symmetric, row-stochastic mixing matrix supported on the graph's edges plus the diagonal.
class WeightMatrix {
public:
    WeightMatrix() = default;

    // Validates the three mixing conditions and positivity of the diagonal.
    WeightMatrix(Graph graph, DenseMatrix w) : graph_(std::move(graph)), w_(std::move(w)) {
        const std::size_t n = graph_.n();
        if (w_.rows() != n || w_.cols() != n) throw DimensionError("WeightMatrix: shape does not match graph");
        if (!graph_.is_connected()) throw ParameterError("WeightMatrix: graph is not connected");
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                row += w_(i, j);
                if (w_(i, j) != w_(j, i)) throw SymmetryError("WeightMatrix: W is not symmetric");
                const bool support = i == j || graph_.has_edge(i, j);
                if (!support && w_(i, j) != 0.0) throw ParameterError("WeightMatrix: weight outside the graph support");
                if (support && i != j && !(w_(i, j) > 0.0)) throw ParameterError("WeightMatrix: non-positive edge weight");
            }
            if (std::abs(row - 1.0) > 1e-12) throw ParameterError("WeightMatrix: row " + std::to_string(i) + " does not sum to 1");
            if (!(w_(i, i) > 0.0)) throw ParameterError("WeightMatrix: non-positive self weight");
        }
        min_self_weight_ = w_(0, 0);
        for (std::size_t i = 0; i < n; ++i) min_self_weight_ = std::min(min_self_weight_, w_(i, i));

        DenseMatrix laplacian = DenseMatrix::identity(n) - w_;
        eig_ = sym_eig(laplacian);
        lambda_hat_min_ = n >= 2 ? eig_.values[1] : 0.0;
        if (n >= 2 && lambda_hat_min_ <= 1e-12)
            throw ParameterError("WeightMatrix: null(I-W) is larger than span(1); graph disconnected or degenerate");
    }

    // w_ij = 1/(1 + max(deg_i, deg_j)) on edges, w_ii = 1 - Σ_j w_ij.
    static WeightMatrix metropolis(const Graph& g) {
        const std::size_t n = g.n();
        DenseMatrix w(n, n);
        for (const Edge& e : g.edges()) {
            const double wij = 1.0 / (1.0 + static_cast<double>(std::max(g.degree(e.i), g.degree(e.j))));
            w(e.i, e.j) = wij;
            w(e.j, e.i) = wij;
        }
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j : g.neighbors(i)) s += w(i, j);
            w(i, i) = 1.0 - s;
        }
        return WeightMatrix(g, std::move(w));
    }

    std::size_t n() const noexcept { return graph_.n(); }
    const Graph& graph() const noexcept { return graph_; }
    const DenseMatrix& matrix() const noexcept { return w_; }
    double weight(std::size_t i, std::size_t j) const { return w_(i, j); }
    double self_weight(std::size_t i) const { return w_(i, i); }
    const std::vector<std::size_t>& neighbors(std::size_t i) const { return graph_.neighbors(i); }

    // c = min_i w_ii
    double min_self_weight() const noexcept { return min_self_weight_; }
    double lambda_hat_min() const noexcept { return lambda_hat_min_; }
    // Eigendecomposition of I - W.
    const SymEig& laplacian_eig() const noexcept { return eig_; }

private:
    Graph graph_;
    DenseMatrix w_;
    double min_self_weight_ = 1.0;
    double lambda_hat_min_ = 0.0;
    SymEig eig_;
};

// Smallest non-zero eigenvalue of I - Z (equal to that of I - W).
inline double lambda_hat_min(const WeightMatrix& w) {
    const double v = w.lambda_hat_min();
    if (w.n() >= 2 && v <= 1e-12) throw ParameterError("lambda_hat_min: disconnected or degenerate W");
    return v;
}

inline void check_stacked(const WeightMatrix& w, const Vector& x, std::size_t p) {
    if (p == 0 || x.size() != w.n() * p)
        throw DimensionError("stacked vector length " + std::to_string(x.size()) + " != n*p = " +
                             std::to_string(w.n() * p));
}

// (W ⊗ I_p) x, block i = Σ_j w_ij x_j over j ∈ N_i ∪ {i}.
inline Vector apply_Z(const WeightMatrix& w, const Vector& x, std::size_t p) {
    check_stacked(w, x, p);
    Vector out(x.size());
    for (std::size_t i = 0; i < w.n(); ++i) {
        const double wii = w.self_weight(i);
        for (std::size_t r = 0; r < p; ++r) out[i * p + r] = wii * x[i * p + r];
        for (std::size_t j : w.neighbors(i)) {
            const double wij = w.weight(i, j);
            for (std::size_t r = 0; r < p; ++r) out[i * p + r] += wij * x[j * p + r];
        }
    }
    return out;
}

// (I - Z) x, accumulated as Σ_j w_ij (x_i - x_j). Edge terms of i and j are exact
// negatives of each other, so 1ᵀ(I - Z)x carries no systematic rounding bias.
inline Vector apply_I_minus_Z(const WeightMatrix& w, const Vector& x, std::size_t p) {
    check_stacked(w, x, p);
    Vector out(x.size());
    for (std::size_t i = 0; i < w.n(); ++i)
        for (std::size_t j : w.neighbors(i)) {
            const double wij = w.weight(i, j);
            for (std::size_t r = 0; r < p; ++r) out[i * p + r] += wij * (x[i * p + r] - x[j * p + r]);
        }
    return out;
}

// xᵀ(I - Z)x = ||(I - Z)^{1/2} x||², clipped at zero.
inline double consensus_error(const WeightMatrix& w, const Vector& x, std::size_t p) {
    return std::sqrt(std::max(0.0, dot(x, apply_I_minus_Z(w, x, p))));
}

// Applies (I - W)^{1/2} ⊗ I_p and its pseudoinverse through the eigendecomposition of
// I - W. Eigenvalues are clipped at zero before the square root.
class SqrtIMinusZ {
public:
    SqrtIMinusZ() = default;
    explicit SqrtIMinusZ(const WeightMatrix& w, double null_tol = 1e-12) : n_(w.n()) {
        const SymEig& eig = w.laplacian_eig();
        root_ = sym_matrix_function(eig, [](double l) { return std::sqrt(std::max(l, 0.0)); });
        pinv_root_ = sym_matrix_function(eig, [null_tol](double l) { return l > null_tol ? 1.0 / std::sqrt(l) : 0.0; });
        values_ = Vector(eig.values.size());
        for (std::size_t k = 0; k < values_.size(); ++k) values_[k] = std::sqrt(std::max(eig.values[k], 0.0));
    }

    std::size_t n() const noexcept { return n_; }
    const DenseMatrix& root() const noexcept { return root_; }
    const DenseMatrix& pinv_root() const noexcept { return pinv_root_; }
    // Eigenvalues of the n×n root, ascending.
    const Vector& eigenvalues() const noexcept { return values_; }

    Vector apply(const Vector& x, std::size_t p) const { return apply_n(root_, x, p); }
    Vector apply_pinv(const Vector& x, std::size_t p) const { return apply_n(pinv_root_, x, p); }

private:
    Vector apply_n(const DenseMatrix& m, const Vector& x, std::size_t p) const {
        if (p == 0 || x.size() != n_ * p) throw DimensionError("SqrtIMinusZ: stacked length mismatch");
        Vector out(x.size());
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j) {
                const double mij = m(i, j);
                if (mij == 0.0) continue;
                for (std::size_t r = 0; r < p; ++r) out[i * p + r] += mij * x[j * p + r];
            }
        return out;
    }

    std::size_t n_ = 0;
    DenseMatrix root_;
    DenseMatrix pinv_root_;
    Vector values_;
};

inline SqrtIMinusZ sqrt_I_minus_Z(const WeightMatrix& w) { return SqrtIMinusZ(w); }

// Mean block (1/n) Σ_i x_i broadcast back to every node.
inline Vector consensus_projection(const Vector& x, std::size_t n, std::size_t p) {
    if (x.size() != n * p) throw DimensionError("consensus_projection: length mismatch");
    Vector mean(p);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < p; ++r) mean[r] += x[i * p + r];
    mean *= 1.0 / static_cast<double>(n);
    Vector out(x.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < p; ++r) out[i * p + r] = mean[r];
    return out;
}

// ---------------------------------------------------------------------------
// Text format: first line n, then one "i j w_ij" line per edge (i < j, 0-based).

inline void write_weight_matrix(std::ostream& os, const WeightMatrix& w) {
    os << w.n() << '\n';
    for (const Edge& e : w.graph().edges()) os << e.i << ' ' << e.j << ' ' << format_real(w.weight(e.i, e.j)) << '\n';
}

inline WeightMatrix read_weight_matrix(std::istream& is) {
    std::size_t n = 0;
    if (!(is >> n) || n == 0) throw IoError("graph file: missing node count");
    std::vector<Edge> edges;
    std::vector<double> weights;
    std::size_t i = 0, j = 0;
    std::string token;
    while (is >> i) {
        if (!(is >> j >> token)) throw IoError("graph file: truncated edge line");
        edges.push_back(Edge{i, j});
        weights.push_back(parse_real(token));
    }
    if (!is.eof()) throw IoError("graph file: malformed edge line");
    Graph g(n, edges);
    DenseMatrix w(n, n);
    for (std::size_t k = 0; k < edges.size(); ++k) {
        w(edges[k].i, edges[k].j) = weights[k];
        w(edges[k].j, edges[k].i) = weights[k];
    }
    for (std::size_t a = 0; a < n; ++a) {
        double s = 0.0;
        for (std::size_t b : g.neighbors(a)) s += w(a, b);
        w(a, a) = 1.0 - s;
    }
    return WeightMatrix(std::move(g), std::move(w));
}

} // namespace esom
