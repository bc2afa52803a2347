#pragma once

// Dense linear algebra and deterministic randomness used throughout the library.
// Everything here is a value type; nothing holds shared mutable state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "esom/errors.hpp"

namespace esom {

// Module-wide numerical tolerances. Callers may pass their own copy to override.
struct NumericTolerances {
    double symmetry = 1e-12;          // relative asymmetry accepted by sym_eig
    double jacobi_offdiag = 1e-15;    // stop when ||offdiag||_F <= this * ||A||_F
    int jacobi_max_sweeps = 100;
    double power_rel_change = 1e-15;  // power iteration stops on this relative change
    int power_max_iters = 20000;
};

class Vector {
public:
    Vector() = default;
    explicit Vector(std::size_t n, double fill = 0.0) : data_(n, fill) {}
    Vector(std::initializer_list<double> values) : data_(values) {}
    explicit Vector(std::vector<double> values) : data_(std::move(values)) {}

    static Vector zeros(std::size_t n) { return Vector(n, 0.0); }

    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    auto begin() noexcept { return data_.begin(); }
    auto end() noexcept { return data_.end(); }
    auto begin() const noexcept { return data_.begin(); }
    auto end() const noexcept { return data_.end(); }

    std::span<double> span() noexcept { return data_; }
    std::span<const double> span() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    // Copy of entries [offset, offset + len).
    Vector segment(std::size_t offset, std::size_t len) const {
        if (offset + len > size()) throw DimensionError("Vector::segment out of range");
        return Vector(std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(offset),
                                          data_.begin() + static_cast<std::ptrdiff_t>(offset + len)));
    }
    void set_segment(std::size_t offset, const Vector& v) {
        if (offset + v.size() > size()) throw DimensionError("Vector::set_segment out of range");
        std::copy(v.begin(), v.end(), data_.begin() + static_cast<std::ptrdiff_t>(offset));
    }

    Vector& operator+=(const Vector& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Vector& operator-=(const Vector& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Vector& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }
    // this += s * o
    Vector& axpy(double s, const Vector& o) {
        check_same(o);
        for (std::size_t i = 0; i < size(); ++i) data_[i] += s * o.data_[i];
        return *this;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    bool operator==(const Vector&) const = default;

private:
    void check_same(const Vector& o) const {
        if (o.size() != size()) throw DimensionError("vector length mismatch");
    }
    std::vector<double> data_;
};

inline Vector operator+(Vector a, const Vector& b) { return a += b; }
inline Vector operator-(Vector a, const Vector& b) { return a -= b; }
inline Vector operator*(double s, Vector a) { return a *= s; }
inline Vector operator*(Vector a, double s) { return a *= s; }
inline Vector operator-(Vector a) { return a *= -1.0; }

inline double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

inline double max_abs(const Vector& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::abs(v));
    return m;
}

class DenseMatrix {
public:
    DenseMatrix() = default;
    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> row_major)
        : rows_(rows), cols_(cols), data_(std::move(row_major)) {
        if (data_.size() != rows_ * cols_) throw DimensionError("DenseMatrix: entry count != rows*cols");
    }
    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw DimensionError("DenseMatrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static DenseMatrix zeros(std::size_t r, std::size_t c) { return DenseMatrix(r, c, 0.0); }
    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static DenseMatrix diagonal(const Vector& d) {
        DenseMatrix m(d.size(), d.size());
        for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool square() const noexcept { return rows_ == cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    const std::vector<double>& entries() const noexcept { return data_; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    DenseMatrix transpose() const {
        DenseMatrix t(cols_, rows_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    DenseMatrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
        if (r0 + nr > rows_ || c0 + nc > cols_) throw DimensionError("DenseMatrix::block out of range");
        DenseMatrix b(nr, nc);
        for (std::size_t i = 0; i < nr; ++i)
            for (std::size_t j = 0; j < nc; ++j) b(i, j) = (*this)(r0 + i, c0 + j);
        return b;
    }
    void set_block(std::size_t r0, std::size_t c0, const DenseMatrix& b) {
        if (r0 + b.rows() > rows_ || c0 + b.cols() > cols_)
            throw DimensionError("DenseMatrix::set_block out of range");
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) (*this)(r0 + i, c0 + j) = b(i, j);
    }

    Vector row(std::size_t i) const {
        Vector r(cols_);
        for (std::size_t j = 0; j < cols_; ++j) r[j] = (*this)(i, j);
        return r;
    }
    Vector col(std::size_t j) const {
        Vector c(rows_);
        for (std::size_t i = 0; i < rows_; ++i) c[i] = (*this)(i, j);
        return c;
    }
    Vector diag() const {
        Vector d(std::min(rows_, cols_));
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*this)(i, i);
        return d;
    }

    DenseMatrix& operator+=(const DenseMatrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
        return *this;
    }
    DenseMatrix& operator-=(const DenseMatrix& o) {
        check_same(o);
        for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
        return *this;
    }
    DenseMatrix& operator*=(double s) {
        for (double& v : data_) v *= s;
        return *this;
    }
    void add_to_diagonal(double s) {
        for (std::size_t i = 0; i < std::min(rows_, cols_); ++i) (*this)(i, i) += s;
    }

    double frobenius_norm() const {
        double s = 0.0;
        for (double v : data_) s += v * v;
        return std::sqrt(s);
    }
    double max_abs() const {
        double m = 0.0;
        for (double v : data_) m = std::max(m, std::abs(v));
        return m;
    }

    // max |a_ij - a_ji| relative to max(1, max|a|)
    double asymmetry() const {
        if (!square()) return INFINITY;
        double worst = 0.0;
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t j = i + 1; j < cols_; ++j)
                worst = std::max(worst, std::abs((*this)(i, j) - (*this)(j, i)));
        return worst / std::max(1.0, max_abs());
    }

    bool operator==(const DenseMatrix&) const = default;

private:
    void check_same(const DenseMatrix& o) const {
        if (o.rows_ != rows_ || o.cols_ != cols_) throw DimensionError("matrix shape mismatch");
    }
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
inline DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
inline DenseMatrix operator*(double s, DenseMatrix a) { return a *= s; }

inline DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vector operator*(const DenseMatrix& a, const Vector& x) {
    if (a.cols() != x.size()) throw DimensionError("matvec: dimension mismatch");
    Vector y(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

// a b^T
inline DenseMatrix outer(const Vector& a, const Vector& b) {
    DenseMatrix m(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
    return m;
}

// A ⊗ I_p
inline DenseMatrix kron_identity(const DenseMatrix& a, std::size_t p) {
    DenseMatrix k(a.rows() * p, a.cols() * p);
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (a(i, j) != 0.0)
                for (std::size_t r = 0; r < p; ++r) k(i * p + r, j * p + r) = a(i, j);
    return k;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi)

struct SymEig {
    Vector values;         // ascending
    DenseMatrix vectors;   // column k pairs with values[k]
};

inline SymEig sym_eig(const DenseMatrix& input, const NumericTolerances& tol = {}) {
    if (!input.square()) throw DimensionError("sym_eig: matrix is not square");
    if (!input.all_finite()) throw NumericalFailure("sym_eig: non-finite entry");
    if (input.asymmetry() > tol.symmetry) throw SymmetryError("sym_eig: matrix is not symmetric");

    const std::size_t n = input.rows();
    DenseMatrix a = input;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = s;
            a(j, i) = s;
        }
    DenseMatrix v = DenseMatrix::identity(n);
    const double scale = a.frobenius_norm();

    auto off_norm = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };

    bool converged = scale == 0.0 || n < 2;
    for (int sweep = 0; sweep < tol.jacobi_max_sweeps && !converged; ++sweep) {
        if (off_norm() <= tol.jacobi_offdiag * scale) {
            converged = true;
            break;
        }
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p);
                    const double vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged && off_norm() > tol.jacobi_offdiag * scale * 1e3)
        throw NumericalFailure("sym_eig: Jacobi iteration did not converge");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

    SymEig out{Vector(n), DenseMatrix(n, n)};
    for (std::size_t k = 0; k < n; ++k) {
        out.values[k] = a(order[k], order[k]);
        for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
    }
    return out;
}

// V f(Λ) Vᵀ for a symmetric matrix.
template <class F>
DenseMatrix sym_matrix_function(const SymEig& eig, F&& f) {
    const std::size_t n = eig.values.size();
    DenseMatrix out(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double fk = f(eig.values[k]);
        if (fk == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const double vik = eig.vectors(i, k) * fk;
            for (std::size_t j = 0; j < n; ++j) out(i, j) += vik * eig.vectors(j, k);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cholesky

class Cholesky {
public:
    explicit Cholesky(const DenseMatrix& a) : l_(a.rows(), a.cols()) {
        if (!a.square()) throw DimensionError("Cholesky: matrix is not square");
        if (!a.all_finite()) throw NumericalFailure("Cholesky: non-finite entry");
        const std::size_t n = a.rows();
        for (std::size_t j = 0; j < n; ++j) {
            double d = a(j, j);
            for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
            if (!(d > 0.0)) throw NotPositiveDefinite("Cholesky: non-positive pivot at column " + std::to_string(j));
            const double ljj = std::sqrt(d);
            l_(j, j) = ljj;
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = a(i, j);
                for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
                l_(i, j) = s / ljj;
            }
        }
    }

    std::size_t size() const noexcept { return l_.rows(); }
    const DenseMatrix& factor() const noexcept { return l_; }

    Vector solve(const Vector& b) const {
        const std::size_t n = size();
        if (b.size() != n) throw DimensionError("Cholesky::solve: rhs length mismatch");
        Vector y(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = b[i];
            for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * y[k];
            y[i] = s / l_(i, i);
        }
        Vector x(n);
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t k = ii + 1; k < n; ++k) s -= l_(k, ii) * x[k];
            x[ii] = s / l_(ii, ii);
        }
        return x;
    }

    DenseMatrix inverse() const {
        const std::size_t n = size();
        DenseMatrix inv(n, n);
        Vector e(n);
        for (std::size_t j = 0; j < n; ++j) {
            e[j] = 1.0;
            const Vector c = solve(e);
            e[j] = 0.0;
            for (std::size_t i = 0; i < n; ++i) inv(i, j) = c[i];
        }
        // symmetrize away rounding
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                const double s = 0.5 * (inv(i, j) + inv(j, i));
                inv(i, j) = s;
                inv(j, i) = s;
            }
        return inv;
    }

private:
    DenseMatrix l_;
};

inline Vector cholesky_solve(const DenseMatrix& a, const Vector& b) { return Cholesky(a).solve(b); }

// ---------------------------------------------------------------------------
// Spectral norm by power iteration on AᵀA

inline double spectral_norm(const DenseMatrix& a, const NumericTolerances& tol = {}) {
    if (!a.all_finite()) throw NumericalFailure("spectral_norm: non-finite entry");
    if (a.rows() == 0 || a.cols() == 0 || a.max_abs() == 0.0) return 0.0;
    const std::size_t n = a.cols();
    const DenseMatrix at = a.transpose();

    Vector v(n);
    for (std::size_t k = 0; k < n; ++k) v[k] = 1.0 + 0.5 * static_cast<double>((k * 7919 + 13) % 97) / 97.0;
    v *= 1.0 / norm(v);

    double lambda = 0.0;
    int stable = 0;
    for (int it = 0; it < tol.power_max_iters; ++it) {
        Vector w = at * (a * v);
        const double next = dot(v, w);
        const double wn = norm(w);
        if (wn == 0.0) return 0.0;
        v = (1.0 / wn) * std::move(w);
        const double change = std::abs(next - lambda);
        lambda = next;
        if (change <= tol.power_rel_change * std::abs(lambda)) {
            if (++stable >= 3) break;
        } else {
            stable = 0;
        }
    }
    // One last Rayleigh quotient with the converged vector.
    const Vector av = a * v;
    return std::max(std::sqrt(std::max(lambda, 0.0)), norm(av));
}

// ---------------------------------------------------------------------------
// Counter-based random numbers

namespace detail {
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}
} // namespace detail

// Output k of stream (seed, stream) is a pure function of (seed, stream, k), so
// per-node streams are obtained with split() and never need coordination.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) noexcept
        : seed_(seed), stream_(stream), key_(detail::splitmix64(seed ^ detail::splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream() const noexcept { return stream_; }
    std::uint64_t counter() const noexcept { return counter_; }

    Rng split(std::uint64_t child) const noexcept {
        return Rng(seed_, detail::splitmix64(stream_ * 0xD1B54A32D192ED03ULL + child + 1));
    }

    std::uint64_t next_u64() noexcept { return detail::splitmix64(key_ + 0x9E3779B97F4A7C15ULL * (counter_++)); }

    // Uniform on (0, 1].
    double uniform() noexcept { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Uniform integer in [0, bound).
    std::uint64_t below(std::uint64_t bound) {
        if (bound == 0) throw ParameterError("Rng::below: empty range");
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * bound;
            if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    // Standard normal by Box–Muller; the second variate of each pair is kept.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double th = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline Vector randn(Rng& rng, std::size_t n) {
    if (n == 0) throw ParameterError("randn: n must be >= 1");
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
    return v;
}

inline DenseMatrix randn_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    DenseMatrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

} // namespace esom
