#pragma once

// Dense double-precision vector/matrix kernels, elementwise activations,
// a stable softmax, a seeded cross-platform RNG and a central-difference
// gradient checker. Everything here is a pure function; no global state.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hcaseq {

using Vec = std::vector<double>;

// Row-major dense matrix.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {
        if (r < 0 || c < 0) throw std::invalid_argument("Mat: negative shape");
    }

    double& operator()(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    double* row_ptr(int r) { return a.data() + static_cast<size_t>(r) * cols; }
    const double* row_ptr(int r) const { return a.data() + static_cast<size_t>(r) * cols; }

    Vec row(int r) const {
        return Vec(row_ptr(r), row_ptr(r) + cols);
    }
    void set_row(int r, const Vec& v) {
        if (static_cast<int>(v.size()) != cols) throw std::invalid_argument("Mat::set_row: length mismatch");
        std::copy(v.begin(), v.end(), row_ptr(r));
    }
    size_t size() const { return a.size(); }
};

inline Vec zeros(int n) { return Vec(static_cast<size_t>(n), 0.0); }

inline void check_finite(const Vec& v, const std::string& what) {
    for (double x : v)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + what);
}

inline void check_finite(const Mat& m, const std::string& what) {
    for (double x : m.a)
        if (!std::isfinite(x)) throw std::runtime_error("non-finite value in " + what);
}

// ---------------------------------------------------------------------------
// elementwise kernels
// ---------------------------------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Vec sigmoid(const Vec& v) {
    Vec out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = sigmoid(v[i]);
    return out;
}

inline Vec tanh_vec(const Vec& v) {
    Vec out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = std::tanh(v[i]);
    return out;
}

inline Vec hadamard(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("hadamard: length mismatch");
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
    return out;
}

inline double dot(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline Vec add(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("add: length mismatch");
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
    return out;
}

inline Vec sub(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("sub: length mismatch");
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
    return out;
}

// y += alpha * x
inline void axpy(double alpha, const Vec& x, Vec& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec scaled(double alpha, const Vec& x) {
    Vec out(x.size());
    for (size_t i = 0; i < x.size(); ++i) out[i] = alpha * x[i];
    return out;
}

// ---------------------------------------------------------------------------
// matrix-vector kernels
// ---------------------------------------------------------------------------

inline Vec matvec(const Mat& m, const Vec& v) {
    if (m.cols != static_cast<int>(v.size()))
        throw std::invalid_argument("matvec: dimension mismatch (" + std::to_string(m.rows) + "x" +
                                    std::to_string(m.cols) + " * " + std::to_string(v.size()) + ")");
    Vec out(static_cast<size_t>(m.rows), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row_ptr(r);
        double s = 0.0;
        for (int c = 0; c < m.cols; ++c) s += row[c] * v[c];
        out[r] = s;
    }
    return out;
}

// m^T * v without materializing the transpose.
inline Vec matvec_t(const Mat& m, const Vec& v) {
    if (m.rows != static_cast<int>(v.size()))
        throw std::invalid_argument("matvec_t: dimension mismatch");
    Vec out(static_cast<size_t>(m.cols), 0.0);
    for (int r = 0; r < m.rows; ++r) {
        const double* row = m.row_ptr(r);
        const double s = v[r];
        for (int c = 0; c < m.cols; ++c) out[c] += row[c] * s;
    }
    return out;
}

// m += u * v^T
inline void add_outer(Mat& m, const Vec& u, const Vec& v) {
    if (m.rows != static_cast<int>(u.size()) || m.cols != static_cast<int>(v.size()))
        throw std::invalid_argument("add_outer: dimension mismatch");
    for (int r = 0; r < m.rows; ++r) {
        double* row = m.row_ptr(r);
        const double s = u[r];
        for (int c = 0; c < m.cols; ++c) row[c] += s * v[c];
    }
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

// Max-subtracted softmax; exact normalization by construction.
inline Vec softmax(const Vec& e) {
    if (e.empty()) throw std::invalid_argument("softmax: empty input");
    check_finite(e, "softmax input");
    double mx = e[0];
    for (double x : e) mx = std::max(mx, x);
    Vec out(e.size());
    double sum = 0.0;
    for (size_t i = 0; i < e.size(); ++i) {
        out[i] = std::exp(e[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

// ---------------------------------------------------------------------------
// seeded RNG
// ---------------------------------------------------------------------------

// Deterministic generator: std::mt19937_64 (fully specified by the standard)
// with hand-rolled output mappings, since the std distributions are
// implementation-defined. Identical seeds give identical streams on every
// platform.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t raw() { return engine_(); }

    // Uniform double in [0, 1): top 53 bits of one draw scaled by 2^-53.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    // Unbiased integer in [0, n): rejection of the incomplete low range,
    // then modulo. Expected < 2 draws for any n.
    uint64_t below(uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const uint64_t rem = (std::numeric_limits<uint64_t>::max() % n + 1) % n;  // 2^64 mod n
        uint64_t x = engine_();
        while (x < rem) x = engine_();
        return x % n;
    }

    // Fisher-Yates; std::shuffle is implementation-defined, this is not.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

// Central differences (f(p+eps*e_i) - f(p-eps*e_i)) / (2 eps) per coordinate.
inline Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& p, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Vec grad(p.size());
    Vec work = p;
    for (size_t i = 0; i < p.size(); ++i) {
        const double saved = work[i];
        work[i] = saved + eps;
        const double up = f(work);
        work[i] = saved - eps;
        const double down = f(work);
        work[i] = saved;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("finite_diff_grad: non-finite objective at coordinate " + std::to_string(i));
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

}  // namespace hcaseq
