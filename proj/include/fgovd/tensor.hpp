#pragma once

// Small dense row-major matrix of doubles. Everything in this project is
// desk-scale (d = 64, 8x8 grids), so plain loops are all we need.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "fgovd/rng.hpp"

namespace fgovd {

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return a.size(); }
    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
        return m;
    }

    static Mat row(const std::vector<double>& v) {
        Mat m(1, static_cast<int>(v.size()));
        m.a = v;
        return m;
    }

    static Mat gaussian(int r, int c, Rng& rng, double scale = 1.0) {
        Mat m(r, c);
        for (auto& x : m.a) x = rng.gaussian() * scale;
        return m;
    }

    std::vector<double> row_vec(int r) const {
        return std::vector<double>(a.begin() + static_cast<size_t>(r) * cols,
                                   a.begin() + static_cast<size_t>(r + 1) * cols);
    }

    void set_row(int r, const std::vector<double>& v) {
        assert(static_cast<int>(v.size()) == cols);
        std::copy(v.begin(), v.end(), a.begin() + static_cast<size_t>(r) * cols);
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: shape mismatch");
    Mat out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i) {
        for (int k = 0; k < x.cols; ++k) {
            const double xv = x.at(i, k);
            if (xv == 0.0) continue;
            const double* yr = &y.a[static_cast<size_t>(k) * y.cols];
            double* outr = &out.a[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < y.cols; ++j) outr[j] += xv * yr[j];
        }
    }
    return out;
}

inline Mat transpose(const Mat& x) {
    Mat out(x.cols, x.rows);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(j, i) = x.at(i, j);
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

inline std::vector<double> normalized(std::vector<double> a, double eps = 1e-12) {
    double n = norm(a);
    if (n < eps) throw std::domain_error("normalize: zero vector");
    for (auto& x : a) x /= n;
    return a;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b, double eps = 1e-12) {
    double na = norm(a), nb = norm(b);
    if (na < eps || nb < eps) throw std::domain_error("cosine: zero vector");
    return dot(a, b) / (na * nb);
}

inline std::vector<double> axpy(double alpha, const std::vector<double>& x, std::vector<double> y) {
    assert(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
    return y;
}

inline double frobenius_distance(const Mat& a, const Mat& b) {
    assert(a.same_shape(b));
    double s = 0.0;
    for (size_t i = 0; i < a.a.size(); ++i) {
        double d = a.a[i] - b.a[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace fgovd
