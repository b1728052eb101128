#pragma once

#include <array>
#include <cassert>
#include <cstddef>

namespace greybox {

// Fixed-capacity dense containers for the state dimension D <= 3 used by the
// RC models. No heap traffic, and the scalar type T may be double or an AD
// variable, so the same Kalman/simulation code serves both value and gradient
// paths. Accumulations start from the first term rather than a zero of T to
// avoid spurious tape nodes.

template <typename T>
class Vec {
public:
    Vec() : n_(0) {}
    explicit Vec(int n) : n_(n) { assert(n >= 0 && n <= 3); }
    Vec(int n, const T& fill) : n_(n) {
        assert(n >= 0 && n <= 3);
        for (int i = 0; i < n; ++i) a_[static_cast<std::size_t>(i)] = fill;
    }

    int size() const { return n_; }
    T& operator[](int i) { assert(i >= 0 && i < n_); return a_[static_cast<std::size_t>(i)]; }
    const T& operator[](int i) const { assert(i >= 0 && i < n_); return a_[static_cast<std::size_t>(i)]; }

private:
    int n_;
    std::array<T, 3> a_{};
};

template <typename T>
class Mat {
public:
    Mat() : r_(0), c_(0) {}
    Mat(int r, int c) : r_(r), c_(c) { assert(r >= 0 && c >= 0 && r * c <= 9); }
    Mat(int r, int c, const T& fill) : r_(r), c_(c) {
        assert(r >= 0 && c >= 0 && r * c <= 9);
        for (int i = 0; i < r * c; ++i) a_[static_cast<std::size_t>(i)] = fill;
    }

    int rows() const { return r_; }
    int cols() const { return c_; }

    T& operator()(int i, int j) {
        assert(i >= 0 && i < r_ && j >= 0 && j < c_);
        return a_[static_cast<std::size_t>(i * c_ + j)];
    }
    const T& operator()(int i, int j) const {
        assert(i >= 0 && i < r_ && j >= 0 && j < c_);
        return a_[static_cast<std::size_t>(i * c_ + j)];
    }

private:
    int r_, c_;
    std::array<T, 9> a_{};
};

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    assert(a.cols() == b.rows());
    Mat<T> out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.cols(); ++j) {
            T acc = a(i, 0) * b(0, j);
            for (int k = 1; k < a.cols(); ++k) acc = acc + a(i, k) * b(k, j);
            out(i, j) = acc;
        }
    }
    return out;
}

template <typename T>
Vec<T> matvec(const Mat<T>& a, const Vec<T>& x) {
    assert(a.cols() == x.size());
    Vec<T> out(a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        T acc = a(i, 0) * x[0];
        for (int k = 1; k < a.cols(); ++k) acc = acc + a(i, k) * x[k];
        out[i] = acc;
    }
    return out;
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
    Mat<T> out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

template <typename T>
Mat<T> operator+(const Mat<T>& a, const Mat<T>& b) {
    assert(a.rows() == b.rows() && a.cols() == b.cols());
    Mat<T> out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) + b(i, j);
    return out;
}

template <typename T>
Mat<T> operator-(const Mat<T>& a, const Mat<T>& b) {
    assert(a.rows() == b.rows() && a.cols() == b.cols());
    Mat<T> out(a.rows(), a.cols());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(i, j) = a(i, j) - b(i, j);
    return out;
}

template <typename T>
Vec<T> operator+(const Vec<T>& a, const Vec<T>& b) {
    assert(a.size() == b.size());
    Vec<T> out(a.size());
    for (int i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

} // namespace greybox
