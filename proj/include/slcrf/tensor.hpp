#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace slcrf {

// Dense 3D volume, row-major with the spectral axis (z) fastest.
template <typename T>
struct Tensor3 {
    std::size_t nx = 0, ny = 0, nz = 0;
    std::vector<T> values;

    Tensor3() = default;
    Tensor3(std::size_t x, std::size_t y, std::size_t z)
        : nx(x), ny(y), nz(z), values(x * y * z, T(0)) {}

    std::size_t size() const { return nx * ny * nz; }

    T& at(std::size_t x, std::size_t y, std::size_t z) {
        return values[(x * ny + y) * nz + z];
    }
    T at(std::size_t x, std::size_t y, std::size_t z) const {
        return values[(x * ny + y) * nz + z];
    }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }

    bool same_shape(const Tensor3& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

// Dense column-major matrix.
template <typename T>
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<T> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, T(0)) {}

    T& at(std::size_t r, std::size_t c) { return values[c * rows + r]; }
    T at(std::size_t r, std::size_t c) const { return values[c * rows + r]; }

    T* col(std::size_t c) { return values.data() + c * rows; }
    const T* col(std::size_t c) const { return values.data() + c * rows; }

    void fill(T v) { std::fill(values.begin(), values.end(), v); }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.at(i, i) = T(1);
        return m;
    }

    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t c = 0; c < cols; ++c)
            for (std::size_t r = 0; r < rows; ++r) t.at(c, r) = at(r, c);
        return t;
    }
};

// C = A * B, sequential accumulation order (k innermost) for reproducibility.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
    Matrix<T> c(a.rows, b.cols);
    for (std::size_t j = 0; j < b.cols; ++j)
        for (std::size_t i = 0; i < a.rows; ++i) {
            T acc = T(0);
            for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
            c.at(i, j) = acc;
        }
    return c;
}

template <typename T>
Matrix<T> operator+(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("matrix add: shape mismatch");
    Matrix<T> c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.values.size(); ++i) c.values[i] = a.values[i] + b.values[i];
    return c;
}

template <typename T>
Matrix<T> operator-(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("matrix sub: shape mismatch");
    Matrix<T> c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.values.size(); ++i) c.values[i] = a.values[i] - b.values[i];
    return c;
}

template <typename T>
Matrix<T> operator*(T s, const Matrix<T>& a) {
    Matrix<T> c(a.rows, a.cols);
    for (std::size_t i = 0; i < a.values.size(); ++i) c.values[i] = s * a.values[i];
    return c;
}

template <typename T>
T frobenius_inner(const Matrix<T>& a, const Matrix<T>& b) {
    if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("inner: shape mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < a.values.size(); ++i) acc += a.values[i] * b.values[i];
    return acc;
}

} // namespace slcrf
