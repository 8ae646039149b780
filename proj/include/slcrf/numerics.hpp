#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "slcrf/tensor.hpp"

namespace slcrf {

template <typename T>
bool all_finite(const T* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

// Max-subtracted softmax; stable for logit magnitudes up to ~1e4 and beyond.
template <typename T>
std::vector<T> softmax(const std::vector<T>& logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    if (!all_finite(logits.data(), logits.size()))
        throw std::invalid_argument("softmax: non-finite input");
    T mx = logits[0];
    for (T v : logits) mx = std::max(mx, v);
    std::vector<T> out(logits.size());
    T sum = T(0);
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (T& v : out) v /= sum;
    return out;
}

// In-place softmax over a raw column, same algorithm as above.
template <typename T>
void softmax_inplace(T* v, std::size_t n) {
    if (n == 0) throw std::invalid_argument("softmax: empty input");
    if (!all_finite(v, n)) throw std::invalid_argument("softmax: non-finite input");
    T mx = v[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = std::exp(v[i] - mx);
        sum += v[i];
    }
    for (std::size_t i = 0; i < n; ++i) v[i] /= sum;
}

// Column-wise l2 shrinkage: the proximal map of threshold * ||column||_2.
// Zero-norm columns stay zero (the prox solution there is the zero column).
template <typename T>
Matrix<T> column_shrink(const Matrix<T>& q, T threshold) {
    if (threshold < T(0)) throw std::invalid_argument("column_shrink: negative threshold");
    Matrix<T> out(q.rows, q.cols);
    for (std::size_t c = 0; c < q.cols; ++c) {
        T nrm = T(0);
        for (std::size_t r = 0; r < q.rows; ++r) nrm += q.at(r, c) * q.at(r, c);
        nrm = std::sqrt(nrm);
        if (nrm <= threshold) continue;
        T scale = (nrm - threshold) / nrm;
        for (std::size_t r = 0; r < q.rows; ++r) out.at(r, c) = scale * q.at(r, c);
    }
    return out;
}

// Element-wise soft threshold, the l1 alternative to column_shrink.
template <typename T>
Matrix<T> soft_threshold(const Matrix<T>& q, T threshold) {
    if (threshold < T(0)) throw std::invalid_argument("soft_threshold: negative threshold");
    Matrix<T> out(q.rows, q.cols);
    for (std::size_t i = 0; i < q.values.size(); ++i) {
        T v = q.values[i];
        if (v > threshold) out.values[i] = v - threshold;
        else if (v < -threshold) out.values[i] = v + threshold;
    }
    return out;
}

// Index reversal along all three axes; involution.
template <typename T>
Tensor3<T> rotate180(const Tensor3<T>& k) {
    Tensor3<T> out(k.nx, k.ny, k.nz);
    for (std::size_t x = 0; x < k.nx; ++x)
        for (std::size_t y = 0; y < k.ny; ++y)
            for (std::size_t z = 0; z < k.nz; ++z)
                out.at(k.nx - 1 - x, k.ny - 1 - y, k.nz - 1 - z) = k.at(x, y, z);
    return out;
}

template <typename T>
struct Norms {
    T frobenius;
    T l1;
    T l21;
};

template <typename T>
Norms<T> norms(const Matrix<T>& a) {
    T fro2 = T(0), l1 = T(0), l21 = T(0);
    for (std::size_t c = 0; c < a.cols; ++c) {
        T col2 = T(0);
        for (std::size_t r = 0; r < a.rows; ++r) {
            T v = a.at(r, c);
            col2 += v * v;
            l1 += std::abs(v);
        }
        fro2 += col2;
        l21 += std::sqrt(col2);
    }
    return {std::sqrt(fro2), l1, l21};
}

template <typename T>
T frobenius_norm(const Matrix<T>& a) {
    T acc = T(0);
    for (T v : a.values) acc += v * v;
    return std::sqrt(acc);
}

template <typename T>
T max_abs(const Matrix<T>& a) {
    T mx = T(0);
    for (T v : a.values) mx = std::max(mx, std::abs(v));
    return mx;
}

template <typename T>
int sgn(T v) {
    return (v > T(0)) - (v < T(0));
}

} // namespace slcrf
