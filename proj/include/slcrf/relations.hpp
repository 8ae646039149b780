#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "slcrf/data.hpp"
#include "slcrf/numerics.hpp"
#include "slcrf/rng.hpp"
#include "slcrf/tensor.hpp"

namespace slcrf {

struct PixelPos {
    std::size_t row = 0, col = 0;
};

// The capped pixel subset carrying the n-by-n coding state. `latent` is
// filled by the trainer (one K-dim column per pixel).
template <typename T>
struct WorkingSet {
    std::vector<std::size_t> pixel_ids; // linear r*width + c
    std::vector<PixelPos> positions;
    std::vector<int> label; // -1 unlabeled, else 0-based class
    Matrix<T> latent;       // K x n

    std::size_t size() const { return pixel_ids.size(); }
};

// All labeled pixels plus a seeded uniform sample of the unlabeled remainder,
// capped at `cap`; ids kept sorted for reproducibility.
template <typename T>
WorkingSet<T> select_working_set(const HsiScene& scene, const LabelSplit& split, std::size_t cap,
                                 std::uint64_t seed) {
    if (split.labeled.size() > cap)
        throw std::invalid_argument("working set: cap smaller than the labeled set");
    WorkingSet<T> ws;
    std::vector<std::size_t> ids = split.labeled;
    std::size_t room = cap - ids.size();
    if (room >= split.unlabeled.size()) {
        ids.insert(ids.end(), split.unlabeled.begin(), split.unlabeled.end());
    } else if (room > 0) {
        std::vector<std::size_t> pool = split.unlabeled;
        Rng rng(seed, "working-set");
        for (std::size_t i = pool.size(); i-- > 1;) {
            std::size_t j = rng.index(i + 1);
            std::swap(pool[i], pool[j]);
        }
        ids.insert(ids.end(), pool.begin(), pool.begin() + room);
    }
    std::sort(ids.begin(), ids.end());
    std::vector<bool> labeled_mask(scene.height * scene.width, false);
    for (std::size_t p : split.labeled) labeled_mask[p] = true;
    for (std::size_t p : ids) {
        ws.pixel_ids.push_back(p);
        ws.positions.push_back({p / scene.width, p % scene.width});
        ws.label.push_back(labeled_mask[p] ? static_cast<int>(scene.labels[p]) - 1 : -1);
    }
    return ws;
}

// Raw k-nearest-neighbor lists plus the symmetric closure used for the
// pairwise structures: (i,j) is an edge if either is in the other's list.
struct SpatialGraph {
    std::size_t k = 0;
    double omega = 1e3;
    std::vector<std::vector<std::size_t>> neighbors; // exactly min(k, n-1) each
    std::vector<std::vector<std::size_t>> adj;       // symmetric closure, sorted
};

inline double spatial_dist2(const PixelPos& a, const PixelPos& b) {
    const double dr = static_cast<double>(a.row) - static_cast<double>(b.row);
    const double dc = static_cast<double>(a.col) - static_cast<double>(b.col);
    return dr * dr + dc * dc;
}

// Ties in distance break toward the lower pixel index.
inline SpatialGraph knn_spatial(const std::vector<PixelPos>& positions, std::size_t k, double omega) {
    const std::size_t n = positions.size();
    if (n < 2) throw std::invalid_argument("knn_spatial: need at least two pixels");
    if (k < 1) throw std::invalid_argument("knn_spatial: k must be at least 1");
    if (omega <= 0.0) throw std::invalid_argument("knn_spatial: omega must be positive");
    SpatialGraph g;
    g.k = k;
    g.omega = omega;
    g.neighbors.resize(n);
    const std::size_t kk = std::min(k, n - 1);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < n; ++i) {
        cand.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) cand.emplace_back(spatial_dist2(positions[i], positions[j]), j);
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        g.neighbors[i].reserve(kk);
        for (std::size_t t = 0; t < kk; ++t) g.neighbors[i].push_back(cand[t].second);
    }
    g.adj.assign(n, {});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : g.neighbors[i]) {
            g.adj[i].push_back(j);
            g.adj[j].push_back(i);
        }
    for (auto& a : g.adj) {
        std::sort(a.begin(), a.end());
        a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    return g;
}

template <typename T>
struct SparseCodeResult {
    Matrix<T> Z;
    bool converged = false;
    std::size_t iterations = 0;
    T objective = T(0);
};

template <typename T>
T lasso_objective(const Matrix<T>& gram, const Matrix<T>& Z, T beta) {
    // ||A - AZ||_F^2 = tr((I-Z)^T G (I-Z)) with G = A^T A, computed without
    // materializing A.
    const std::size_t n = Z.cols;
    Matrix<T> GZ = matmul(gram, Z);
    T fid = T(0);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            // (I-Z)^T (G - GZ) diagonal accumulation
            const T imz = (i == j ? T(1) : T(0)) - Z.at(i, j);
            fid += imz * (gram.at(i, j) - GZ.at(i, j));
        }
    T l1 = T(0);
    for (T v : Z.values) l1 += std::abs(v);
    return fid + beta * l1;
}

// Self-expressive lasso init by proximal gradient (ISTA) on
// ||A - A Z||_F^2 + beta ||Z||_1, diag(Z) = 0, with a power-iteration
// Lipschitz step. The objective is non-increasing across iterations.
// Residual form keeps every product at dim x n^2 instead of n^3.
template <typename T>
SparseCodeResult<T> sparse_code_init(const Matrix<T>& features, T beta,
                                     std::size_t max_iters = 200, T tol = T(1e-9)) {
    const Matrix<T>& A = features;
    const std::size_t n = A.cols, dim = A.rows;
    // power iteration for sigma_max(A)^2 without forming the Gram matrix
    std::vector<T> v(n, T(1) / std::sqrt(T(n)));
    T eig = T(0);
    for (int it = 0; it < 60; ++it) {
        std::vector<T> w(dim, T(0));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < dim; ++i) w[i] += A.at(i, j) * v[j];
        std::vector<T> u(n, T(0));
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < dim; ++i) u[j] += A.at(i, j) * w[i];
        T nrm = T(0);
        for (T x : u) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (nrm == T(0)) break;
        for (std::size_t i = 0; i < n; ++i) v[i] = u[i] / nrm;
        eig = nrm;
    }
    const T lip = T(2) * std::max(eig, T(1e-12));
    const T step = T(1) / lip;

    SparseCodeResult<T> res;
    res.Z = Matrix<T>(n, n);
    Matrix<T> resid = A; // A - A Z at Z = 0
    auto objective_of = [&](const Matrix<T>& r, const Matrix<T>& z) {
        T fid = T(0);
        for (T x : r.values) fid += x * x;
        T l1 = T(0);
        for (T x : z.values) l1 += std::abs(x);
        return fid + beta * l1;
    };
    T prev_obj = objective_of(resid, res.Z);
    for (std::size_t it = 0; it < max_iters; ++it) {
        // grad = -2 A^T (A - A Z)
        Matrix<T> next(n, n);
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < n; ++i) {
                T g = T(0);
                for (std::size_t k = 0; k < dim; ++k) g += A.at(k, i) * resid.at(k, j);
                next.at(i, j) = res.Z.at(i, j) + step * T(2) * g;
            }
        next = soft_threshold(next, step * beta);
        for (std::size_t i = 0; i < n; ++i) next.at(i, i) = T(0);
        res.Z = std::move(next);
        res.iterations = it + 1;
        Matrix<T> AZ = matmul(A, res.Z);
        resid = A - AZ;
        const T obj = objective_of(resid, res.Z);
        if (std::abs(prev_obj - obj) <= tol * std::max(T(1), std::abs(prev_obj))) {
            res.converged = true;
            res.objective = obj;
            return res;
        }
        prev_obj = obj;
    }
    res.objective = prev_obj;
    return res;
}

template <typename T>
struct RelationshipMatrices {
    Matrix<T> S1, S2, S;
};

// S1 = |Z + Z^T| / 2; S2 is the Gaussian spatial kernel on graph edges;
// S = S1 + gamma * S2. All three symmetric by construction.
template <typename T>
RelationshipMatrices<T> relationship_matrix(const Matrix<T>& Z, const SpatialGraph& graph,
                                            const std::vector<PixelPos>& positions, T gamma,
                                            T omega) {
    if (Z.rows != Z.cols || Z.rows != positions.size())
        throw std::invalid_argument("relationship_matrix: shape mismatch");
    if (gamma < T(0)) throw std::invalid_argument("relationship_matrix: gamma must be >= 0");
    const std::size_t n = Z.rows;
    RelationshipMatrices<T> out;
    out.S1 = Matrix<T>(n, n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i)
            out.S1.at(i, j) = std::abs(Z.at(i, j) + Z.at(j, i)) / T(2);
    out.S2 = Matrix<T>(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : graph.adj[i])
            out.S2.at(i, j) =
                static_cast<T>(std::exp(-spatial_dist2(positions[i], positions[j]) / double(omega)));
    out.S = out.S1 + gamma * out.S2;
    return out;
}

// Debug dump: u32 rows, u32 cols, then column-major f32 values.
template <typename T>
void dump_matrix_f32(const Matrix<T>& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    const std::uint32_t dims[2] = {static_cast<std::uint32_t>(m.rows),
                                   static_cast<std::uint32_t>(m.cols)};
    f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (T v : m.values) {
        const float x = static_cast<float>(v);
        f.write(reinterpret_cast<const char*>(&x), sizeof(float));
    }
}

} // namespace slcrf
