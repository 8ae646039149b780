#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "slcrf/numerics.hpp"
#include "slcrf/relations.hpp"
#include "slcrf/rng.hpp"
#include "slcrf/tensor.hpp"

namespace slcrf {

// Eq-literal pairwise rewards affinity mass regardless of labels; the default
// smoothness form penalizes probability disagreement across strong edges.
enum class PairwiseMode { Smoothness, PaperLiteral };

template <typename T>
struct CrfWeights {
    Matrix<T> W;       // c x K
    std::vector<T> b;  // c
    T h2 = T(0);
    T h2_max = T(1e3);

    std::size_t classes() const { return W.rows; }
    std::size_t latent_dim() const { return W.cols; }
};

template <typename T>
CrfWeights<T> make_crf_weights(std::size_t classes, std::size_t latent_dim, T h2_max = T(1e3)) {
    CrfWeights<T> w;
    w.W = Matrix<T>(classes, latent_dim);
    w.b.assign(classes, T(0));
    w.h2 = T(0);
    w.h2_max = h2_max;
    return w;
}

template <typename T>
struct LabelAssignment {
    Matrix<T> probs;               // c x n, each column sums to 1
    std::vector<std::size_t> hard; // argmax per column, ties -> lowest class
};

template <typename T>
LabelAssignment<T> classify(const Matrix<T>& latent, const CrfWeights<T>& weights) {
    if (latent.rows != weights.latent_dim())
        throw std::invalid_argument("classify: latent dimension mismatch");
    const std::size_t c = weights.classes(), n = latent.cols;
    LabelAssignment<T> out;
    out.probs = Matrix<T>(c, n);
    out.hard.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        T* p = out.probs.col(i);
        for (std::size_t t = 0; t < c; ++t) {
            T acc = weights.b[t];
            for (std::size_t k = 0; k < weights.latent_dim(); ++k)
                acc += weights.W.at(t, k) * latent.at(k, i);
            p[t] = acc;
        }
        softmax_inplace(p, c);
        std::size_t best = 0;
        for (std::size_t t = 1; t < c; ++t)
            if (p[t] > p[best]) best = t;
        out.hard[i] = best;
    }
    return out;
}

// Cross-entropy over labeled pixels only; labels use -1 for unlabeled.
template <typename T>
T unary_energy(const LabelAssignment<T>& assignment, const std::vector<int>& labels) {
    if (labels.size() != assignment.probs.cols)
        throw std::invalid_argument("unary_energy: label count mismatch");
    T acc = T(0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0) continue;
        const T p = std::max(assignment.probs.at(static_cast<std::size_t>(labels[i]), i), T(1e-12));
        acc += -std::log(p);
    }
    return acc;
}

// Smoothness mode: sum_i sum_{j in adj(i)} S_ij ||y_i - y_j||^2 / sum_j S_ij,
// both edge orientations counted; zero-degree (or zero-mass) rows contribute 0.
// Paper-literal mode: sum_i sum_j -h2 * S_ij with the learned scalar h2.
template <typename T>
T pairwise_energy(const LabelAssignment<T>& assignment, const Matrix<T>& S,
                  const SpatialGraph& graph, PairwiseMode mode, T h2) {
    const std::size_t n = assignment.probs.cols;
    const std::size_t c = assignment.probs.rows;
    T acc = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        if (mode == PairwiseMode::PaperLiteral) {
            for (std::size_t j : graph.adj[i]) acc += -h2 * S.at(i, j);
            continue;
        }
        T denom = T(0);
        for (std::size_t j : graph.adj[i]) denom += S.at(i, j);
        if (denom <= T(0)) continue;
        T num = T(0);
        for (std::size_t j : graph.adj[i]) {
            T d2 = T(0);
            for (std::size_t t = 0; t < c; ++t) {
                const T d = assignment.probs.at(t, i) - assignment.probs.at(t, j);
                d2 += d * d;
            }
            num += S.at(i, j) * d2;
        }
        acc += num / denom;
    }
    return acc;
}

template <typename T>
T crf_energy(const Matrix<T>& latent, const CrfWeights<T>& weights, const Matrix<T>& S,
             const SpatialGraph& graph, const std::vector<int>& labels, T eta, PairwiseMode mode) {
    LabelAssignment<T> a = classify(latent, weights);
    return unary_energy(a, labels) + eta * pairwise_energy(a, S, graph, mode, weights.h2);
}

template <typename T>
struct CrfGradients {
    Matrix<T> dW;
    std::vector<T> db;
    T dh2 = T(0);
};

namespace detail {

// d(pairwise)/d(probs column u) in smoothness mode; both orientations.
template <typename T>
void smoothness_prob_grads(const LabelAssignment<T>& a, const Matrix<T>& S,
                           const SpatialGraph& graph, Matrix<T>& dY) {
    const std::size_t n = a.probs.cols, c = a.probs.rows;
    std::vector<T> denom(n, T(0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j : graph.adj[i]) denom[i] += S.at(i, j);
    dY = Matrix<T>(c, n);
    for (std::size_t i = 0; i < n; ++i) {
        if (denom[i] <= T(0)) continue;
        for (std::size_t j : graph.adj[i]) {
            const T w = S.at(i, j) / denom[i];
            for (std::size_t t = 0; t < c; ++t) {
                const T d = a.probs.at(t, i) - a.probs.at(t, j);
                dY.at(t, i) += T(2) * w * d;
                dY.at(t, j) -= T(2) * w * d;
            }
        }
    }
}

// Chain a probability-space gradient through the softmax Jacobian:
// dLogits = y .* g - (y . g) y.
template <typename T>
void softmax_vjp(const T* y, const T* g, std::size_t c, T* out) {
    T dot = T(0);
    for (std::size_t t = 0; t < c; ++t) dot += y[t] * g[t];
    for (std::size_t t = 0; t < c; ++t) out[t] = y[t] * (g[t] - dot);
}

} // namespace detail

// Gradient of L4 = lambda2 * (unary + eta * pairwise) w.r.t. the CRF
// parameters. The unary part is the softmax-minus-onehot form over labeled
// pixels; in smoothness mode the pairwise part also reaches W and b through
// the probabilities, while in paper-literal mode it only reaches h2.
template <typename T>
CrfGradients<T> h_gradients(const Matrix<T>& latent, const LabelAssignment<T>& assignment,
                            const std::vector<int>& labels, const Matrix<T>& S,
                            const SpatialGraph& graph, T lambda2, T eta, PairwiseMode mode) {
    const std::size_t c = assignment.probs.rows, n = assignment.probs.cols;
    const std::size_t K = latent.rows;
    CrfGradients<T> g;
    g.dW = Matrix<T>(c, K);
    g.db.assign(c, T(0));

    std::vector<T> dlogit(c);
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0) continue;
        for (std::size_t t = 0; t < c; ++t) {
            dlogit[t] = assignment.probs.at(t, i);
            if (static_cast<int>(t) == labels[i]) dlogit[t] -= T(1);
            dlogit[t] *= lambda2;
        }
        for (std::size_t t = 0; t < c; ++t) {
            g.db[t] += dlogit[t];
            for (std::size_t k = 0; k < K; ++k) g.dW.at(t, k) += dlogit[t] * latent.at(k, i);
        }
    }

    if (mode == PairwiseMode::Smoothness) {
        Matrix<T> dY;
        detail::smoothness_prob_grads(assignment, S, graph, dY);
        for (std::size_t i = 0; i < n; ++i) {
            detail::softmax_vjp(assignment.probs.col(i), dY.col(i), c, dlogit.data());
            for (std::size_t t = 0; t < c; ++t) {
                const T v = lambda2 * eta * dlogit[t];
                g.db[t] += v;
                for (std::size_t k = 0; k < K; ++k) g.dW.at(t, k) += v * latent.at(k, i);
            }
        }
        g.dh2 = T(0);
    } else {
        T s = T(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j : graph.adj[i]) s += S.at(i, j);
        g.dh2 = -lambda2 * eta * s;
    }
    return g;
}

template <typename T>
void h_update(CrfWeights<T>& weights, const CrfGradients<T>& grads, T tau) {
    for (std::size_t i = 0; i < weights.W.values.size(); ++i)
        weights.W.values[i] -= tau * grads.dW.values[i];
    for (std::size_t i = 0; i < weights.b.size(); ++i) weights.b[i] -= tau * grads.db[i];
    weights.h2 = std::min(std::max(weights.h2 - tau * grads.dh2, T(0)), weights.h2_max);
}

// Per-pixel latent seed of the CRF energy for the encoder backward pass:
// d(lambda2 * (unary + eta * pairwise)) / d x_i, one K-column per pixel.
template <typename T>
Matrix<T> crf_latent_seeds(const Matrix<T>& latent, const CrfWeights<T>& weights,
                           const LabelAssignment<T>& assignment, const std::vector<int>& labels,
                           const Matrix<T>& S, const SpatialGraph& graph, T lambda2, T eta,
                           PairwiseMode mode) {
    const std::size_t c = assignment.probs.rows, n = assignment.probs.cols;
    const std::size_t K = latent.rows;
    Matrix<T> seeds(K, n);
    std::vector<T> dlogit(c);
    Matrix<T> dY;
    if (mode == PairwiseMode::Smoothness)
        detail::smoothness_prob_grads(assignment, S, graph, dY);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dlogit.begin(), dlogit.end(), T(0));
        if (labels[i] >= 0)
            for (std::size_t t = 0; t < c; ++t) {
                T v = assignment.probs.at(t, i);
                if (static_cast<int>(t) == labels[i]) v -= T(1);
                dlogit[t] += lambda2 * v;
            }
        if (mode == PairwiseMode::Smoothness) {
            std::vector<T> pl(c);
            detail::softmax_vjp(assignment.probs.col(i), dY.col(i), c, pl.data());
            for (std::size_t t = 0; t < c; ++t) dlogit[t] += lambda2 * eta * pl[t];
        }
        for (std::size_t k = 0; k < K; ++k) {
            T acc = T(0);
            for (std::size_t t = 0; t < c; ++t) acc += weights.W.at(t, k) * dlogit[t];
            seeds.at(k, i) = acc;
        }
    }
    return seeds;
}

// Plain gradient-descent training of the softmax head on frozen features;
// used by the feature-only ablation and the PCA baseline.
template <typename T>
CrfWeights<T> train_softmax_head(const Matrix<T>& features, const std::vector<int>& labels,
                                 std::size_t classes, std::size_t steps, T lr) {
    CrfWeights<T> w = make_crf_weights<T>(classes, features.rows);
    SpatialGraph empty_graph;
    empty_graph.adj.assign(features.cols, {});
    Matrix<T> empty_s(0, 0); // untouched: no edges, paper-literal mode
    for (std::size_t s = 0; s < steps; ++s) {
        LabelAssignment<T> a = classify(features, w);
        CrfGradients<T> g = h_gradients(features, a, labels, empty_s, empty_graph, T(1), T(0),
                                        PairwiseMode::PaperLiteral);
        h_update(w, g, lr);
    }
    return w;
}

} // namespace slcrf
