#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "slcrf/optimizer.hpp"

namespace slcrf {

// Finite-difference verification of the hand-coded gradients, shared by the
// unit tests, the acceptance suite, and the gradcheck CLI command.

struct FdReport {
    double max_rel = 0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool pass(double tol) const { return checked > 0 && max_rel <= tol; }
};

inline double fd_rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// ReLU kinks poison central differences; the margin is the smallest |pre-
// activation| seen in a full forward pass over the working set.
template <typename T>
T preactivation_margin(TrainContext<T>& ctx) {
    T margin = std::numeric_limits<T>::max();
    ForwardCache<T> cache;
    for (const auto& patch : ctx.patches) {
        forward(ctx.net, patch, cache);
        for (const auto& lc : cache) {
            if (lc.out_vec.empty())
                for (const auto& t : lc.pre_act)
                    for (T v : t.values) margin = std::min(margin, std::abs(v));
            else
                for (T v : lc.pre_act_vec) margin = std::min(margin, std::abs(v));
        }
    }
    return margin;
}

// A small joint training state with every objective term active: random
// patches, a 2x3 pixel grid, one labeled pixel per class.
template <typename T>
TrainContext<T> make_gradcheck_context(std::uint64_t seed, PairwiseMode mode,
                                       bool paper_literal_seed = false, bool with_bn = false) {
    TrainContext<T> ctx;
    Hyperparams<T>& hp = ctx.hp;
    hp.b = 5;
    hp.latent = 4;
    hp.k = 2;
    hp.lambda1 = T(0.05);
    hp.lambda2 = T(0.7);
    hp.eta = T(0.4);
    hp.beta = T(0.2);
    hp.gamma = T(0.5);
    hp.alpha = T(0.0005);
    hp.epsilon = T(0.01);
    hp.pairwise_mode = mode;
    hp.paper_literal_latent_seed = paper_literal_seed;
    hp.seed = seed;

    const std::size_t d = 8, n = 6, classes = 3;
    ctx.net = make_mirrored_cae<T>(5, d, {2, 3}, 3, hp.latent, with_bn);
    Rng wrng(seed, "weights");
    init_params(ctx.net, wrng);
    // zero biases leave dead units with exactly-zero pre-activations, which
    // sit on the ReLU kink; jitter them for a differentiable neighborhood
    for (auto& L : ctx.net.layers) {
        for (auto& b : L.bias) b = T(0.1) * static_cast<T>(wrng.normal());
        for (auto& b : L.bn_beta) b = T(0.1) * static_cast<T>(wrng.normal());
    }
    ctx.head = make_crf_weights<T>(classes, hp.latent);
    Rng hrng(seed, "head");
    for (auto& v : ctx.head.W.values) v = T(0.5) * static_cast<T>(hrng.normal());
    for (auto& v : ctx.head.b) v = T(0.2) * static_cast<T>(hrng.normal());
    ctx.head.h2 = T(0.3);

    Rng prng(seed, "patches");
    ctx.ws.pixel_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        ctx.ws.pixel_ids[i] = i;
        ctx.ws.positions.push_back({i / 3, i % 3});
        Tensor3<T> patch(5, 5, d);
        for (auto& v : patch.values) v = static_cast<T>(prng.uniform());
        ctx.patches.push_back(std::move(patch));
    }
    ctx.ws.label = {0, 1, 2, -1, -1, -1};
    ctx.graph = knn_spatial(ctx.ws.positions, hp.k, static_cast<double>(hp.omega));

    Rng zrng(seed, "state");
    ctx.state.Z = Matrix<T>(n, n);
    ctx.state.M = Matrix<T>(n, n);
    ctx.state.Tm = Matrix<T>(n, n);
    for (auto& v : ctx.state.Z.values) v = T(0.15) * static_cast<T>(zrng.normal());
    for (std::size_t i = 0; i < n; ++i) ctx.state.Z.at(i, i) = T(0);
    for (auto& v : ctx.state.M.values) v = T(0.15) * static_cast<T>(zrng.normal());
    for (auto& v : ctx.state.Tm.values) v = T(0.02) * static_cast<T>(zrng.normal());

    refresh_latent(ctx);
    ctx.rel = relationship_matrix(ctx.state.Z, ctx.graph, ctx.ws.positions, hp.gamma, hp.omega);
    return ctx;
}

// Central differences of the full theta objective against the analytic
// full-batch gradient, every parameter.
template <typename T>
FdReport fd_check_theta(TrainContext<T>& ctx, T h = T(1e-5)) {
    Gradients<T> analytic = theta_full_gradient(ctx);
    FdReport rep;
    const std::size_t np = param_count(ctx.net);
    for (std::size_t i = 0; i < np; ++i) {
        T& p = param_at(ctx.net, i);
        const T saved = p;
        p = saved + h;
        const T lp = theta_loss(ctx);
        p = saved - h;
        const T lm = theta_loss(ctx);
        p = saved;
        const double fd = (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * double(h));
        const double rel = fd_rel_error(static_cast<double>(grad_at(analytic, i)), fd);
        if (rel > rep.max_rel) {
            rep.max_rel = rel;
            rep.worst_index = i;
        }
        ++rep.checked;
    }
    refresh_latent(ctx);
    return rep;
}

// Central differences of L4 against h_gradients for W, b, and (in
// paper-literal mode) h2.
template <typename T>
FdReport fd_check_h(TrainContext<T>& ctx, T h = T(1e-6)) {
    LabelAssignment<T> a = classify(ctx.ws.latent, ctx.head);
    CrfGradients<T> analytic =
        h_gradients(ctx.ws.latent, a, ctx.ws.label, ctx.affinity(), ctx.graph, ctx.hp.lambda2,
                    ctx.hp.eta, ctx.hp.pairwise_mode);
    FdReport rep;
    auto probe = [&](T& slot, double ga) {
        const T saved = slot;
        slot = saved + h;
        const T lp = h_objective(ctx);
        slot = saved - h;
        const T lm = h_objective(ctx);
        slot = saved;
        const double fd = (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * double(h));
        const double rel = fd_rel_error(ga, fd);
        if (rel > rep.max_rel) {
            rep.max_rel = rel;
            rep.worst_index = rep.checked;
        }
        ++rep.checked;
    };
    for (std::size_t i = 0; i < ctx.head.W.values.size(); ++i)
        probe(ctx.head.W.values[i], static_cast<double>(analytic.dW.values[i]));
    for (std::size_t i = 0; i < ctx.head.b.size(); ++i)
        probe(ctx.head.b[i], static_cast<double>(analytic.db[i]));
    if (ctx.hp.pairwise_mode == PairwiseMode::PaperLiteral)
        probe(ctx.head.h2, static_cast<double>(analytic.dh2));
    return rep;
}

// Central differences of the Z objective against z_gradient, skipping entries
// within `kink_margin` of a sign change of Z + Z^T.
template <typename T>
FdReport fd_check_z(TrainContext<T>& ctx, T h = T(1e-6), T kink_margin = T(1e-3)) {
    Matrix<T> analytic = z_gradient(ctx);
    FdReport rep;
    const std::size_t n = ctx.state.Z.rows;
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < n; ++i) {
            if (i == j) continue; // diagonal is pinned to zero
            if (std::abs(ctx.state.Z.at(i, j) + ctx.state.Z.at(j, i)) < kink_margin) continue;
            T& slot = ctx.state.Z.at(i, j);
            const T saved = slot;
            slot = saved + h;
            const T lp = z_objective(ctx);
            slot = saved - h;
            const T lm = z_objective(ctx);
            slot = saved;
            const double fd =
                (static_cast<double>(lp) - static_cast<double>(lm)) / (2.0 * double(h));
            const double rel = fd_rel_error(static_cast<double>(analytic.at(i, j)), fd);
            if (rel > rep.max_rel) {
                rep.max_rel = rel;
                rep.worst_index = j * n + i;
            }
            ++rep.checked;
        }
    return rep;
}

// Builds a context whose ReLU pre-activations stay clear of the kink; the
// seed is advanced deterministically until the margin is comfortable.
template <typename T>
TrainContext<T> make_smooth_gradcheck_context(std::uint64_t seed, PairwiseMode mode,
                                              bool paper_literal_seed = false,
                                              bool with_bn = false, T margin = T(3e-5)) {
    for (std::uint64_t attempt = 0; attempt < 32; ++attempt) {
        TrainContext<T> ctx =
            make_gradcheck_context<T>(seed + 1000 * attempt, mode, paper_literal_seed, with_bn);
        if (preactivation_margin(ctx) > margin) return ctx;
    }
    throw std::runtime_error("gradcheck: could not find a kink-free configuration");
}

} // namespace slcrf
