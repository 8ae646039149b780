#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "slcrf/layers.hpp"
#include "slcrf/rng.hpp"

namespace slcrf {

template <typename T>
struct Gradients {
    std::vector<LayerGrads<T>> layers;

    void zero() {
        for (auto& g : layers) {
            std::fill(g.dw.begin(), g.dw.end(), T(0));
            std::fill(g.db.begin(), g.db.end(), T(0));
            std::fill(g.dgamma.begin(), g.dgamma.end(), T(0));
            std::fill(g.dbeta.begin(), g.dbeta.end(), T(0));
        }
    }

    void add(const Gradients& o) {
        for (std::size_t i = 0; i < layers.size(); ++i) {
            auto& a = layers[i];
            const auto& b = o.layers[i];
            for (std::size_t j = 0; j < a.dw.size(); ++j) a.dw[j] += b.dw[j];
            for (std::size_t j = 0; j < a.db.size(); ++j) a.db[j] += b.db[j];
            for (std::size_t j = 0; j < a.dgamma.size(); ++j) a.dgamma[j] += b.dgamma[j];
            for (std::size_t j = 0; j < a.dbeta.size(); ++j) a.dbeta[j] += b.dbeta[j];
        }
    }

    void scale(T s) {
        for (auto& g : layers) {
            for (auto& v : g.dw) v *= s;
            for (auto& v : g.db) v *= s;
            for (auto& v : g.dgamma) v *= s;
            for (auto& v : g.dbeta) v *= s;
        }
    }
};

template <typename T>
using ForwardCache = std::vector<LayerCache<T>>;

// The 3D convolutional autoencoder. Layers 0..encoder_depth-1 form the
// encoder; the encoder must end in an FC layer whose output is the latent
// vector. The decoder must restore the input patch dimensions exactly,
// which is validated at build time.
template <typename T>
struct Network {
    std::vector<LayerState<T>> layers;
    std::size_t encoder_depth = 0;
    std::size_t latent_dim = 0;
    std::size_t penultimate_dim = 0;
    std::size_t in_b = 0, in_d = 0;

    std::size_t depth() const { return layers.size(); }
};

template <typename T>
Network<T> build_network(const std::vector<LayerSpec>& specs, std::size_t encoder_depth,
                         std::size_t b, std::size_t d) {
    if (specs.empty()) throw std::invalid_argument("network: no layers");
    if (encoder_depth == 0 || encoder_depth >= specs.size())
        throw std::invalid_argument("network: encoder depth out of range");
    Network<T> net;
    net.encoder_depth = encoder_depth;
    net.in_b = b;
    net.in_d = d;

    StackShape cur{1, b, b, d};
    bool is_vec = false;
    std::size_t vec_len = 0;

    for (std::size_t i = 0; i < specs.size(); ++i) {
        LayerState<T> L;
        L.spec = specs[i];
        const LayerSpec& sp = L.spec;
        switch (sp.kind) {
        case LayerKind::FullyConnected: {
            std::size_t in_len = is_vec ? vec_len : cur.count();
            if (sp.fc_in != 0 && sp.fc_in != in_len)
                throw std::invalid_argument("network: FC input length mismatch at layer " +
                                            std::to_string(i));
            if (sp.fc_out == 0) throw std::invalid_argument("network: FC output length is zero");
            if (sp.batch_norm)
                throw std::invalid_argument("network: batch norm is only supported on conv layers");
            L.takes_vector = true;
            L.vec_in = in_len;
            L.vec_out = sp.fc_out;
            L.weights.assign(L.vec_out * L.vec_in, T(0));
            L.bias.assign(L.vec_out, T(0));
            is_vec = true;
            vec_len = L.vec_out;
            break;
        }
        case LayerKind::Conv3d:
        case LayerKind::MaxPool3d:
        case LayerKind::Deconv3d:
        case LayerKind::BatchNorm: {
            StackShape in_shape = cur;
            if (is_vec) {
                if (sp.reshape.count() == 0 || sp.reshape.count() != vec_len)
                    throw std::invalid_argument(
                        "network: stack layer after FC needs a matching reshape at layer " +
                        std::to_string(i));
                in_shape = sp.reshape;
            }
            L.in_shape = in_shape;
            if (sp.kind == LayerKind::Conv3d) {
                if (in_shape.nx < sp.kx || in_shape.ny < sp.ky || in_shape.nz < sp.kz)
                    throw std::invalid_argument("network: conv kernel larger than input at layer " +
                                                std::to_string(i));
                L.out_shape = {sp.out_maps, detail::conv_out_dim(in_shape.nx, sp.kx, sp.sx),
                               detail::conv_out_dim(in_shape.ny, sp.ky, sp.sy),
                               detail::conv_out_dim(in_shape.nz, sp.kz, sp.sz)};
                L.weights.assign(sp.out_maps * in_shape.maps * L.kernel_volume(), T(0));
                L.bias.assign(sp.out_maps, T(0));
            } else if (sp.kind == LayerKind::Deconv3d) {
                L.out_shape = {sp.out_maps, (in_shape.nx - 1) * sp.sx + sp.kx,
                               (in_shape.ny - 1) * sp.sy + sp.ky,
                               (in_shape.nz - 1) * sp.sz + sp.kz};
                L.weights.assign(sp.out_maps * in_shape.maps * L.kernel_volume(), T(0));
                L.bias.assign(sp.out_maps, T(0));
            } else if (sp.kind == LayerKind::MaxPool3d) {
                if (in_shape.nx < sp.kx || in_shape.ny < sp.ky || in_shape.nz < sp.kz)
                    throw std::invalid_argument("network: pool window larger than input at layer " +
                                                std::to_string(i));
                L.out_shape = {in_shape.maps, detail::conv_out_dim(in_shape.nx, sp.kx, sp.sx),
                               detail::conv_out_dim(in_shape.ny, sp.ky, sp.sy),
                               detail::conv_out_dim(in_shape.nz, sp.kz, sp.sz)};
            } else {
                L.out_shape = in_shape;
            }
            std::size_t bn_maps = 0;
            if (sp.kind == LayerKind::BatchNorm) bn_maps = in_shape.maps;
            else if (sp.batch_norm && sp.kind != LayerKind::MaxPool3d) bn_maps = sp.out_maps;
            else if (sp.batch_norm)
                throw std::invalid_argument("network: batch norm flag on a pool layer");
            if (bn_maps) {
                L.bn_gamma.assign(bn_maps, T(1));
                L.bn_beta.assign(bn_maps, T(0));
                L.bn_run_mean.assign(bn_maps, T(0));
                L.bn_run_var.assign(bn_maps, T(1));
            }
            is_vec = false;
            cur = L.out_shape;
            break;
        }
        }
        net.layers.push_back(std::move(L));

        if (i + 1 == encoder_depth) {
            if (!is_vec)
                throw std::invalid_argument("network: encoder must end in a fully connected layer");
            net.latent_dim = vec_len;
            const LayerState<T>& enc_last = net.layers.back();
            net.penultimate_dim = enc_last.vec_in;
        }
    }
    if (is_vec || cur.maps != 1 || cur.nx != b || cur.ny != b || cur.nz != d)
        throw std::invalid_argument("network: decoder does not restore input dimensions");
    return net;
}

// Zero-mean Gaussian init with std sqrt(2/fan_in); biases zero.
template <typename T>
void init_params(Network<T>& net, Rng& rng) {
    for (auto& L : net.layers) {
        std::size_t fan_in = 0;
        if (L.spec.kind == LayerKind::FullyConnected) fan_in = L.vec_in;
        else if (L.spec.kind == LayerKind::Conv3d || L.spec.kind == LayerKind::Deconv3d)
            fan_in = L.in_shape.maps * L.kernel_volume();
        if (fan_in) {
            const T sd = std::sqrt(T(2) / T(fan_in));
            for (auto& w : L.weights) w = sd * static_cast<T>(rng.normal());
        }
        std::fill(L.bias.begin(), L.bias.end(), T(0));
        std::fill(L.bn_gamma.begin(), L.bn_gamma.end(), T(1));
        std::fill(L.bn_beta.begin(), L.bn_beta.end(), T(0));
    }
}

template <typename T>
Gradients<T> make_gradients(const Network<T>& net) {
    Gradients<T> g;
    g.layers.resize(net.layers.size());
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& L = net.layers[i];
        g.layers[i].dw.assign(L.weights.size(), T(0));
        g.layers[i].db.assign(L.bias.size(), T(0));
        g.layers[i].dgamma.assign(L.bn_gamma.size(), T(0));
        g.layers[i].dbeta.assign(L.bn_beta.size(), T(0));
    }
    return g;
}

namespace detail {

template <typename T>
void stack_layer_forward(LayerState<T>& L, const Stack<T>& in, LayerCache<T>& cache,
                         bool update_bn) {
    cache.in_stack = in;
    switch (L.spec.kind) {
    case LayerKind::Conv3d: conv3d_forward(L, in, cache); break;
    case LayerKind::Deconv3d: deconv3d_forward(L, in, cache); break;
    case LayerKind::MaxPool3d: maxpool3d_forward(L, in, cache); break;
    case LayerKind::BatchNorm: cache.linear = in; break;
    default: throw std::logic_error("stack_layer_forward: not a stack layer");
    }
    const bool has_bn = !L.bn_gamma.empty();
    if (has_bn) batchnorm_forward(L, cache.linear, cache, update_bn);
    else cache.pre_act = cache.linear;
    cache.out_stack = cache.pre_act;
    if (L.spec.activation == Activation::ReLU)
        for (auto& t : cache.out_stack)
            for (auto& v : t.values) v = v > T(0) ? v : T(0);
}

template <typename T>
void stack_layer_backward(const LayerState<T>& L, const LayerCache<T>& cache, const Stack<T>& dout,
                          LayerGrads<T>& g, Stack<T>& din) {
    Stack<T> d_pre = dout;
    for (std::size_t m = 0; m < d_pre.size(); ++m)
        for (std::size_t i = 0; i < d_pre[m].values.size(); ++i)
            d_pre[m].values[i] *= activate_grad(cache.pre_act[m].values[i], L.spec.activation);
    Stack<T> d_linear;
    if (!L.bn_gamma.empty()) batchnorm_backward(L, cache, d_pre, g, d_linear);
    else d_linear = std::move(d_pre);
    switch (L.spec.kind) {
    case LayerKind::Conv3d: conv3d_backward(L, cache, d_linear, g, din); break;
    case LayerKind::Deconv3d: deconv3d_backward(L, cache, d_linear, g, din); break;
    case LayerKind::MaxPool3d: maxpool3d_backward(L, cache, d_linear, din); break;
    case LayerKind::BatchNorm: din = std::move(d_linear); break;
    default: throw std::logic_error("stack_layer_backward: not a stack layer");
    }
}

} // namespace detail

// Runs layers [first, last). The signal alternates between feature stacks
// and flat vectors at FC boundaries.
template <typename T>
void run_layers(Network<T>& net, std::size_t first, std::size_t last, const Tensor3<T>& patch,
                ForwardCache<T>& cache, bool update_bn = false) {
    if (first == 0) cache.assign(net.depth(), LayerCache<T>{});
    Stack<T> stack_sig;
    std::vector<T> vec_sig;
    bool is_vec = false;
    if (first == 0) stack_sig = Stack<T>{patch};
    else {
        const auto& prev = cache[first - 1];
        if (!prev.out_vec.empty()) {
            vec_sig = prev.out_vec;
            is_vec = true;
        } else stack_sig = prev.out_stack;
    }
    for (std::size_t i = first; i < last; ++i) {
        LayerState<T>& L = net.layers[i];
        LayerCache<T>& c = cache[i];
        if (L.spec.kind == LayerKind::FullyConnected) {
            if (!is_vec) {
                vec_sig = flatten(stack_sig);
                is_vec = true;
            }
            c.in_vec = vec_sig;
            fc_forward(L, vec_sig, c);
            vec_sig = c.out_vec;
        } else {
            if (is_vec) {
                stack_sig = unflatten(vec_sig, L.in_shape);
                is_vec = false;
            }
            detail::stack_layer_forward(L, stack_sig, c, update_bn);
            stack_sig = c.out_stack;
        }
    }
}

template <typename T>
std::vector<T> encode(Network<T>& net, const Tensor3<T>& patch, ForwardCache<T>& cache) {
    if (patch.nx != net.in_b || patch.ny != net.in_b || patch.nz != net.in_d)
        throw std::invalid_argument("encode: patch dimensions mismatch");
    run_layers(net, 0, net.encoder_depth, patch, cache);
    return cache[net.encoder_depth - 1].out_vec;
}

template <typename T>
std::vector<T> encode(Network<T>& net, const Tensor3<T>& patch) {
    ForwardCache<T> cache;
    return encode(net, patch, cache);
}

// Input to the encoder's final FC layer, used to seed the sparse coding.
template <typename T>
std::vector<T> penultimate_features(const Network<T>& net, const ForwardCache<T>& cache) {
    return cache[net.encoder_depth - 1].in_vec;
}

template <typename T>
Tensor3<T> forward(Network<T>& net, const Tensor3<T>& patch, ForwardCache<T>& cache,
                   bool update_bn = false) {
    if (patch.nx != net.in_b || patch.ny != net.in_b || patch.nz != net.in_d)
        throw std::invalid_argument("forward: patch dimensions mismatch");
    run_layers(net, 0, net.depth(), patch, cache, update_bn);
    return cache.back().out_stack[0];
}

template <typename T>
T weight_squared_norm(const Network<T>& net) {
    T acc = T(0);
    for (const auto& L : net.layers)
        for (T w : L.weights) acc += w * w;
    return acc;
}

// Per-patch reconstruction objective: mean squared error over the patch
// volume plus (alpha/2) times the squared Frobenius norm of all weights.
template <typename T>
T reconstruction_loss(const Tensor3<T>& patch, const Tensor3<T>& recon, const Network<T>& net,
                      T alpha) {
    if (!patch.same_shape(recon)) throw std::invalid_argument("reconstruction_loss: shape mismatch");
    T mse = T(0);
    for (std::size_t i = 0; i < patch.values.size(); ++i) {
        const T e = patch.values[i] - recon.values[i];
        mse += e * e;
    }
    mse /= T(patch.values.size());
    return mse + alpha / T(2) * weight_squared_norm(net);
}

// Backpropagates d_recon (gradient w.r.t. the reconstruction) through every
// layer; latent_extra, when non-empty, is added to the gradient w.r.t. the
// latent vector before the encoder is traversed. Weight decay is not applied
// here; callers add alpha * W once per batch.
template <typename T>
void backward(const Network<T>& net, const ForwardCache<T>& cache, const Tensor3<T>& d_recon,
              const std::vector<T>& latent_extra, Gradients<T>& grads) {
    if (cache.size() != net.depth()) throw std::invalid_argument("backward: missing cache");
    Stack<T> stack_sig{d_recon};
    std::vector<T> vec_sig;
    bool is_vec = false;
    for (std::size_t ii = net.depth(); ii-- > 0;) {
        const LayerState<T>& L = net.layers[ii];
        const LayerCache<T>& c = cache[ii];
        if (L.spec.kind == LayerKind::FullyConnected) {
            if (!is_vec) {
                vec_sig = flatten(stack_sig);
                is_vec = true;
            }
            std::vector<T> din;
            fc_backward(L, c, vec_sig, grads.layers[ii], din);
            vec_sig = std::move(din);
        } else {
            if (is_vec) {
                stack_sig = unflatten(vec_sig, L.out_shape);
                is_vec = false;
            }
            Stack<T> din;
            detail::stack_layer_backward(L, c, stack_sig, grads.layers[ii], din);
            stack_sig = std::move(din);
        }
        if (ii == net.encoder_depth && !latent_extra.empty()) {
            if (!is_vec) {
                vec_sig = flatten(stack_sig);
                is_vec = true;
            }
            if (latent_extra.size() != vec_sig.size())
                throw std::invalid_argument("backward: latent seed length mismatch");
            for (std::size_t i = 0; i < vec_sig.size(); ++i) vec_sig[i] += latent_extra[i];
        }
    }
}

// Gradient of the (alpha/2)||W||^2 decay term; biases and BN params carry
// no decay.
template <typename T>
void add_weight_decay(const Network<T>& net, T alpha, Gradients<T>& grads) {
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        for (std::size_t j = 0; j < net.layers[i].weights.size(); ++j)
            grads.layers[i].dw[j] += alpha * net.layers[i].weights[j];
}

template <typename T>
void sgd_update(Network<T>& net, const Gradients<T>& grads, T lr) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        auto& L = net.layers[i];
        const auto& g = grads.layers[i];
        for (std::size_t j = 0; j < L.weights.size(); ++j) L.weights[j] -= lr * g.dw[j];
        for (std::size_t j = 0; j < L.bias.size(); ++j) L.bias[j] -= lr * g.db[j];
        for (std::size_t j = 0; j < L.bn_gamma.size(); ++j) L.bn_gamma[j] -= lr * g.dgamma[j];
        for (std::size_t j = 0; j < L.bn_beta.size(); ++j) L.bn_beta[j] -= lr * g.dbeta[j];
    }
}

// --- flat parameter access (finite-difference harness) ---------------------

template <typename T>
std::size_t param_count(const Network<T>& net) {
    std::size_t n = 0;
    for (const auto& L : net.layers)
        n += L.weights.size() + L.bias.size() + L.bn_gamma.size() + L.bn_beta.size();
    return n;
}

template <typename T>
T& param_at(Network<T>& net, std::size_t idx) {
    for (auto& L : net.layers) {
        if (idx < L.weights.size()) return L.weights[idx];
        idx -= L.weights.size();
        if (idx < L.bias.size()) return L.bias[idx];
        idx -= L.bias.size();
        if (idx < L.bn_gamma.size()) return L.bn_gamma[idx];
        idx -= L.bn_gamma.size();
        if (idx < L.bn_beta.size()) return L.bn_beta[idx];
        idx -= L.bn_beta.size();
    }
    throw std::out_of_range("param_at");
}

template <typename T>
T grad_at(const Gradients<T>& g, std::size_t idx) {
    for (const auto& L : g.layers) {
        if (idx < L.dw.size()) return L.dw[idx];
        idx -= L.dw.size();
        if (idx < L.db.size()) return L.db[idx];
        idx -= L.db.size();
        if (idx < L.dgamma.size()) return L.dgamma[idx];
        idx -= L.dgamma.size();
        if (idx < L.dbeta.size()) return L.dbeta[idx];
        idx -= L.dbeta.size();
    }
    throw std::out_of_range("grad_at");
}

// --- architectures ----------------------------------------------------------

// Symmetric conv/FC autoencoder for odd spatial patch sizes: each conv uses a
// 3x3 spatial kernel, so conv_maps.size() must equal (b-1)/2. The decoder
// mirrors the encoder exactly.
template <typename T>
Network<T> make_mirrored_cae(std::size_t b, std::size_t d, const std::vector<std::size_t>& conv_maps,
                             std::size_t spectral_kernel, std::size_t latent,
                             bool batch_norm = false, Activation act = Activation::ReLU) {
    const std::size_t nc = conv_maps.size();
    if (b != 2 * nc + 1) throw std::invalid_argument("mirrored cae: need (b-1)/2 conv layers");
    if (d < nc * (spectral_kernel - 1) + 1)
        throw std::invalid_argument("mirrored cae: too few bands for the spectral kernels");
    const std::size_t dz = d - nc * (spectral_kernel - 1);
    std::vector<LayerSpec> specs;
    for (std::size_t i = 0; i < nc; ++i)
        specs.push_back({LayerKind::Conv3d, conv_maps[i], 3, 3, spectral_kernel, 1, 1, 1, 0, 0, act,
                         batch_norm});
    const std::size_t flat = conv_maps.back() * dz;
    specs.push_back({LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, flat, latent, act, false});
    const std::size_t encoder_depth = specs.size();
    specs.push_back({LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, latent, flat, act, false});
    for (std::size_t i = 0; i < nc; ++i) {
        const std::size_t out = (i + 1 < nc) ? conv_maps[nc - 2 - i] : 1;
        LayerSpec sp{LayerKind::Deconv3d, out, 3, 3, spectral_kernel, 1, 1, 1, 0, 0, act, batch_norm};
        if (i == 0) sp.reshape = {conv_maps.back(), 1, 1, dz};
        if (i + 1 == nc) sp.batch_norm = false; // reconstruction output stays unnormalized
        specs.push_back(sp);
    }
    return build_network<T>(specs, encoder_depth, b, d);
}

// Preset matching the 200-band AVIRIS geometry (5x5 patches): two spectral
// convolutions down to a 144-d latent code, mirrored decoder.
template <typename T>
Network<T> indian_pines_arch(bool batch_norm = true) {
    std::vector<LayerSpec> specs = {
        {LayerKind::Conv3d, 24, 3, 3, 24, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::Conv3d, 48, 3, 3, 24, 1, 1, 18, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 432, 216, Activation::ReLU, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 216, 144, Activation::ReLU, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 144, 216, Activation::ReLU, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 216, 432, Activation::ReLU, false},
        {LayerKind::Deconv3d, 24, 3, 3, 9, 1, 1, 21, 0, 0, Activation::ReLU, batch_norm,
         {48, 1, 1, 9}},
        {LayerKind::Deconv3d, 1, 3, 3, 24, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
    };
    return build_network<T>(specs, 4, 5, 200);
}

// Preset for the 103-band ROSIS geometry: conv/conv/max-pool encoder.
template <typename T>
Network<T> paviau_arch(bool batch_norm = true) {
    std::vector<LayerSpec> specs = {
        {LayerKind::Conv3d, 24, 3, 3, 11, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::Conv3d, 48, 3, 3, 11, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::MaxPool3d, 0, 1, 1, 9, 1, 1, 9, 0, 0, Activation::None, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 432, 216, Activation::ReLU, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 216, 432, Activation::ReLU, false},
        {LayerKind::Deconv3d, 24, 3, 3, 15, 1, 1, 10, 0, 0, Activation::ReLU, batch_norm,
         {48, 1, 1, 9}},
        {LayerKind::Deconv3d, 1, 3, 3, 9, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
    };
    return build_network<T>(specs, 4, 5, 103);
}

// Preset for the 48-band Houston geometry.
template <typename T>
Network<T> houston_arch(bool batch_norm = true) {
    std::vector<LayerSpec> specs = {
        {LayerKind::Conv3d, 24, 3, 3, 5, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::Conv3d, 48, 3, 3, 5, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
        {LayerKind::MaxPool3d, 0, 1, 1, 4, 1, 1, 4, 0, 0, Activation::None, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 480, 240, Activation::ReLU, false},
        {LayerKind::FullyConnected, 0, 1, 1, 1, 1, 1, 1, 240, 480, Activation::ReLU, false},
        {LayerKind::Deconv3d, 24, 3, 3, 4, 1, 1, 4, 0, 0, Activation::ReLU, batch_norm,
         {48, 1, 1, 10}},
        {LayerKind::Deconv3d, 1, 3, 3, 9, 1, 1, 1, 0, 0, Activation::ReLU, batch_norm},
    };
    return build_network<T>(specs, 4, 5, 48);
}

} // namespace slcrf
