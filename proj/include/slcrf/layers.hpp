#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "slcrf/numerics.hpp"
#include "slcrf/tensor.hpp"

namespace slcrf {

enum class LayerKind : std::uint8_t {
    Conv3d = 0,
    MaxPool3d = 1,
    Deconv3d = 2,
    FullyConnected = 3,
    BatchNorm = 4,
};

enum class Activation : std::uint8_t { None = 0, ReLU = 1 };

struct StackShape {
    std::size_t maps = 0, nx = 0, ny = 0, nz = 0;
    std::size_t count() const { return maps * nx * ny * nz; }
    bool operator==(const StackShape&) const = default;
};

// One architecture element. Conv/deconv use out_maps + kernel + stride;
// pools use kernel as the window; FC uses fc_in/fc_out. `reshape` is the
// unflatten target when a stack layer follows a vector-valued one.
struct LayerSpec {
    LayerKind kind = LayerKind::Conv3d;
    std::size_t out_maps = 0;
    std::size_t kx = 1, ky = 1, kz = 1;
    std::size_t sx = 1, sy = 1, sz = 1;
    std::size_t fc_in = 0, fc_out = 0;
    Activation activation = Activation::None;
    bool batch_norm = false;
    StackShape reshape{};
};

template <typename T>
using Stack = std::vector<Tensor3<T>>;

template <typename T>
Stack<T> make_stack(const StackShape& s) {
    return Stack<T>(s.maps, Tensor3<T>(s.nx, s.ny, s.nz));
}

template <typename T>
std::vector<T> flatten(const Stack<T>& s) {
    std::vector<T> v;
    v.reserve(s.empty() ? 0 : s.size() * s[0].size());
    for (const auto& t : s) v.insert(v.end(), t.values.begin(), t.values.end());
    return v;
}

template <typename T>
Stack<T> unflatten(const std::vector<T>& v, const StackShape& shape) {
    if (v.size() != shape.count()) throw std::invalid_argument("unflatten: size mismatch");
    Stack<T> s = make_stack<T>(shape);
    std::size_t per = shape.nx * shape.ny * shape.nz;
    for (std::size_t m = 0; m < shape.maps; ++m)
        std::copy(v.begin() + m * per, v.begin() + (m + 1) * per, s[m].values.begin());
    return s;
}

template <typename T>
inline T activate(T v, Activation a) {
    return a == Activation::ReLU ? (v > T(0) ? v : T(0)) : v;
}

// ReLU derivative at 0 is defined as 0.
template <typename T>
inline T activate_grad(T pre, Activation a) {
    return a == Activation::ReLU ? (pre > T(0) ? T(1) : T(0)) : T(1);
}

namespace detail {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s) {
    return (in - k) / s + 1;
}

template <typename T>
Tensor3<T> upsample_zero_insert(const Tensor3<T>& in, std::size_t sx, std::size_t sy, std::size_t sz) {
    Tensor3<T> out((in.nx - 1) * sx + 1, (in.ny - 1) * sy + 1, (in.nz - 1) * sz + 1);
    for (std::size_t x = 0; x < in.nx; ++x)
        for (std::size_t y = 0; y < in.ny; ++y)
            for (std::size_t z = 0; z < in.nz; ++z)
                out.at(x * sx, y * sy, z * sz) = in.at(x, y, z);
    return out;
}

template <typename T>
Tensor3<T> zero_pad(const Tensor3<T>& in, std::size_t px, std::size_t py, std::size_t pz) {
    Tensor3<T> out(in.nx + 2 * px, in.ny + 2 * py, in.nz + 2 * pz);
    for (std::size_t x = 0; x < in.nx; ++x)
        for (std::size_t y = 0; y < in.ny; ++y)
            for (std::size_t z = 0; z < in.nz; ++z)
                out.at(x + px, y + py, z + pz) = in.at(x, y, z);
    return out;
}

template <typename T>
Tensor3<T> unpad(const Tensor3<T>& in, std::size_t px, std::size_t py, std::size_t pz) {
    Tensor3<T> out(in.nx - 2 * px, in.ny - 2 * py, in.nz - 2 * pz);
    for (std::size_t x = 0; x < out.nx; ++x)
        for (std::size_t y = 0; y < out.ny; ++y)
            for (std::size_t z = 0; z < out.nz; ++z)
                out.at(x, y, z) = in.at(x + px, y + py, z + pz);
    return out;
}

template <typename T>
Tensor3<T> downsample(const Tensor3<T>& in, std::size_t sx, std::size_t sy, std::size_t sz,
                      std::size_t nx, std::size_t ny, std::size_t nz) {
    Tensor3<T> out(nx, ny, nz);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t y = 0; y < ny; ++y)
            for (std::size_t z = 0; z < nz; ++z)
                out.at(x, y, z) = in.at(x * sx, y * sy, z * sz);
    return out;
}

} // namespace detail

// Parameters, mutable state, and resolved shapes of one network layer.
template <typename T>
struct LayerState {
    LayerSpec spec;
    StackShape in_shape{}, out_shape{};  // stack layers
    std::size_t vec_in = 0, vec_out = 0; // FC layers
    bool takes_vector = false;

    std::vector<T> weights; // conv/deconv: [j][k][p][q][r]; FC: [out][in]
    std::vector<T> bias;
    std::vector<T> bn_gamma, bn_beta;
    std::vector<T> bn_run_mean, bn_run_var;

    std::size_t in_maps() const { return in_shape.maps; }
    std::size_t kernel_volume() const { return spec.kx * spec.ky * spec.kz; }
    const T* kernel(std::size_t j, std::size_t k) const {
        return weights.data() + (j * in_maps() + k) * kernel_volume();
    }
    T* kernel(std::size_t j, std::size_t k) {
        return weights.data() + (j * in_maps() + k) * kernel_volume();
    }
};

template <typename T>
struct LayerCache {
    Stack<T> in_stack;
    std::vector<T> in_vec;
    Stack<T> linear;      // conv/deconv output before BN/activation
    Stack<T> pre_act;     // after BN, before activation
    Stack<T> out_stack;
    std::vector<T> pre_act_vec;
    std::vector<T> out_vec;
    std::vector<std::size_t> argmax; // pool: per out voxel, linear index into its input map
    std::vector<T> bn_mean, bn_invstd;
    Stack<T> bn_norm;     // x-hat
};

template <typename T>
struct LayerGrads {
    std::vector<T> dw, db, dgamma, dbeta;
};

template <typename T>
inline constexpr T bn_eps() { return T(1e-5); }

// ---------------------------------------------------------------------------
// Conv3d

template <typename T>
void conv3d_forward(const LayerState<T>& L, const Stack<T>& in, LayerCache<T>& cache) {
    const LayerSpec& sp = L.spec;
    for (const auto& t : in)
        if (t.nx < sp.kx || t.ny < sp.ky || t.nz < sp.kz)
            throw std::invalid_argument("conv3d: kernel larger than input");
    cache.linear = make_stack<T>(L.out_shape);
    const std::size_t ox = L.out_shape.nx, oy = L.out_shape.ny, oz = L.out_shape.nz;
    for (std::size_t j = 0; j < sp.out_maps; ++j) {
        Tensor3<T>& out = cache.linear[j];
        for (std::size_t x = 0; x < ox; ++x)
            for (std::size_t y = 0; y < oy; ++y)
                for (std::size_t z = 0; z < oz; ++z) {
                    T acc = L.bias[j];
                    for (std::size_t k = 0; k < in.size(); ++k) {
                        const T* w = L.kernel(j, k);
                        const Tensor3<T>& src = in[k];
                        for (std::size_t p = 0; p < sp.kx; ++p)
                            for (std::size_t q = 0; q < sp.ky; ++q)
                                for (std::size_t r = 0; r < sp.kz; ++r)
                                    acc += w[(p * sp.ky + q) * sp.kz + r] *
                                           src.at(x * sp.sx + p, y * sp.sy + q, z * sp.sz + r);
                    }
                    out.at(x, y, z) = acc;
                }
    }
}

template <typename T>
void conv3d_backward(const LayerState<T>& L, const LayerCache<T>& cache, const Stack<T>& u,
                     LayerGrads<T>& g, Stack<T>& din) {
    const LayerSpec& sp = L.spec;
    const Stack<T>& in = cache.in_stack;
    din = make_stack<T>(L.in_shape);
    for (std::size_t j = 0; j < sp.out_maps; ++j) {
        const Tensor3<T>& uj = u[j];
        T bacc = T(0);
        for (T v : uj.values) bacc += v;
        g.db[j] += bacc;
        for (std::size_t k = 0; k < in.size(); ++k) {
            T* dw = g.dw.data() + (j * in.size() + k) * L.kernel_volume();
            const Tensor3<T>& src = in[k];
            Tensor3<T>& dk = din[k];
            const T* w = L.kernel(j, k);
            for (std::size_t x = 0; x < uj.nx; ++x)
                for (std::size_t y = 0; y < uj.ny; ++y)
                    for (std::size_t z = 0; z < uj.nz; ++z) {
                        const T uv = uj.at(x, y, z);
                        for (std::size_t p = 0; p < sp.kx; ++p)
                            for (std::size_t q = 0; q < sp.ky; ++q)
                                for (std::size_t r = 0; r < sp.kz; ++r) {
                                    const std::size_t wi = (p * sp.ky + q) * sp.kz + r;
                                    dw[wi] += uv * src.at(x * sp.sx + p, y * sp.sy + q, z * sp.sz + r);
                                    dk.at(x * sp.sx + p, y * sp.sy + q, z * sp.sz + r) += uv * w[wi];
                                }
                    }
        }
    }
}

// ---------------------------------------------------------------------------
// MaxPool3d (window = kx,ky,kz). Ties break toward the lowest linear index.

template <typename T>
void maxpool3d_forward(const LayerState<T>& L, const Stack<T>& in, LayerCache<T>& cache) {
    const LayerSpec& sp = L.spec;
    for (const auto& t : in)
        if (t.nx < sp.kx || t.ny < sp.ky || t.nz < sp.kz)
            throw std::invalid_argument("maxpool3d: window larger than input");
    cache.linear = make_stack<T>(L.out_shape);
    cache.argmax.assign(L.out_shape.count(), 0);
    std::size_t oi = 0;
    for (std::size_t m = 0; m < in.size(); ++m) {
        const Tensor3<T>& src = in[m];
        Tensor3<T>& out = cache.linear[m];
        for (std::size_t x = 0; x < out.nx; ++x)
            for (std::size_t y = 0; y < out.ny; ++y)
                for (std::size_t z = 0; z < out.nz; ++z) {
                    T best = src.at(x * sp.sx, y * sp.sy, z * sp.sz);
                    std::size_t best_idx =
                        ((x * sp.sx) * src.ny + y * sp.sy) * src.nz + z * sp.sz;
                    for (std::size_t p = 0; p < sp.kx; ++p)
                        for (std::size_t q = 0; q < sp.ky; ++q)
                            for (std::size_t r = 0; r < sp.kz; ++r) {
                                const T v = src.at(x * sp.sx + p, y * sp.sy + q, z * sp.sz + r);
                                if (v > best) {
                                    best = v;
                                    best_idx = ((x * sp.sx + p) * src.ny + y * sp.sy + q) * src.nz +
                                               z * sp.sz + r;
                                }
                            }
                    out.at(x, y, z) = best;
                    cache.argmax[oi++] = best_idx;
                }
    }
}

template <typename T>
void maxpool3d_backward(const LayerState<T>& L, const LayerCache<T>& cache, const Stack<T>& u,
                        Stack<T>& din) {
    din = make_stack<T>(L.in_shape);
    std::size_t oi = 0;
    for (std::size_t m = 0; m < u.size(); ++m) {
        const Tensor3<T>& uj = u[m];
        for (std::size_t i = 0; i < uj.values.size(); ++i)
            din[m].values[cache.argmax[oi + i]] += uj.values[i];
        oi += uj.values.size();
    }
    (void)L;
}

// ---------------------------------------------------------------------------
// Deconv3d: zero-insert by stride, zero-pad by kernel-1, then stride-1
// correlation with the 180-rotated kernels. This composition is the exact
// adjoint of the strided valid correlation used by Conv3d.

template <typename T>
Stack<T> deconv3d_expand_input(const LayerState<T>& L, const Stack<T>& in) {
    const LayerSpec& sp = L.spec;
    Stack<T> expanded;
    expanded.reserve(in.size());
    for (const auto& t : in)
        expanded.push_back(detail::zero_pad(detail::upsample_zero_insert(t, sp.sx, sp.sy, sp.sz),
                                            sp.kx - 1, sp.ky - 1, sp.kz - 1));
    return expanded;
}

template <typename T>
void deconv3d_forward(const LayerState<T>& L, const Stack<T>& in, LayerCache<T>& cache) {
    const LayerSpec& sp = L.spec;
    for (const auto& t : in)
        if (t.nx == 0 || t.ny == 0 || t.nz == 0)
            throw std::invalid_argument("deconv3d: empty input");
    Stack<T> expanded = deconv3d_expand_input(L, in);
    std::vector<Tensor3<T>> rot;
    rot.reserve(sp.out_maps * in.size());
    for (std::size_t j = 0; j < sp.out_maps; ++j)
        for (std::size_t k = 0; k < in.size(); ++k) {
            Tensor3<T> w(sp.kx, sp.ky, sp.kz);
            std::copy_n(L.kernel(j, k), w.size(), w.values.begin());
            rot.push_back(rotate180(w));
        }
    cache.linear = make_stack<T>(L.out_shape);
    for (std::size_t j = 0; j < sp.out_maps; ++j) {
        Tensor3<T>& out = cache.linear[j];
        for (std::size_t x = 0; x < out.nx; ++x)
            for (std::size_t y = 0; y < out.ny; ++y)
                for (std::size_t z = 0; z < out.nz; ++z) {
                    T acc = L.bias[j];
                    for (std::size_t k = 0; k < in.size(); ++k) {
                        const Tensor3<T>& w = rot[j * in.size() + k];
                        const Tensor3<T>& src = expanded[k];
                        for (std::size_t p = 0; p < sp.kx; ++p)
                            for (std::size_t q = 0; q < sp.ky; ++q)
                                for (std::size_t r = 0; r < sp.kz; ++r)
                                    acc += w.at(p, q, r) * src.at(x + p, y + q, z + r);
                    }
                    out.at(x, y, z) = acc;
                }
    }
}

template <typename T>
void deconv3d_backward(const LayerState<T>& L, const LayerCache<T>& cache, const Stack<T>& u,
                       LayerGrads<T>& g, Stack<T>& din) {
    const LayerSpec& sp = L.spec;
    const Stack<T>& in = cache.in_stack;
    Stack<T> expanded = deconv3d_expand_input(L, in);
    din = make_stack<T>(L.in_shape);
    for (std::size_t j = 0; j < sp.out_maps; ++j) {
        const Tensor3<T>& uj = u[j];
        T bacc = T(0);
        for (T v : uj.values) bacc += v;
        g.db[j] += bacc;
        for (std::size_t k = 0; k < in.size(); ++k) {
            const Tensor3<T>& src = expanded[k];
            Tensor3<T> drot(sp.kx, sp.ky, sp.kz);
            Tensor3<T> dsrc(src.nx, src.ny, src.nz);
            Tensor3<T> w(sp.kx, sp.ky, sp.kz);
            std::copy_n(L.kernel(j, k), w.size(), w.values.begin());
            Tensor3<T> rw = rotate180(w);
            for (std::size_t x = 0; x < uj.nx; ++x)
                for (std::size_t y = 0; y < uj.ny; ++y)
                    for (std::size_t z = 0; z < uj.nz; ++z) {
                        const T uv = uj.at(x, y, z);
                        for (std::size_t p = 0; p < sp.kx; ++p)
                            for (std::size_t q = 0; q < sp.ky; ++q)
                                for (std::size_t r = 0; r < sp.kz; ++r) {
                                    drot.at(p, q, r) += uv * src.at(x + p, y + q, z + r);
                                    dsrc.at(x + p, y + q, z + r) += uv * rw.at(p, q, r);
                                }
                    }
            Tensor3<T> dwt = rotate180(drot);
            T* dw = g.dw.data() + (j * in.size() + k) * L.kernel_volume();
            for (std::size_t i = 0; i < dwt.values.size(); ++i) dw[i] += dwt.values[i];
            Tensor3<T> trimmed = detail::unpad(dsrc, sp.kx - 1, sp.ky - 1, sp.kz - 1);
            Tensor3<T> down = detail::downsample(trimmed, sp.sx, sp.sy, sp.sz, in[k].nx, in[k].ny,
                                                 in[k].nz);
            for (std::size_t i = 0; i < down.values.size(); ++i) din[k].values[i] += down.values[i];
        }
    }
}

// ---------------------------------------------------------------------------
// FullyConnected

template <typename T>
void fc_forward(const LayerState<T>& L, const std::vector<T>& in, LayerCache<T>& cache) {
    if (in.size() != L.vec_in) throw std::invalid_argument("fc: input length mismatch");
    cache.pre_act_vec.assign(L.vec_out, T(0));
    for (std::size_t i = 0; i < L.vec_out; ++i) {
        T acc = L.bias[i];
        const T* w = L.weights.data() + i * L.vec_in;
        for (std::size_t l = 0; l < L.vec_in; ++l) acc += w[l] * in[l];
        cache.pre_act_vec[i] = acc;
    }
    cache.out_vec.resize(L.vec_out);
    for (std::size_t i = 0; i < L.vec_out; ++i)
        cache.out_vec[i] = activate(cache.pre_act_vec[i], L.spec.activation);
}

template <typename T>
void fc_backward(const LayerState<T>& L, const LayerCache<T>& cache, const std::vector<T>& dout,
                 LayerGrads<T>& g, std::vector<T>& din) {
    std::vector<T> u(L.vec_out);
    for (std::size_t i = 0; i < L.vec_out; ++i)
        u[i] = dout[i] * activate_grad(cache.pre_act_vec[i], L.spec.activation);
    din.assign(L.vec_in, T(0));
    for (std::size_t i = 0; i < L.vec_out; ++i) {
        g.db[i] += u[i];
        T* dw = g.dw.data() + i * L.vec_in;
        const T* w = L.weights.data() + i * L.vec_in;
        for (std::size_t l = 0; l < L.vec_in; ++l) {
            dw[l] += u[i] * cache.in_vec[l];
            din[l] += w[l] * u[i];
        }
    }
}

// ---------------------------------------------------------------------------
// BatchNorm stage: per-channel normalize/scale/shift using the statistics of
// the current sample's voxels. Running statistics are tracked for reference.

template <typename T>
void batchnorm_forward(LayerState<T>& L, const Stack<T>& in, LayerCache<T>& cache,
                       bool update_running) {
    const std::size_t maps = in.size();
    cache.bn_mean.assign(maps, T(0));
    cache.bn_invstd.assign(maps, T(0));
    cache.bn_norm.clear();
    cache.pre_act = in; // overwritten per map below
    for (std::size_t m = 0; m < maps; ++m) {
        const Tensor3<T>& src = in[m];
        const std::size_t n = src.values.size();
        T mean = T(0);
        for (T v : src.values) mean += v;
        mean /= T(n);
        T var = T(0);
        for (T v : src.values) var += (v - mean) * (v - mean);
        var /= T(n);
        T invstd = T(1) / std::sqrt(var + bn_eps<T>());
        cache.bn_mean[m] = mean;
        cache.bn_invstd[m] = invstd;
        Tensor3<T> xhat(src.nx, src.ny, src.nz);
        for (std::size_t i = 0; i < n; ++i) xhat.values[i] = (src.values[i] - mean) * invstd;
        Tensor3<T>& dst = cache.pre_act[m];
        for (std::size_t i = 0; i < n; ++i)
            dst.values[i] = L.bn_gamma[m] * xhat.values[i] + L.bn_beta[m];
        cache.bn_norm.push_back(std::move(xhat));
        if (update_running) {
            const T mom = T(0.9);
            L.bn_run_mean[m] = mom * L.bn_run_mean[m] + (T(1) - mom) * mean;
            L.bn_run_var[m] = mom * L.bn_run_var[m] + (T(1) - mom) * var;
        }
    }
}

template <typename T>
void batchnorm_backward(const LayerState<T>& L, const LayerCache<T>& cache, const Stack<T>& dout,
                        LayerGrads<T>& g, Stack<T>& din) {
    const std::size_t maps = dout.size();
    din.resize(maps);
    for (std::size_t m = 0; m < maps; ++m) {
        const Tensor3<T>& dy = dout[m];
        const Tensor3<T>& xhat = cache.bn_norm[m];
        const std::size_t n = dy.values.size();
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy.values[i];
            sum_dy_xhat += dy.values[i] * xhat.values[i];
        }
        g.dgamma[m] += sum_dy_xhat;
        g.dbeta[m] += sum_dy;
        const T c = L.bn_gamma[m] * cache.bn_invstd[m];
        Tensor3<T> dx(dy.nx, dy.ny, dy.nz);
        for (std::size_t i = 0; i < n; ++i)
            dx.values[i] =
                c * (dy.values[i] - sum_dy / T(n) - xhat.values[i] * sum_dy_xhat / T(n));
        din[m] = std::move(dx);
    }
}

} // namespace slcrf
