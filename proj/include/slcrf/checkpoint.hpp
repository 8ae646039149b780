#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slcrf/autoencoder.hpp"
#include "slcrf/crf.hpp"

namespace slcrf {

// Checkpoint container: magic "SLCRF001", a scalar-width byte, the layer
// manifest (kind, dims, strides, flags), then raw little-endian IEEE-754
// arrays for every weight/bias in manifest order, then an optional softmax
// head section. Round-trips bit-exactly.
inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'C', 'R', 'F', '0', '0', '1'};

namespace detail {

template <typename V>
void put(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
    V v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

template <typename T>
void put_array(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void get_array(std::istream& is, std::vector<T>& v) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!is) throw std::runtime_error("checkpoint: truncated array");
}

} // namespace detail

template <typename T>
void save_checkpoint(const Network<T>& net, const CrfWeights<T>* head, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    f.write(kCheckpointMagic, 8);
    detail::put<std::uint8_t>(f, sizeof(T));
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(net.encoder_depth));
    detail::put<std::uint64_t>(f, net.in_b);
    detail::put<std::uint64_t>(f, net.in_d);
    detail::put<std::uint32_t>(f, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& L : net.layers) {
        const LayerSpec& sp = L.spec;
        detail::put<std::uint8_t>(f, static_cast<std::uint8_t>(sp.kind));
        detail::put<std::uint8_t>(f, static_cast<std::uint8_t>(sp.activation));
        detail::put<std::uint8_t>(f, sp.batch_norm ? 1 : 0);
        for (std::uint64_t v : {sp.out_maps, sp.kx, sp.ky, sp.kz, sp.sx, sp.sy, sp.sz, sp.fc_in,
                                sp.fc_out, sp.reshape.maps, sp.reshape.nx, sp.reshape.ny,
                                sp.reshape.nz})
            detail::put<std::uint64_t>(f, v);
    }
    for (const auto& L : net.layers) {
        detail::put_array(f, L.weights);
        detail::put_array(f, L.bias);
        detail::put_array(f, L.bn_gamma);
        detail::put_array(f, L.bn_beta);
        detail::put_array(f, L.bn_run_mean);
        detail::put_array(f, L.bn_run_var);
    }
    detail::put<std::uint8_t>(f, head ? 1 : 0);
    if (head) {
        detail::put<std::uint64_t>(f, head->classes());
        detail::put<std::uint64_t>(f, head->latent_dim());
        detail::put_array(f, head->W.values);
        detail::put_array(f, head->b);
        detail::put<T>(f, head->h2);
        detail::put<T>(f, head->h2_max);
    }
    if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline std::size_t checkpoint_scalar_width(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    return detail::get<std::uint8_t>(f);
}

template <typename T>
void load_checkpoint(const std::string& path, Network<T>& net, CrfWeights<T>* head,
                     bool* has_head = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint8_t width = detail::get<std::uint8_t>(f);
    if (width != sizeof(T))
        throw std::runtime_error("checkpoint: scalar width " + std::to_string(width) +
                                 " does not match build width " + std::to_string(sizeof(T)));
    const std::uint32_t encoder_depth = detail::get<std::uint32_t>(f);
    const std::uint64_t b = detail::get<std::uint64_t>(f);
    const std::uint64_t d = detail::get<std::uint64_t>(f);
    const std::uint32_t layer_count = detail::get<std::uint32_t>(f);
    std::vector<LayerSpec> specs(layer_count);
    for (auto& sp : specs) {
        sp.kind = static_cast<LayerKind>(detail::get<std::uint8_t>(f));
        sp.activation = static_cast<Activation>(detail::get<std::uint8_t>(f));
        sp.batch_norm = detail::get<std::uint8_t>(f) != 0;
        std::uint64_t v[13];
        for (auto& x : v) x = detail::get<std::uint64_t>(f);
        sp.out_maps = v[0];
        sp.kx = v[1];
        sp.ky = v[2];
        sp.kz = v[3];
        sp.sx = v[4];
        sp.sy = v[5];
        sp.sz = v[6];
        sp.fc_in = v[7];
        sp.fc_out = v[8];
        sp.reshape = {v[9], v[10], v[11], v[12]};
    }
    net = build_network<T>(specs, encoder_depth, b, d);
    for (auto& L : net.layers) {
        detail::get_array(f, L.weights);
        detail::get_array(f, L.bias);
        detail::get_array(f, L.bn_gamma);
        detail::get_array(f, L.bn_beta);
        detail::get_array(f, L.bn_run_mean);
        detail::get_array(f, L.bn_run_var);
    }
    const bool with_head = detail::get<std::uint8_t>(f) != 0;
    if (has_head) *has_head = with_head;
    if (with_head) {
        const std::uint64_t classes = detail::get<std::uint64_t>(f);
        const std::uint64_t latent = detail::get<std::uint64_t>(f);
        CrfWeights<T> h = make_crf_weights<T>(classes, latent);
        detail::get_array(f, h.W.values);
        detail::get_array(f, h.b);
        h.h2 = detail::get<T>(f);
        h.h2_max = detail::get<T>(f);
        if (head) *head = std::move(h);
    }
}

} // namespace slcrf
