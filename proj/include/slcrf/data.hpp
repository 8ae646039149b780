#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "slcrf/rng.hpp"
#include "slcrf/tensor.hpp"

namespace slcrf {

// A hyperspectral scene. The on-disk payload is band-sequential (BSQ)
// float32; in memory the cube is pixel-interleaved so patch extraction
// reads contiguous spectra. Labels: 0 = unlabeled/background, 1..classes.
struct HsiScene {
    std::size_t height = 0, width = 0, bands = 0;
    std::size_t classes = 0;
    std::vector<float> cube; // [(r*width + c)*bands + z]
    std::vector<std::uint16_t> labels;
    std::vector<std::string> class_names;

    float at(std::size_t r, std::size_t c, std::size_t z) const {
        return cube[(r * width + c) * bands + z];
    }
    float& at(std::size_t r, std::size_t c, std::size_t z) {
        return cube[(r * width + c) * bands + z];
    }
    std::uint16_t label(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
};

namespace detail {

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    std::vector<char> buf(static_cast<std::size_t>(f.tellg()));
    f.seekg(0);
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    return buf;
}

inline void write_file(const std::string& path, const void* data, std::size_t bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("write failed: " + path);
}

} // namespace detail

// Header is a JSON object next to the raw BSQ payload; labels are a raw
// little-endian u16 row-major grid in a separate file.
inline void save_scene(const HsiScene& scene, const std::string& header_path,
                       const std::string& payload_path, const std::string& labels_path) {
    nlohmann::json h;
    h["height"] = scene.height;
    h["width"] = scene.width;
    h["bands"] = scene.bands;
    h["classes"] = scene.classes;
    h["dtype"] = "f32le";
    h["order"] = "BSQ";
    if (!scene.class_names.empty()) h["class_names"] = scene.class_names;
    h["payload"] = std::filesystem::path(payload_path).filename().string();
    std::ofstream hf(header_path, std::ios::trunc);
    if (!hf) throw std::runtime_error("cannot open file for writing: " + header_path);
    hf << h.dump(2) << "\n";

    std::vector<float> bsq(scene.cube.size());
    const std::size_t plane = scene.height * scene.width;
    for (std::size_t z = 0; z < scene.bands; ++z)
        for (std::size_t p = 0; p < plane; ++p) bsq[z * plane + p] = scene.cube[p * scene.bands + z];
    detail::write_file(payload_path, bsq.data(), bsq.size() * sizeof(float));
    detail::write_file(labels_path, scene.labels.data(), scene.labels.size() * sizeof(std::uint16_t));
}

inline HsiScene load_scene(const std::string& header_path, const std::string& labels_path) {
    std::ifstream hf(header_path);
    if (!hf) throw std::runtime_error("cannot open header: " + header_path);
    nlohmann::json h = nlohmann::json::parse(hf);
    HsiScene scene;
    scene.height = h.at("height").get<std::size_t>();
    scene.width = h.at("width").get<std::size_t>();
    scene.bands = h.at("bands").get<std::size_t>();
    scene.classes = h.at("classes").get<std::size_t>();
    if (h.value("dtype", "f32le") != "f32le")
        throw std::runtime_error("unknown dtype in header: " + h.value("dtype", ""));
    if (h.value("order", "BSQ") != "BSQ")
        throw std::runtime_error("unknown payload order in header: " + h.value("order", ""));
    if (h.contains("class_names")) scene.class_names = h["class_names"].get<std::vector<std::string>>();

    std::string payload = h.at("payload").get<std::string>();
    std::filesystem::path ppath = std::filesystem::path(header_path).parent_path() / payload;
    std::vector<char> raw = detail::read_file(ppath.string());
    const std::size_t expect = scene.height * scene.width * scene.bands * sizeof(float);
    if (raw.size() != expect)
        throw std::runtime_error("payload length mismatch: expected " + std::to_string(expect) +
                                 " bytes, got " + std::to_string(raw.size()));
    const std::size_t plane = scene.height * scene.width;
    scene.cube.resize(plane * scene.bands);
    const float* bsq = reinterpret_cast<const float*>(raw.data());
    for (std::size_t z = 0; z < scene.bands; ++z)
        for (std::size_t p = 0; p < plane; ++p) scene.cube[p * scene.bands + z] = bsq[z * plane + p];

    std::vector<char> lraw = detail::read_file(labels_path);
    if (lraw.size() != plane * sizeof(std::uint16_t))
        throw std::runtime_error("labels length mismatch: expected " +
                                 std::to_string(plane * sizeof(std::uint16_t)) + " bytes, got " +
                                 std::to_string(lraw.size()));
    scene.labels.resize(plane);
    std::copy_n(reinterpret_cast<const std::uint16_t*>(lraw.data()), plane, scene.labels.begin());
    for (std::uint16_t l : scene.labels)
        if (l > scene.classes)
            throw std::runtime_error("label id " + std::to_string(l) + " exceeds declared class count " +
                                     std::to_string(scene.classes));
    return scene;
}

// Per-band min-max scaling to [0,1]; constant bands map to zero. Returns the
// (min, max) pair per band so a run can be reproduced from its metadata.
inline std::vector<std::pair<float, float>> normalize(HsiScene& scene) {
    const std::size_t plane = scene.height * scene.width;
    std::vector<std::pair<float, float>> ranges(scene.bands);
    for (std::size_t z = 0; z < scene.bands; ++z) {
        float mn = scene.cube[z], mx = scene.cube[z];
        for (std::size_t p = 0; p < plane; ++p) {
            const float v = scene.cube[p * scene.bands + z];
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        ranges[z] = {mn, mx};
        const float span = mx - mn;
        for (std::size_t p = 0; p < plane; ++p) {
            float& v = scene.cube[p * scene.bands + z];
            v = span > 0.0f ? (v - mn) / span : 0.0f;
        }
    }
    return ranges;
}

namespace detail {

// Half-sample mirror: ...2 1 0 | 0 1 2 ... n-1 | n-1 n-2...
inline std::size_t mirror_index(long i, long n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return static_cast<std::size_t>(i);
}

} // namespace detail

template <typename T>
Tensor3<T> extract_patch(const HsiScene& scene, std::size_t row, std::size_t col, std::size_t b) {
    if (b % 2 == 0) throw std::invalid_argument("extract_patch: patch size must be odd");
    const long half = static_cast<long>(b / 2);
    Tensor3<T> patch(b, b, scene.bands);
    for (std::size_t x = 0; x < b; ++x) {
        const std::size_t r =
            detail::mirror_index(static_cast<long>(row) + static_cast<long>(x) - half,
                                 static_cast<long>(scene.height));
        for (std::size_t y = 0; y < b; ++y) {
            const std::size_t c =
                detail::mirror_index(static_cast<long>(col) + static_cast<long>(y) - half,
                                     static_cast<long>(scene.width));
            const float* spec = scene.cube.data() + (r * scene.width + c) * scene.bands;
            for (std::size_t z = 0; z < scene.bands; ++z)
                patch.at(x, y, z) = static_cast<T>(spec[z]);
        }
    }
    return patch;
}

struct SplitSpec {
    double labeled_fraction = 0.05;
    std::uint64_t seed = 0;
    bool per_class = true;
};

struct LabelSplit {
    std::vector<std::size_t> labeled;   // linear pixel ids, sorted
    std::vector<std::size_t> unlabeled; // remaining ground-truth pixels, sorted
};

// Stratified sampling: round(fraction * class_total) with a minimum of one
// pixel per non-empty class. Empty classes are skipped.
inline LabelSplit split_labels(const HsiScene& scene, const SplitSpec& spec) {
    if (spec.labeled_fraction <= 0.0 || spec.labeled_fraction > 1.0)
        throw std::invalid_argument("split_labels: fraction must be in (0, 1]");
    Rng rng(spec.seed, "split");
    LabelSplit out;
    std::vector<std::vector<std::size_t>> per_class(scene.classes + 1);
    for (std::size_t p = 0; p < scene.labels.size(); ++p)
        if (scene.labels[p] > 0) per_class[scene.labels[p]].push_back(p);
    for (std::size_t c = 1; c <= scene.classes; ++c) {
        auto& pixels = per_class[c];
        if (pixels.empty()) continue;
        std::size_t want = static_cast<std::size_t>(
            std::llround(spec.labeled_fraction * static_cast<double>(pixels.size())));
        want = std::max<std::size_t>(want, 1);
        want = std::min(want, pixels.size());
        // Fisher-Yates over the class members, then take the head.
        for (std::size_t i = pixels.size(); i-- > 1;) {
            std::size_t j = rng.index(i + 1);
            std::swap(pixels[i], pixels[j]);
        }
        out.labeled.insert(out.labeled.end(), pixels.begin(), pixels.begin() + want);
        out.unlabeled.insert(out.unlabeled.end(), pixels.begin() + want, pixels.end());
    }
    std::sort(out.labeled.begin(), out.labeled.end());
    std::sort(out.unlabeled.begin(), out.unlabeled.end());
    if (out.labeled.empty()) throw std::invalid_argument("split_labels: no ground-truth pixels");
    return out;
}

// Synthetic scene: Voronoi regions over seeded sites (one per class), a
// smooth distinct spectral signature per class, additive Gaussian noise.
inline HsiScene synthesize(std::size_t classes, std::size_t height, std::size_t width,
                           std::size_t bands, double noise, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("synthesize: need at least 2 classes");
    HsiScene scene;
    scene.height = height;
    scene.width = width;
    scene.bands = bands;
    scene.classes = classes;
    scene.cube.resize(height * width * bands);
    scene.labels.resize(height * width);

    Rng site_rng(seed, "synth-sites");
    std::vector<std::pair<double, double>> sites(classes);
    for (auto& s : sites) s = {site_rng.uniform() * height, site_rng.uniform() * width};

    std::vector<std::vector<double>> sig(classes, std::vector<double>(bands));
    for (std::size_t c = 0; c < classes; ++c) {
        const double center = 0.1 + 0.8 * (classes == 1 ? 0.0 : double(c) / double(classes - 1));
        for (std::size_t z = 0; z < bands; ++z) {
            const double t = bands == 1 ? 0.0 : double(z) / double(bands - 1);
            sig[c][z] = 0.15 + 0.7 * std::exp(-(t - center) * (t - center) / (2 * 0.15 * 0.15));
        }
    }

    Rng noise_rng(seed, "synth-noise");
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t k = 0; k < classes; ++k) {
                const double dr = double(r) + 0.5 - sites[k].first;
                const double dc = double(c) + 0.5 - sites[k].second;
                const double d2 = dr * dr + dc * dc;
                if (d2 < best_d) {
                    best_d = d2;
                    best = k;
                }
            }
            scene.labels[r * width + c] = static_cast<std::uint16_t>(best + 1);
            float* spec = scene.cube.data() + (r * width + c) * bands;
            for (std::size_t z = 0; z < bands; ++z)
                spec[z] = static_cast<float>(sig[best][z] + noise * noise_rng.normal());
        }
    // Voronoi with one site per class covers every class (each site owns its
    // own cell), but guard against degenerate duplicate sites anyway.
    std::vector<bool> seen(classes + 1, false);
    for (auto l : scene.labels) seen[l] = true;
    for (std::size_t c = 1; c <= classes; ++c)
        if (!seen[c]) {
            const std::size_t r = std::min<std::size_t>(height - 1, static_cast<std::size_t>(sites[c - 1].first));
            const std::size_t cc = std::min<std::size_t>(width - 1, static_cast<std::size_t>(sites[c - 1].second));
            scene.labels[r * width + cc] = static_cast<std::uint16_t>(c);
            float* spec = scene.cube.data() + (r * width + cc) * bands;
            for (std::size_t z = 0; z < bands; ++z)
                spec[z] = static_cast<float>(sig[c - 1][z]);
        }
    return scene;
}

} // namespace slcrf
