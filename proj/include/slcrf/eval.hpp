#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "slcrf/crf.hpp"
#include "slcrf/data.hpp"
#include "slcrf/optimizer.hpp"
#include "slcrf/tensor.hpp"

namespace slcrf {

// --- confusion matrix and summary metrics ------------------------------------

struct ConfusionMatrix {
    std::size_t classes = 0;
    std::vector<std::uint64_t> counts; // row = true class (0-based), col = predicted

    std::uint64_t& at(std::size_t t, std::size_t p) { return counts[t * classes + p]; }
    std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * classes + p]; }
    std::uint64_t total() const {
        std::uint64_t s = 0;
        for (auto v : counts) s += v;
        return s;
    }
};

// Pixels with truth 0 are ignored.
inline ConfusionMatrix build_confusion(const std::vector<std::uint16_t>& truth,
                                       const std::vector<std::uint16_t>& predicted,
                                       std::size_t classes) {
    if (truth.size() != predicted.size())
        throw std::invalid_argument("confusion: length mismatch");
    ConfusionMatrix cm;
    cm.classes = classes;
    cm.counts.assign(classes * classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] == 0) continue;
        if (truth[i] > classes || predicted[i] == 0 || predicted[i] > classes)
            throw std::invalid_argument("confusion: class id out of range");
        ++cm.at(truth[i] - 1, predicted[i] - 1);
    }
    if (cm.total() == 0) throw std::invalid_argument("confusion: no evaluated pixels");
    return cm;
}

struct MetricsReport {
    double oa = 0, aa = 0, kappa = 0;
    std::vector<double> per_class; // NaN for empty classes
};

inline MetricsReport metrics_from_confusion(const ConfusionMatrix& cm) {
    const std::size_t c = cm.classes;
    const double total = static_cast<double>(cm.total());
    MetricsReport rep;
    rep.per_class.assign(c, std::numeric_limits<double>::quiet_NaN());
    double diag = 0, pe = 0, aa_sum = 0;
    std::size_t aa_n = 0;
    for (std::size_t t = 0; t < c; ++t) {
        double row = 0, col = 0;
        for (std::size_t p = 0; p < c; ++p) {
            row += static_cast<double>(cm.at(t, p));
            col += static_cast<double>(cm.at(p, t));
        }
        diag += static_cast<double>(cm.at(t, t));
        pe += row * col;
        if (row > 0) {
            rep.per_class[t] = static_cast<double>(cm.at(t, t)) / row;
            aa_sum += rep.per_class[t];
            ++aa_n;
        }
    }
    rep.oa = diag / total;
    rep.aa = aa_n ? aa_sum / static_cast<double>(aa_n) : 0.0;
    pe /= total * total;
    if (1.0 - pe < 1e-15) rep.kappa = rep.oa >= 1.0 - 1e-15 ? 1.0 : 0.0;
    else rep.kappa = (rep.oa - pe) / (1.0 - pe);
    return rep;
}

inline MetricsReport metrics(const std::vector<std::uint16_t>& truth,
                             const std::vector<std::uint16_t>& predicted, std::size_t classes) {
    return metrics_from_confusion(build_confusion(truth, predicted, classes));
}

// Truth restricted to ground-truth pixels outside the training set.
inline MetricsReport metrics_on_remainder(const HsiScene& scene, const LabelSplit& split,
                                          const std::vector<std::uint16_t>& predicted) {
    std::vector<std::uint16_t> truth = scene.labels;
    for (std::size_t p : split.labeled) truth[p] = 0;
    return metrics(truth, predicted, scene.classes);
}

inline void write_metrics_csv(const std::string& path,
                              const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    std::size_t c = 0;
    for (const auto& r : rows) c = std::max(c, r.second.per_class.size());
    f << "method,oa,aa,kappa";
    for (std::size_t i = 1; i <= c; ++i) f << ",class" << i;
    f << "\n";
    f.precision(17);
    for (const auto& [name, rep] : rows) {
        f << name << ',' << rep.oa << ',' << rep.aa << ',' << rep.kappa;
        for (std::size_t i = 0; i < c; ++i) {
            f << ',';
            if (i < rep.per_class.size() && !std::isnan(rep.per_class[i])) f << rep.per_class[i];
        }
        f << "\n";
    }
}

// --- classification map rendering ---------------------------------------------

using Rgb = std::array<std::uint8_t, 3>;

// Index 0 (unlabeled) is black; classes get fixed distinct colors.
inline std::vector<Rgb> default_palette(std::size_t classes) {
    static const std::vector<Rgb> base = {
        {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
        {145, 30, 180}, {70, 240, 240},  {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
        {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
        {170, 255, 195}, {128, 128, 0},  {255, 215, 180}, {0, 0, 128},   {128, 128, 128},
    };
    std::vector<Rgb> pal{{0, 0, 0}};
    for (std::size_t i = 0; i < classes; ++i) {
        if (i < base.size()) pal.push_back(base[i]);
        else {
            // deterministic fallback hues beyond the fixed list
            const double h = std::fmod(0.61803398875 * static_cast<double>(i), 1.0) * 6.0;
            const int s = static_cast<int>(h);
            const double f = h - s;
            const auto q = static_cast<std::uint8_t>(255 * (1 - f));
            const auto t = static_cast<std::uint8_t>(255 * f);
            switch (s % 6) {
            case 0: pal.push_back({255, t, 64}); break;
            case 1: pal.push_back({q, 255, 64}); break;
            case 2: pal.push_back({64, 255, t}); break;
            case 3: pal.push_back({64, q, 255}); break;
            case 4: pal.push_back({t, 64, 255}); break;
            default: pal.push_back({255, 64, q}); break;
            }
        }
    }
    return pal;
}

inline void render_map(const std::vector<std::uint16_t>& grid, std::size_t height,
                       std::size_t width, const std::vector<Rgb>& palette,
                       const std::string& ppm_path) {
    if (grid.size() != height * width) throw std::invalid_argument("render_map: grid size mismatch");
    for (auto v : grid)
        if (v >= palette.size())
            throw std::invalid_argument("render_map: class id " + std::to_string(v) +
                                        " beyond palette");
    std::ofstream f(ppm_path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + ppm_path);
    f << "P6\n" << width << " " << height << "\n255\n";
    for (auto v : grid) f.write(reinterpret_cast<const char*>(palette[v].data()), 3);
}

inline void write_palette_csv(const std::vector<Rgb>& palette, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open file for writing: " + path);
    f << "class,r,g,b\n";
    for (std::size_t i = 0; i < palette.size(); ++i)
        f << i << ',' << int(palette[i][0]) << ',' << int(palette[i][1]) << ',' << int(palette[i][2])
          << "\n";
}

// Reads back a P6 map given the palette that produced it (test support).
inline std::vector<std::uint16_t> parse_ppm(const std::string& path,
                                            const std::vector<Rgb>& palette, std::size_t& height,
                                            std::size_t& width) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open ppm: " + path);
    std::string magic;
    std::size_t maxval;
    f >> magic >> width >> height >> maxval;
    if (magic != "P6" || maxval != 255) throw std::runtime_error("parse_ppm: not a P6/255 file");
    f.get();
    std::vector<std::uint16_t> grid(height * width);
    for (auto& v : grid) {
        Rgb px{};
        f.read(reinterpret_cast<char*>(px.data()), 3);
        bool found = false;
        for (std::size_t i = 0; i < palette.size(); ++i)
            if (palette[i] == px) {
                v = static_cast<std::uint16_t>(i);
                found = true;
                break;
            }
        if (!found) throw std::runtime_error("parse_ppm: pixel color not in palette");
    }
    return grid;
}

// --- PCA (cyclic Jacobi) --------------------------------------------------------

struct EigenDecomposition {
    std::vector<double> values;  // descending
    Matrix<double> vectors;      // columns are eigenvectors
};

// Cyclic Jacobi sweeps on a symmetric matrix; deterministic sweep order and
// sign convention (largest-magnitude component of each vector positive).
inline EigenDecomposition jacobi_symmetric_eigen(Matrix<double> a, std::size_t max_sweeps = 100,
                                                 double tol = 1e-14) {
    const std::size_t n = a.rows;
    if (a.rows != a.cols) throw std::invalid_argument("jacobi: matrix not square");
    Matrix<double> v = Matrix<double>::identity(n);
    for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a.at(p, q) * a.at(p, q);
        double norm = 0;
        for (std::size_t i = 0; i < n; ++i) norm += a.at(i, i) * a.at(i, i);
        if (off <= tol * tol * std::max(norm, 1.0)) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (a.at(q, q) - a.at(p, p)) / (2 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a.at(i, p), aiq = a.at(i, q);
                    a.at(i, p) = c * aip - s * aiq;
                    a.at(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a.at(p, i), aqi = a.at(q, i);
                    a.at(p, i) = c * api - s * aqi;
                    a.at(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = v.at(i, p), viq = v.at(i, q);
                    v.at(i, p) = c * vip - s * viq;
                    v.at(i, q) = s * vip + c * viq;
                }
            }
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a.at(x, x) > a.at(y, y); });
    EigenDecomposition out;
    out.values.resize(n);
    out.vectors = Matrix<double>(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        out.values[j] = a.at(order[j], order[j]);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (std::abs(v.at(i, order[j])) > std::abs(v.at(arg, order[j]))) arg = i;
        const double flip = v.at(arg, order[j]) < 0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < n; ++i) out.vectors.at(i, j) = flip * v.at(i, order[j]);
    }
    return out;
}

struct PcaModel {
    std::vector<double> mean;  // d
    Matrix<double> components; // d x K, column-orthonormal
};

inline PcaModel pca_spectra(const HsiScene& scene, std::size_t k) {
    const std::size_t d = scene.bands;
    if (k > d) throw std::invalid_argument("pca: component count exceeds band count");
    const std::size_t plane = scene.height * scene.width;
    PcaModel model;
    model.mean.assign(d, 0.0);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t z = 0; z < d; ++z) model.mean[z] += scene.cube[p * d + z];
    for (auto& m : model.mean) m /= static_cast<double>(plane);
    Matrix<double> cov(d, d);
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t zi = 0; zi < d; ++zi) {
            const double vi = scene.cube[p * d + zi] - model.mean[zi];
            for (std::size_t zj = zi; zj < d; ++zj)
                cov.at(zi, zj) += vi * (scene.cube[p * d + zj] - model.mean[zj]);
        }
    for (std::size_t zi = 0; zi < d; ++zi)
        for (std::size_t zj = 0; zj < zi; ++zj) cov.at(zi, zj) = cov.at(zj, zi);
    for (auto& vv : cov.values) vv /= static_cast<double>(plane);
    EigenDecomposition eig = jacobi_symmetric_eigen(std::move(cov));
    model.components = Matrix<double>(d, k);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t i = 0; i < d; ++i) model.components.at(i, j) = eig.vectors.at(i, j);
    return model;
}

// Scene with spectra replaced by their leading principal components, so the
// patch machinery can run unchanged on the condensed cube.
inline HsiScene pca_condense(const HsiScene& scene, const PcaModel& model) {
    const std::size_t k = model.components.cols, d = scene.bands;
    HsiScene out;
    out.height = scene.height;
    out.width = scene.width;
    out.bands = k;
    out.classes = scene.classes;
    out.labels = scene.labels;
    out.class_names = scene.class_names;
    out.cube.resize(scene.height * scene.width * k);
    const std::size_t plane = scene.height * scene.width;
    for (std::size_t p = 0; p < plane; ++p)
        for (std::size_t j = 0; j < k; ++j) {
            double acc = 0;
            for (std::size_t z = 0; z < d; ++z)
                acc += model.components.at(z, j) * (scene.cube[p * d + z] - model.mean[z]);
            out.cube[p * k + j] = static_cast<float>(acc);
        }
    return out;
}

// --- baseline and ablations -----------------------------------------------------

template <typename T>
struct EvalOutcome {
    MetricsReport report;
    std::vector<std::uint16_t> predicted;
    TrainTrace<T> trace;
};

struct PcaBaselineConfig {
    std::size_t components = 8;
    std::size_t patch = 5;
    std::size_t steps = 2000;
    double lr = 0.05;
};

// PCA on the spectra, flattened condensed patches, softmax classifier trained
// on the labeled pixels by gradient descent.
template <typename T>
EvalOutcome<T> baseline_pca_sc(const HsiScene& scene, const LabelSplit& split,
                               const PcaBaselineConfig& cfg) {
    PcaModel model = pca_spectra(scene, cfg.components);
    HsiScene condensed = pca_condense(scene, model);
    const std::size_t feat_dim = cfg.patch * cfg.patch * cfg.components;

    Matrix<T> train(feat_dim, split.labeled.size());
    std::vector<int> labels(split.labeled.size());
    for (std::size_t i = 0; i < split.labeled.size(); ++i) {
        const std::size_t p = split.labeled[i];
        Tensor3<T> patch =
            extract_patch<T>(condensed, p / scene.width, p % scene.width, cfg.patch);
        for (std::size_t v = 0; v < patch.values.size(); ++v) train.at(v, i) = patch.values[v];
        labels[i] = static_cast<int>(scene.labels[p]) - 1;
    }
    CrfWeights<T> head =
        train_softmax_head(train, labels, scene.classes, cfg.steps, static_cast<T>(cfg.lr));

    EvalOutcome<T> out;
    out.predicted.assign(scene.height * scene.width, 0);
    Matrix<T> one(feat_dim, 1);
    for (std::size_t p = 0; p < out.predicted.size(); ++p) {
        Tensor3<T> patch =
            extract_patch<T>(condensed, p / scene.width, p % scene.width, cfg.patch);
        for (std::size_t v = 0; v < patch.values.size(); ++v) one.at(v, 0) = patch.values[v];
        LabelAssignment<T> a = classify(one, head);
        out.predicted[p] = static_cast<std::uint16_t>(a.hard[0] + 1);
    }
    out.report = metrics_on_remainder(scene, split, out.predicted);
    return out;
}

template <typename T>
EvalOutcome<T> run_slcrf_eval(const HsiScene& scene, const Hyperparams<T>& hp) {
    TrainedModel<T> model = run(scene, hp);
    EvalOutcome<T> out;
    out.predicted = predict_scene(model.net, model.head, scene, hp.b);
    out.report = metrics_on_remainder(scene, model.split, out.predicted);
    out.trace = std::move(model.trace);
    return out;
}

// Reconstruction + CRF with the spatial affinity only (no coding state).
template <typename T>
EvalOutcome<T> ablation_recrf(const HsiScene& scene, const Hyperparams<T>& hp) {
    RunFlags flags;
    flags.use_sparse = false;
    flags.pairwise_s2_only = true;
    TrainedModel<T> model = run(scene, hp, flags);
    EvalOutcome<T> out;
    out.predicted = predict_scene(model.net, model.head, scene, hp.b);
    out.report = metrics_on_remainder(scene, model.split, out.predicted);
    out.trace = std::move(model.trace);
    return out;
}

// Reconstruction + sparse coding only; the CRF framework is dropped and the
// frozen latent features are classified by a separately trained softmax head.
template <typename T>
EvalOutcome<T> ablation_sl(const HsiScene& scene, const Hyperparams<T>& hp,
                           std::size_t head_steps = 2000, double head_lr = 0.05) {
    RunFlags flags;
    flags.use_crf = false;
    TrainedModel<T> model = run(scene, hp, flags);

    const auto& labeled = model.split.labeled;
    Matrix<T> train(model.net.latent_dim, labeled.size());
    std::vector<int> labels(labeled.size());
    ForwardCache<T> cache;
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        const std::size_t p = labeled[i];
        Tensor3<T> patch = extract_patch<T>(scene, p / scene.width, p % scene.width, hp.b);
        std::vector<T> x = encode(model.net, patch, cache);
        for (std::size_t kk = 0; kk < x.size(); ++kk) train.at(kk, i) = x[kk];
        labels[i] = static_cast<int>(scene.labels[p]) - 1;
    }
    CrfWeights<T> head = train_softmax_head(train, labels, scene.classes, head_steps,
                                            static_cast<T>(head_lr));
    EvalOutcome<T> out;
    out.predicted = predict_scene(model.net, head, scene, hp.b);
    out.report = metrics_on_remainder(scene, model.split, out.predicted);
    out.trace = std::move(model.trace);
    return out;
}

} // namespace slcrf
