// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. All numeric work runs in 64-bit mode.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "oracles.hpp"
#include "slcrf/slcrf.hpp"

using namespace slcrf;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, bool pass, const std::string& detail, double seconds) {
    std::printf("criterion %d: %s  [%.1fs]  %s\n", criterion, pass ? "PASS" : "FAIL", seconds,
                detail.c_str());
    if (!pass) ++failures;
}

double median3(double a, double b, double c) {
    std::vector<double> v{a, b, c};
    std::sort(v.begin(), v.end());
    return v[1];
}

// --- criterion 1: gradient fidelity ------------------------------------------

void criterion1() {
    const auto t0 = Clock::now();
    double worst = 0;
    std::size_t params = 0;
    bool pass = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        TrainContext<double> ctx =
            make_smooth_gradcheck_context<double>(seed, PairwiseMode::Smoothness);
        FdReport rep = fd_check_theta(ctx, 1e-5);
        worst = std::max(worst, rep.max_rel);
        params = rep.checked;
        pass = pass && rep.pass(1e-4);
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "joint-loss gradients vs central differences: max rel %.3e over %zu params x 5 "
                  "seeds (tol 1e-4)",
                  worst, params);
    report(1, pass && secs < 60.0, buf, secs);
}

// --- criterion 2: proximal exactness ------------------------------------------

void criterion2() {
    const auto t0 = Clock::now();
    Rng rng(2024, "prox-acceptance");
    bool pass = true;
    double worst_gap = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n = 2 + rng.index(7); // n <= 8
        TrainContext<double> ctx;
        ctx.state.Z = Matrix<double>(n, n);
        ctx.state.Tm = Matrix<double>(n, n);
        ctx.state.M = Matrix<double>(n, n);
        for (auto& v : ctx.state.Z.values) v = rng.normal();
        for (auto& v : ctx.state.Tm.values) v = 0.1 * rng.normal();
        ctx.hp.epsilon = 0.05 + rng.uniform();
        ctx.hp.beta = 0.05 + rng.uniform();
        step_m(ctx);

        const double eps = ctx.hp.epsilon, beta = ctx.hp.beta;
        const double thr = beta / eps;
        Matrix<double> Q = ctx.state.Z + (1.0 / eps) * ctx.state.Tm;

        // per-column radial grid oracle
        double fm_total = 0;
        for (std::size_t c = 0; c < n; ++c) {
            std::vector<double> q(n), m(n);
            for (std::size_t r = 0; r < n; ++r) {
                q[r] = Q.at(r, c);
                m[r] = ctx.state.M.at(r, c);
            }
            auto grid = oracles::prox_radial_grid(q, thr);
            const double fm = oracles::prox_objective(q, m, thr);
            const double fo = oracles::prox_objective(q, grid, thr);
            worst_gap = std::max(worst_gap, std::abs(fm - fo));
            if (std::abs(fm - fo) > 1e-6 || fm > fo + 1e-9) pass = false;
            fm_total += fm;
        }

        // 1e4 random perturbations of the full matrix never do better
        auto matrix_obj = [&](const Matrix<double>& M) {
            double acc = 0;
            for (std::size_t c = 0; c < n; ++c) {
                std::vector<double> q(n), m(n);
                for (std::size_t r = 0; r < n; ++r) {
                    q[r] = Q.at(r, c);
                    m[r] = M.at(r, c);
                }
                acc += oracles::prox_objective(q, m, thr);
            }
            return acc;
        };
        const double base = matrix_obj(ctx.state.M);
        for (int t = 0; t < 10000 / 4; ++t) {
            for (double scale : {1e-4, 1e-2, 0.1, 1.0}) {
                Matrix<double> pert = ctx.state.M;
                for (auto& v : pert.values) v += scale * rng.normal();
                if (matrix_obj(pert) < base - 1e-12) pass = false;
            }
        }
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "column shrinkage vs radial grid oracle on 100 instances: max objective gap "
                  "%.3e (tol 1e-6); 1e4 perturbations per instance never improve",
                  worst_gap);
    report(2, pass && secs < 60.0, buf, secs);
}

// --- criterion 3: convolution oracles -----------------------------------------

template <typename T>
LayerState<T> make_layer(LayerKind kind, StackShape in, std::size_t out_maps, std::size_t kx,
                         std::size_t ky, std::size_t kz, std::size_t sx, std::size_t sy,
                         std::size_t sz, Rng& rng) {
    LayerState<T> L;
    L.spec = {kind, out_maps, kx, ky, kz, sx, sy, sz, 0, 0, Activation::None, false};
    L.in_shape = in;
    if (kind == LayerKind::Conv3d)
        L.out_shape = {out_maps, (in.nx - kx) / sx + 1, (in.ny - ky) / sy + 1,
                       (in.nz - kz) / sz + 1};
    else if (kind == LayerKind::Deconv3d)
        L.out_shape = {out_maps, (in.nx - 1) * sx + kx, (in.ny - 1) * sy + ky,
                       (in.nz - 1) * sz + kz};
    else
        L.out_shape = {in.maps, (in.nx - kx) / sx + 1, (in.ny - ky) / sy + 1,
                       (in.nz - kz) / sz + 1};
    if (kind != LayerKind::MaxPool3d) {
        L.weights.resize(out_maps * in.maps * kx * ky * kz);
        for (auto& w : L.weights) w = static_cast<T>(rng.normal());
        L.bias.resize(out_maps);
        for (auto& b : L.bias) b = static_cast<T>(rng.normal());
    }
    return L;
}

template <typename T>
std::vector<std::vector<Tensor3<T>>> kernels_of(const LayerState<T>& L) {
    std::vector<std::vector<Tensor3<T>>> ks(L.spec.out_maps);
    for (std::size_t j = 0; j < L.spec.out_maps; ++j)
        for (std::size_t k = 0; k < L.in_shape.maps; ++k) {
            Tensor3<T> t(L.spec.kx, L.spec.ky, L.spec.kz);
            std::copy_n(L.kernel(j, k), t.size(), t.values.begin());
            ks[j].push_back(std::move(t));
        }
    return ks;
}

void criterion3() {
    const auto t0 = Clock::now();
    Rng rng(33, "conv-acceptance");
    bool conv_exact = true, pool_exact = true, deconv_exact = true;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t mi = 1 + rng.index(3), mo = 1 + rng.index(3);
        const std::size_t kx = 1 + rng.index(3), ky = 1 + rng.index(3), kz = 1 + rng.index(4);
        const std::size_t sx = 1 + rng.index(2), sy = 1 + rng.index(2), sz = 1 + rng.index(3);
        {
            const StackShape shape{mi, kx + rng.index(4), ky + rng.index(4), kz + rng.index(6)};
            auto L = make_layer<double>(LayerKind::Conv3d, shape, mo, kx, ky, kz, sx, sy, sz, rng);
            Stack<double> in = make_stack<double>(shape);
            for (auto& t : in)
                for (auto& v : t.values) v = rng.normal();
            LayerCache<double> cache;
            conv3d_forward(L, in, cache);
            auto expect = oracles::conv3d_naive(in, kernels_of(L), L.bias, sx, sy, sz);
            for (std::size_t m = 0; m < expect.size(); ++m)
                conv_exact = conv_exact && cache.linear[m].values == expect[m].values;
        }
        {
            const StackShape shape{mi, kx + rng.index(4), ky + rng.index(4), kz + rng.index(5)};
            auto L =
                make_layer<double>(LayerKind::MaxPool3d, shape, 0, kx, ky, kz, sx, sy, sz, rng);
            Stack<double> in = make_stack<double>(shape);
            for (auto& t : in)
                for (auto& v : t.values) v = rng.normal();
            LayerCache<double> cache;
            maxpool3d_forward(L, in, cache);
            auto expect = oracles::maxpool3d_naive(in, kx, ky, kz, sx, sy, sz);
            for (std::size_t m = 0; m < expect.size(); ++m)
                pool_exact = pool_exact && cache.linear[m].values == expect[m].values;
        }
        {
            const StackShape shape{mi, 1 + rng.index(4), 1 + rng.index(4), 1 + rng.index(5)};
            auto L =
                make_layer<double>(LayerKind::Deconv3d, shape, mo, kx, ky, kz, sx, sy, sz, rng);
            Stack<double> in = make_stack<double>(shape);
            for (auto& t : in)
                for (auto& v : t.values) v = rng.normal();
            LayerCache<double> cache;
            deconv3d_forward(L, in, cache);
            auto expect = oracles::deconv3d_naive(in, kernels_of(L), L.bias, sx, sy, sz);
            for (std::size_t m = 0; m < expect.size(); ++m)
                deconv_exact = deconv_exact && cache.linear[m].values == expect[m].values;
        }
    }

    double adjoint_worst = 0;
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t mi = 1 + rng.index(3), mo = 1 + rng.index(3);
        const std::size_t kx = 1 + rng.index(3), ky = 1 + rng.index(3), kz = 1 + rng.index(3);
        const std::size_t sx = 1 + rng.index(2), sy = 1 + rng.index(2), sz = 1 + rng.index(2);
        const StackShape xs{mi, kx + sx * rng.index(3), ky + sy * rng.index(3),
                            kz + sz * rng.index(3)};
        auto C = make_layer<double>(LayerKind::Conv3d, xs, mo, kx, ky, kz, sx, sy, sz, rng);
        std::fill(C.bias.begin(), C.bias.end(), 0.0);
        Stack<double> x = make_stack<double>(xs);
        for (auto& t : x)
            for (auto& v : t.values) v = rng.normal();
        LayerCache<double> fc;
        conv3d_forward(C, x, fc);
        Stack<double> y = make_stack<double>(C.out_shape);
        for (auto& t : y)
            for (auto& v : t.values) v = rng.normal();
        LayerState<double> D;
        D.spec = {LayerKind::Deconv3d, mi, kx, ky, kz, sx, sy, sz, 0, 0, Activation::None, false};
        D.in_shape = C.out_shape;
        D.out_shape = xs;
        D.weights.resize(mi * mo * kx * ky * kz);
        D.bias.assign(mi, 0.0);
        for (std::size_t j = 0; j < mi; ++j)
            for (std::size_t k = 0; k < mo; ++k)
                std::copy_n(C.kernel(k, j), kx * ky * kz, D.kernel(j, k));
        LayerCache<double> fd;
        deconv3d_forward(D, y, fd);
        double lhs = 0, rhs = 0, scale = 0;
        for (std::size_t m = 0; m < y.size(); ++m)
            for (std::size_t i = 0; i < y[m].values.size(); ++i)
                lhs += fc.linear[m].values[i] * y[m].values[i];
        for (std::size_t m = 0; m < x.size(); ++m)
            for (std::size_t i = 0; i < x[m].values.size(); ++i)
                rhs += x[m].values[i] * fd.linear[m].values[i];
        scale = std::max({1.0, std::abs(lhs), std::abs(rhs)});
        adjoint_worst = std::max(adjoint_worst, std::abs(lhs - rhs) / scale);
    }

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool pass =
        conv_exact && pool_exact && deconv_exact && adjoint_worst <= 1e-10 && secs < 60.0;
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "conv/pool/deconv vs naive oracles on 50 shapes each: exact=%d/%d/%d; adjoint "
                  "identity worst rel %.2e (tol 1e-10)",
                  int(conv_exact), int(pool_exact), int(deconv_exact), adjoint_worst);
    report(3, pass, buf, secs);
}

// --- criteria 4 and 5: synthetic training behavior and end-to-end -------------

struct SyntheticRuns {
    std::vector<EvalOutcome<double>> slcrf, recrf, slonly, pca;
};

SyntheticRuns run_synthetic_suite(const HsiScene& scene) {
    SyntheticRuns out;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Hyperparams<double> hp = desk_synthetic_preset<double>(seed);
        hp.record_wall_time = false;
        out.slcrf.push_back(run_slcrf_eval(scene, hp));
        out.recrf.push_back(ablation_recrf(scene, hp));
        out.slonly.push_back(ablation_sl(scene, hp));
        LabelSplit split = split_labels(scene, {hp.labeled_fraction, hp.seed, true});
        PcaBaselineConfig cfg;
        out.pca.push_back(baseline_pca_sc<double>(scene, split, cfg));
    }
    return out;
}

void criterion4(const SyntheticRuns& runs, double secs) {
    const TrainTrace<double>& tr = runs.slcrf[0].trace;
    bool feas_ok = !tr.records.empty() &&
                   tr.records.back().feasibility < 1e-2 * tr.initial_feasibility;
    bool ma_ok = true;
    for (std::size_t i = 5; i < tr.records.size(); ++i) {
        double prev = 0, cur = 0;
        for (std::size_t j = i - 5; j < i; ++j) prev += double(tr.records[j].objective);
        for (std::size_t j = i - 4; j <= i; ++j) cur += double(tr.records[j].objective);
        if (cur > prev * (1 + 1e-9) + 1e-12) ma_ok = false;
    }
    bool order_ok = !tr.records.empty();
    for (const auto& r : tr.records) order_ok = order_ok && r.order == "theta,z,m,h,t";
    char buf[200];
    std::snprintf(buf, sizeof(buf),
                  "synthetic 24x24x12: ||Z-M||_F %.3e -> %.3e (ratio %.4f, need <1e-2); "
                  "5-iter objective moving average non-increasing=%d; order theta,z,m,h,t=%d",
                  double(tr.initial_feasibility),
                  tr.records.empty() ? -1.0 : double(tr.records.back().feasibility),
                  tr.records.empty()
                      ? -1.0
                      : double(tr.records.back().feasibility / tr.initial_feasibility),
                  int(ma_ok), int(order_ok));
    report(4, feas_ok && ma_ok && order_ok && secs < 600.0, buf, secs);
}

void criterion5(const SyntheticRuns& runs, double secs) {
    auto oa = [](const std::vector<EvalOutcome<double>>& v, std::size_t i) {
        return v[i].report.oa;
    };
    const double slcrf_min =
        std::min({oa(runs.slcrf, 0), oa(runs.slcrf, 1), oa(runs.slcrf, 2)});
    const double m_slcrf = median3(oa(runs.slcrf, 0), oa(runs.slcrf, 1), oa(runs.slcrf, 2));
    const double m_recrf = median3(oa(runs.recrf, 0), oa(runs.recrf, 1), oa(runs.recrf, 2));
    const double m_sl = median3(oa(runs.slonly, 0), oa(runs.slonly, 1), oa(runs.slonly, 2));
    const double m_pca = median3(oa(runs.pca, 0), oa(runs.pca, 1), oa(runs.pca, 2));
    const bool pass = slcrf_min >= 0.95 && m_slcrf >= m_recrf && m_slcrf >= m_sl &&
                      m_slcrf >= m_pca && secs < 1800.0;
    char buf[220];
    std::snprintf(buf, sizeof(buf),
                  "OA medians over seeds 1-3: SLCRF %.4f (min %.4f, need >=0.95) vs RE-CRF %.4f, "
                  "SL-only %.4f, PCA-SC %.4f (SLCRF >= each)",
                  m_slcrf, slcrf_min, m_recrf, m_sl, m_pca);
    report(5, pass, buf, secs);
}

// --- criterion 6: metrics correctness ------------------------------------------

void criterion6() {
    const auto t0 = Clock::now();
    ConfusionMatrix fixed;
    fixed.classes = 2;
    fixed.counts = {8, 2, 3, 7};
    MetricsReport rep = metrics_from_confusion(fixed);
    bool pass = std::abs(rep.oa - 0.75) <= 1e-12 && std::abs(rep.aa - 0.75) <= 1e-12 &&
                std::abs(rep.kappa - 0.5) <= 1e-12;

    ConfusionMatrix diag;
    diag.classes = 3;
    diag.counts = {4, 0, 0, 0, 9, 0, 0, 0, 2};
    pass = pass && std::abs(metrics_from_confusion(diag).kappa - 1.0) <= 1e-12;

    // outer product of marginals (rows 0.6/0.4, cols 0.5/0.5)
    ConfusionMatrix indep;
    indep.classes = 2;
    indep.counts = {30, 30, 20, 20};
    pass = pass && std::abs(metrics_from_confusion(indep).kappa) <= 1e-12;

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(6, pass,
           "OA/AA/Kappa = 0.75/0.75/0.5 on [[8,2],[3,7]] to 1e-12; kappa 1 on diagonal, 0 on "
           "marginal-product",
           secs);
}

// --- criterion 7: determinism ---------------------------------------------------

void criterion7() {
    const auto t0 = Clock::now();
    HsiScene scene = synthesize(3, 16, 16, 8, 0.05, 21);
    normalize(scene);
    Hyperparams<double> hp = desk_synthetic_preset<double>(4);
    hp.warmup_epochs = 10;
    hp.max_outer_iters = 8;
    hp.h_steps = 50;
    hp.sparse_init_iters = 60;
    hp.record_wall_time = false; // timing off: every trace byte is reproducible

    auto emit = [&](const fs::path& dir) {
        fs::create_directories(dir);
        TrainedModel<double> m = run(scene, hp);
        save_checkpoint(m.net, &m.head, (dir / "model.slcrf").string());
        write_trace_csv(m.trace, (dir / "trace.csv").string());
        auto pred = predict_scene(m.net, m.head, scene, hp.b);
        MetricsReport rep = metrics_on_remainder(scene, m.split, pred);
        write_metrics_csv((dir / "metrics.csv").string(), {{"slcrf", rep}});
    };
    const fs::path base = fs::temp_directory_path() / "slcrf_acceptance_det";
    emit(base / "a");
    emit(base / "b");
    bool pass = true;
    for (const char* f : {"model.slcrf", "trace.csv", "metrics.csv"})
        pass = pass && detail::read_file((base / "a" / f).string()) ==
                           detail::read_file((base / "b" / f).string());
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(7, pass, "two identical-config runs produce bit-identical checkpoint, trace, metrics",
           secs);
}

// --- criterion 8: paper-scale documentation --------------------------------------

void criterion8() {
    const auto t0 = Clock::now();
    // The long-run path exists: the 200-band architecture builds, the tuned
    // preset is available, and a 2048-pixel working set is configurable. The
    // published full-scene numbers are documented as long-run targets in the
    // README; desk-scale correctness is carried by criteria 1-7.
    bool pass = true;
    try {
        Network<double> net = indian_pines_arch<double>();
        pass = pass && net.in_d == 200 && net.latent_dim == 144;
        Hyperparams<double> hp = indian_pines_preset<double>();
        pass = pass && hp.working_set_cap == 2048 && hp.lambda1 == 1e3 && hp.lambda2 == 1e-3;
    } catch (const std::exception&) {
        pass = false;
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    report(8, pass,
           "full-scene accuracies are long-run targets (not desk-reproducible); 200-band "
           "architecture, tuned preset, and 2048-pixel working-set mode are in place",
           secs);
}

} // namespace

int main() {
    std::printf("acceptance suite (64-bit mode)\n");
    criterion1();
    criterion2();
    criterion3();

    const auto t45 = Clock::now();
    HsiScene scene = synthesize(3, 24, 24, 12, 0.05, 777);
    normalize(scene);
    SyntheticRuns runs = run_synthetic_suite(scene);
    const double secs45 = std::chrono::duration<double>(Clock::now() - t45).count();
    criterion4(runs, secs45);
    criterion5(runs, secs45);

    criterion6();
    criterion7();
    criterion8();

    std::printf("%s (%d failure%s)\n", failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT",
                failures, failures == 1 ? "" : "s");
    return failures == 0 ? 0 : 1;
}
