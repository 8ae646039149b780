// Command-line front end: synthetic scenes, training, classification,
// evaluation, gradient checks, ablations, and hyperparameter sweeps.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "slcrf/slcrf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitGradcheck = 4;

struct Options {
    // paths
    std::string scene_header, scene_labels, out = "runs", model_path, pred_path;
    std::string run_dir; // explicit run directory (otherwise timestamp+seed)
    // synth
    std::size_t classes = 3, size = 24, bands = 12;
    double noise = 0.05;
    // hyperparameters (names match the flags)
    double labeled_frac = 0.05;
    std::size_t patch = 5, latent = 8, knn = 5, batch = 32, iters = 40;
    double omega = 1e3, epsilon = 0.01, alpha = 0.0005, beta = 1e-3, gamma = 1.0, eta = 0.02;
    double lambda1 = 5e-6, lambda2 = 1.0, delta1 = 0.001, delta2 = 1.0, tau = 0.0002;
    std::uint64_t seed = 1;
    std::size_t warmup = 50, h_steps = 200, theta_epochs = 1, z_steps = 1;
    std::size_t cap = 2048, sparse_iters = 150;
    std::string pairwise_mode = "smoothness";
    std::string timing = "wall";
    std::string preset;
    bool f64 = false;
    bool paper_literal_seed = false;
    bool epsilon_growth = false;
    bool dump_coding = false;
    // gradcheck
    std::size_t gc_seeds = 5;
    // ablate
    std::string which = "all";
    std::size_t head_steps = 2000;
    double head_lr = 0.05;
    // sweep
    std::size_t budget = 8;
    // pca baseline
    std::size_t pca_components = 8;
    std::size_t pca_steps = 2000;
    double pca_lr = 0.05;
};

template <typename T>
slcrf::Hyperparams<T> to_hyperparams(const Options& o) {
    slcrf::Hyperparams<T> hp;
    if (o.preset == "desk-synthetic") hp = slcrf::desk_synthetic_preset<T>(o.seed);
    else if (o.preset == "indian-pines") hp = slcrf::indian_pines_preset<T>(o.seed);
    else if (!o.preset.empty()) throw std::runtime_error("unknown preset: " + o.preset);
    if (!o.preset.empty()) {
        hp.record_wall_time = o.timing == "wall";
        return hp;
    }
    hp.omega = T(o.omega);
    hp.epsilon = T(o.epsilon);
    hp.alpha = T(o.alpha);
    hp.beta = T(o.beta);
    hp.gamma = T(o.gamma);
    hp.eta = T(o.eta);
    hp.lambda1 = T(o.lambda1);
    hp.lambda2 = T(o.lambda2);
    hp.delta1 = T(o.delta1);
    hp.delta2 = T(o.delta2);
    hp.tau = T(o.tau);
    hp.k = o.knn;
    hp.latent = o.latent;
    hp.b = o.patch;
    hp.batch = o.batch;
    hp.labeled_fraction = o.labeled_frac;
    hp.working_set_cap = o.cap;
    hp.max_outer_iters = o.iters;
    hp.warmup_epochs = o.warmup;
    hp.theta_epochs = o.theta_epochs;
    hp.z_steps = o.z_steps;
    hp.h_steps = o.h_steps;
    hp.sparse_init_iters = o.sparse_iters;
    hp.seed = o.seed;
    hp.pairwise_mode = o.pairwise_mode == "paper-literal" ? slcrf::PairwiseMode::PaperLiteral
                                                          : slcrf::PairwiseMode::Smoothness;
    hp.paper_literal_latent_seed = o.paper_literal_seed;
    hp.epsilon_growth = o.epsilon_growth;
    hp.record_wall_time = o.timing == "wall";
    return hp;
}

template <typename T>
json hyperparams_json(const slcrf::Hyperparams<T>& hp) {
    json j;
    j["omega"] = double(hp.omega);
    j["epsilon"] = double(hp.epsilon);
    j["alpha"] = double(hp.alpha);
    j["beta"] = double(hp.beta);
    j["gamma"] = double(hp.gamma);
    j["eta"] = double(hp.eta);
    j["lambda1"] = double(hp.lambda1);
    j["lambda2"] = double(hp.lambda2);
    j["delta1"] = double(hp.delta1);
    j["delta2"] = double(hp.delta2);
    j["tau"] = double(hp.tau);
    j["k"] = hp.k;
    j["latent"] = hp.latent;
    j["patch"] = hp.b;
    j["batch"] = hp.batch;
    j["labeled_fraction"] = hp.labeled_fraction;
    j["working_set_cap"] = hp.working_set_cap;
    j["max_outer_iters"] = hp.max_outer_iters;
    j["warmup_epochs"] = hp.warmup_epochs;
    j["theta_epochs"] = hp.theta_epochs;
    j["z_steps"] = hp.z_steps;
    j["h_steps"] = hp.h_steps;
    j["sparse_init_iters"] = hp.sparse_init_iters;
    j["tol_obj"] = double(hp.tol_obj);
    j["tol_feas"] = double(hp.tol_feas);
    j["seed"] = hp.seed;
    j["pairwise_mode"] =
        hp.pairwise_mode == slcrf::PairwiseMode::PaperLiteral ? "paper-literal" : "smoothness";
    j["paper_literal_latent_seed"] = hp.paper_literal_latent_seed;
    j["h2_max"] = double(hp.h2_max);
    j["epsilon_growth"] = hp.epsilon_growth;
    j["record_wall_time"] = hp.record_wall_time;
    return j;
}

fs::path make_run_dir(const Options& o) {
    if (!o.run_dir.empty()) {
        fs::create_directories(o.run_dir);
        return o.run_dir;
    }
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
    fs::path dir = fs::path(o.out) / (std::string(stamp) + "-seed" + std::to_string(o.seed));
    fs::create_directories(dir);
    return dir;
}

slcrf::HsiScene load_and_normalize(const Options& o,
                                   std::vector<std::pair<float, float>>* ranges = nullptr) {
    slcrf::HsiScene scene = slcrf::load_scene(o.scene_header, o.scene_labels);
    auto r = slcrf::normalize(scene);
    if (ranges) *ranges = std::move(r);
    return scene;
}

void write_pred_u16(const std::vector<std::uint16_t>& pred, const std::string& path) {
    slcrf::detail::write_file(path, pred.data(), pred.size() * sizeof(std::uint16_t));
}

std::vector<std::uint16_t> read_pred_u16(const std::string& path, std::size_t expect) {
    auto bytes = slcrf::detail::read_file(path);
    if (bytes.size() != expect * sizeof(std::uint16_t))
        throw std::runtime_error("prediction grid size mismatch: " + path);
    std::vector<std::uint16_t> pred(expect);
    std::copy_n(reinterpret_cast<const std::uint16_t*>(bytes.data()), expect, pred.begin());
    return pred;
}

int cmd_synth(const Options& o) {
    slcrf::HsiScene scene =
        slcrf::synthesize(o.classes, o.size, o.size, o.bands, o.noise, o.seed);
    fs::path base(o.out);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());
    const std::string hdr = o.out + ".json";
    const std::string raw = o.out + ".raw";
    const std::string lab = o.out + ".labels";
    slcrf::save_scene(scene, hdr, raw, lab);
    std::printf("wrote %s %s %s (%zux%zu, %zu bands, %zu classes)\n", hdr.c_str(), raw.c_str(),
                lab.c_str(), scene.height, scene.width, scene.bands, scene.classes);
    return 0;
}

template <typename T>
int cmd_train(const Options& o) {
    std::vector<std::pair<float, float>> ranges;
    slcrf::HsiScene scene = load_and_normalize(o, &ranges);
    slcrf::Hyperparams<T> hp = to_hyperparams<T>(o);
    fs::path dir = make_run_dir(o);

    slcrf::TrainedModel<T> model = slcrf::run(scene, hp);
    slcrf::save_checkpoint(model.net, &model.head, (dir / "model.slcrf").string());
    slcrf::write_trace_csv(model.trace, (dir / "trace.csv").string());

    auto pred = slcrf::predict_scene(model.net, model.head, scene, hp.b);
    write_pred_u16(pred, (dir / "pred.u16").string());
    auto palette = slcrf::default_palette(scene.classes);
    slcrf::render_map(pred, scene.height, scene.width, palette, (dir / "map.ppm").string());
    slcrf::write_palette_csv(palette, (dir / "palette.csv").string());
    slcrf::MetricsReport rep = slcrf::metrics_on_remainder(scene, model.split, pred);
    slcrf::write_metrics_csv((dir / "metrics.csv").string(), {{"slcrf", rep}});
    if (o.dump_coding) {
        slcrf::dump_matrix_f32(model.state.Z, (dir / "Z.f32").string());
        auto rel = slcrf::relationship_matrix(model.state.Z, model.graph, model.ws.positions,
                                              hp.gamma, hp.omega);
        slcrf::dump_matrix_f32(rel.S, (dir / "S.f32").string());
    }

    json meta;
    meta["command"] = "train";
    meta["scene"] = o.scene_header;
    meta["labels"] = o.scene_labels;
    meta["scalar_width"] = sizeof(T);
    meta["preset"] = o.preset;
    meta["hyperparams"] = hyperparams_json(hp);
    meta["normalization"] = json::array();
    for (auto& [mn, mx] : ranges) meta["normalization"].push_back({mn, mx});
    meta["working_set_size"] = model.ws.size();
    meta["labeled_pixels"] = model.split.labeled.size();
    meta["initial_feasibility"] = double(model.trace.initial_feasibility);
    meta["initial_objective"] = double(model.trace.initial_objective);
    meta["iterations"] = model.trace.records.size();
    meta["converged"] = model.trace.converged;
    meta["diverged"] = model.trace.diverged;
    meta["sparse_init_converged"] = model.trace.sparse_init_converged;
    meta["oa"] = rep.oa;
    meta["aa"] = rep.aa;
    meta["kappa"] = rep.kappa;
    std::ofstream mf(dir / "metadata.json");
    mf << meta.dump(2) << "\n";

    std::printf("run dir: %s\n", dir.string().c_str());
    std::printf("iterations=%zu converged=%d oa=%.4f aa=%.4f kappa=%.4f\n",
                model.trace.records.size(), int(model.trace.converged), rep.oa, rep.aa, rep.kappa);
    if (model.trace.diverged) {
        std::fprintf(stderr, "training diverged; trace written to %s\n",
                     (dir / "trace.csv").string().c_str());
        return kExitDiverged;
    }
    return 0;
}

template <typename T>
int cmd_classify(const Options& o) {
    slcrf::HsiScene scene = load_and_normalize(o);
    slcrf::Network<T> net;
    slcrf::CrfWeights<T> head;
    bool has_head = false;
    slcrf::load_checkpoint(o.model_path, net, &head, &has_head);
    if (!has_head) throw std::runtime_error("checkpoint has no classifier head: " + o.model_path);
    auto pred = slcrf::predict_scene(net, head, scene, net.in_b);
    fs::path dir = make_run_dir(o);
    write_pred_u16(pred, (dir / "pred.u16").string());
    auto palette = slcrf::default_palette(scene.classes);
    slcrf::render_map(pred, scene.height, scene.width, palette, (dir / "map.ppm").string());
    slcrf::write_palette_csv(palette, (dir / "palette.csv").string());
    std::printf("wrote %s\n", (dir / "map.ppm").string().c_str());
    return 0;
}

int cmd_eval(const Options& o) {
    slcrf::HsiScene scene = slcrf::load_scene(o.scene_header, o.scene_labels);
    auto pred = read_pred_u16(o.pred_path, scene.height * scene.width);
    slcrf::LabelSplit split = slcrf::split_labels(scene, {o.labeled_frac, o.seed, true});
    slcrf::MetricsReport rep = slcrf::metrics_on_remainder(scene, split, pred);
    fs::path dir = make_run_dir(o);
    slcrf::write_metrics_csv((dir / "metrics.csv").string(), {{"eval", rep}});
    std::printf("oa=%.6f aa=%.6f kappa=%.6f (%s)\n", rep.oa, rep.aa, rep.kappa,
                (dir / "metrics.csv").string().c_str());
    return 0;
}

int cmd_gradcheck(const Options& o) {
    using T = double; // gradient checks always run in 64-bit mode
    bool ok = true;
    for (std::uint64_t s = 1; s <= o.gc_seeds; ++s) {
        auto ctx = slcrf::make_smooth_gradcheck_context<T>(s, slcrf::PairwiseMode::Smoothness);
        auto theta = slcrf::fd_check_theta(ctx);
        auto h = slcrf::fd_check_h(ctx);
        auto z = slcrf::fd_check_z(ctx);
        const bool pass = theta.pass(1e-4) && h.pass(1e-4) && z.pass(1e-3);
        ok = ok && pass;
        std::printf("seed %llu: theta %.3e (%zu params)  h %.3e  z %.3e  %s\n",
                    (unsigned long long)s, theta.max_rel, theta.checked, h.max_rel, z.max_rel,
                    pass ? "ok" : "FAIL");
    }
    {
        auto lit = slcrf::make_smooth_gradcheck_context<T>(7, slcrf::PairwiseMode::PaperLiteral);
        auto theta = slcrf::fd_check_theta(lit);
        auto h = slcrf::fd_check_h(lit);
        const bool pass = theta.pass(1e-4) && h.pass(1e-4);
        ok = ok && pass;
        std::printf("paper-literal: theta %.3e  h %.3e  %s\n", theta.max_rel, h.max_rel,
                    pass ? "ok" : "FAIL");
    }
    {
        auto bn = slcrf::make_smooth_gradcheck_context<T>(9, slcrf::PairwiseMode::Smoothness,
                                                          false, true);
        auto theta = slcrf::fd_check_theta(bn);
        ok = ok && theta.pass(1e-4);
        std::printf("batch-norm: theta %.3e  %s\n", theta.max_rel,
                    theta.pass(1e-4) ? "ok" : "FAIL");
    }
    std::printf("gradcheck %s\n", ok ? "PASSED" : "FAILED");
    return ok ? 0 : kExitGradcheck;
}

template <typename T>
int cmd_ablate(const Options& o) {
    slcrf::HsiScene scene = load_and_normalize(o);
    slcrf::Hyperparams<T> hp = to_hyperparams<T>(o);
    fs::path dir = make_run_dir(o);
    std::vector<std::pair<std::string, slcrf::MetricsReport>> rows;
    auto palette = slcrf::default_palette(scene.classes);

    auto emit = [&](const std::string& name, const slcrf::EvalOutcome<T>& out) {
        rows.emplace_back(name, out.report);
        slcrf::render_map(out.predicted, scene.height, scene.width, palette,
                          (dir / (name + ".ppm")).string());
        std::printf("%-8s oa=%.4f aa=%.4f kappa=%.4f\n", name.c_str(), out.report.oa,
                    out.report.aa, out.report.kappa);
    };

    const bool all = o.which == "all";
    if (all || o.which == "slcrf") emit("slcrf", slcrf::run_slcrf_eval(scene, hp));
    if (all || o.which == "recrf") emit("recrf", slcrf::ablation_recrf(scene, hp));
    if (all || o.which == "sl") emit("sl", slcrf::ablation_sl(scene, hp, o.head_steps, o.head_lr));
    if (all || o.which == "pca") {
        slcrf::LabelSplit split = slcrf::split_labels(scene, {hp.labeled_fraction, hp.seed, true});
        slcrf::PcaBaselineConfig cfg{o.pca_components, hp.b, o.pca_steps, o.pca_lr};
        auto out = slcrf::baseline_pca_sc<T>(scene, split, cfg);
        emit("pca-sc", out);
    }
    slcrf::write_palette_csv(palette, (dir / "palette.csv").string());
    slcrf::write_metrics_csv((dir / "metrics.csv").string(), rows);
    std::printf("metrics: %s\n", (dir / "metrics.csv").string().c_str());
    return 0;
}

template <typename T>
int cmd_sweep(const Options& o) {
    slcrf::HsiScene scene = load_and_normalize(o);
    fs::path dir = make_run_dir(o);
    std::ofstream csv(dir / "sweep.csv", std::ios::trunc);
    csv << "k,lambda1,lambda2,beta,gamma,eta,oa,aa,kappa\n";
    csv.precision(17);

    std::size_t done = 0;
    for (std::size_t k = 3; k <= 10 && done < o.budget; ++k)
        for (int l1 = -9; l1 <= 9 && done < o.budget; l1 += 3)
            for (int l2 = -9; l2 <= 9 && done < o.budget; l2 += 3) {
                slcrf::Hyperparams<T> hp = to_hyperparams<T>(o);
                hp.k = k;
                hp.lambda1 = T(std::pow(10.0, l1));
                hp.lambda2 = T(std::pow(10.0, l2));
                hp.seed = o.seed;
                slcrf::MetricsReport rep;
                rep.oa = rep.aa = rep.kappa = -1;
                try {
                    auto out = slcrf::run_slcrf_eval(scene, hp);
                    rep = out.report;
                } catch (const std::exception&) {
                    // divergence or degenerate point: keep the -1 sentinel row
                }
                csv << k << ',' << double(hp.lambda1) << ',' << double(hp.lambda2) << ','
                    << double(hp.beta) << ',' << double(hp.gamma) << ',' << double(hp.eta) << ','
                    << rep.oa << ',' << rep.aa << ',' << rep.kappa << "\n";
                csv.flush();
                std::printf("point %zu: k=%zu l1=1e%d l2=1e%d oa=%.4f\n", done, k, l1, l2, rep.oa);
                ++done;
            }
    std::printf("sweep: %zu points -> %s\n", done, (dir / "sweep.csv").string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"SLCRF: semi-supervised hyperspectral classification via a 3D convolutional "
                 "autoencoder, sparse self-expression, and a CRF energy"};
    app.require_subcommand(1);

    auto add_hp_flags = [&](CLI::App* c) {
        c->add_option("--labeled-frac", o.labeled_frac, "labeled fraction of each class");
        c->add_option("--patch", o.patch, "patch size b (odd)");
        c->add_option("--latent", o.latent, "latent dimension K");
        c->add_option("--knn", o.knn, "spatial k-nearest neighbors");
        c->add_option("--omega", o.omega, "spatial kernel width");
        c->add_option("--epsilon", o.epsilon, "multiplier penalty");
        c->add_option("--alpha", o.alpha, "weight decay");
        c->add_option("--beta", o.beta, "sparsity weight");
        c->add_option("--gamma", o.gamma, "spatial affinity weight");
        c->add_option("--eta", o.eta, "pairwise energy weight");
        c->add_option("--lambda1", o.lambda1, "coding term weight");
        c->add_option("--lambda2", o.lambda2, "CRF term weight");
        c->add_option("--delta1", o.delta1, "autoencoder learning rate");
        c->add_option("--delta2", o.delta2, "Z step size");
        c->add_option("--tau", o.tau, "h step size");
        c->add_option("--batch", o.batch, "mini-batch size");
        c->add_option("--iters", o.iters, "max outer iterations");
        c->add_option("--seed", o.seed, "random seed");
        c->add_option("--pairwise-mode", o.pairwise_mode, "smoothness|paper-literal")
            ->check(CLI::IsMember({"smoothness", "paper-literal"}));
        c->add_flag("--f64", o.f64, "64-bit scalars (default 32-bit training mode)");
        c->add_option("--warmup", o.warmup, "reconstruction-only warmup epochs");
        c->add_option("--h-steps", o.h_steps, "h gradient steps per outer iteration");
        c->add_option("--theta-epochs", o.theta_epochs, "theta epochs per outer iteration");
        c->add_option("--z-steps", o.z_steps, "Z gradient steps per outer iteration");
        c->add_option("--cap", o.cap, "working set cap");
        c->add_option("--sparse-iters", o.sparse_iters, "sparse-code init iterations");
        c->add_option("--timing", o.timing, "wall|off (off for byte-identical traces)")
            ->check(CLI::IsMember({"wall", "off"}));
        c->add_option("--preset", o.preset, "desk-synthetic|indian-pines");
        c->add_flag("--paper-literal-seed", o.paper_literal_seed,
                    "as-printed latent coding seed variant");
        c->add_flag("--epsilon-growth", o.epsilon_growth, "enable penalty growth");
        c->add_option("--run-dir", o.run_dir, "explicit run directory");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled scene");
    synth->add_option("--classes", o.classes)->check(CLI::Range(std::size_t(2), std::size_t(64)));
    synth->add_option("--size", o.size, "square scene side");
    synth->add_option("--bands", o.bands);
    synth->add_option("--noise", o.noise);
    synth->add_option("--seed", o.seed);
    synth->add_option("--out", o.out, "output base path")->required();

    auto* train = app.add_subcommand("train", "train on a scene");
    train->add_option("--scene", o.scene_header, "scene header JSON")->required();
    train->add_option("--labels", o.scene_labels, "label grid file")->required();
    train->add_option("--out", o.out, "runs root directory");
    train->add_flag("--dump-coding", o.dump_coding, "dump Z and S matrices");
    add_hp_flags(train);

    auto* classify = app.add_subcommand("classify", "classify a scene with a checkpoint");
    classify->add_option("--scene", o.scene_header)->required();
    classify->add_option("--labels", o.scene_labels)->required();
    classify->add_option("--model", o.model_path)->required();
    classify->add_option("--out", o.out);
    classify->add_option("--run-dir", o.run_dir);

    auto* eval = app.add_subcommand("eval", "score a prediction grid");
    eval->add_option("--scene", o.scene_header)->required();
    eval->add_option("--labels", o.scene_labels)->required();
    eval->add_option("--pred", o.pred_path)->required();
    eval->add_option("--labeled-frac", o.labeled_frac);
    eval->add_option("--seed", o.seed);
    eval->add_option("--out", o.out);
    eval->add_option("--run-dir", o.run_dir);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--seeds", o.gc_seeds, "number of seeds");

    auto* ablate = app.add_subcommand("ablate", "run baselines and ablations");
    ablate->add_option("--scene", o.scene_header)->required();
    ablate->add_option("--labels", o.scene_labels)->required();
    ablate->add_option("--out", o.out);
    ablate->add_option("--which", o.which, "all|slcrf|recrf|sl|pca")
        ->check(CLI::IsMember({"all", "slcrf", "recrf", "sl", "pca"}));
    ablate->add_option("--head-steps", o.head_steps);
    ablate->add_option("--head-lr", o.head_lr);
    ablate->add_option("--pca-components", o.pca_components);
    ablate->add_option("--pca-steps", o.pca_steps);
    ablate->add_option("--pca-lr", o.pca_lr);
    add_hp_flags(ablate);

    auto* sweep = app.add_subcommand("sweep", "grid sweep over k, lambda1, lambda2");
    sweep->add_option("--scene", o.scene_header)->required();
    sweep->add_option("--labels", o.scene_labels)->required();
    sweep->add_option("--out", o.out);
    sweep->add_option("--budget", o.budget, "max grid points");
    add_hp_flags(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) ? kExitUsage : 0;
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (train->parsed()) return o.f64 ? cmd_train<double>(o) : cmd_train<float>(o);
        if (classify->parsed()) {
            const std::size_t width = slcrf::checkpoint_scalar_width(o.model_path);
            return width == 8 ? cmd_classify<double>(o) : cmd_classify<float>(o);
        }
        if (eval->parsed()) return cmd_eval(o);
        if (gradcheck->parsed()) return cmd_gradcheck(o);
        if (ablate->parsed()) return o.f64 ? cmd_ablate<double>(o) : cmd_ablate<float>(o);
        if (sweep->parsed()) return o.f64 ? cmd_sweep<double>(o) : cmd_sweep<float>(o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}
