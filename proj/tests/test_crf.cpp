#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "slcrf/crf.hpp"
#include "slcrf/gradcheck.hpp"
#include "slcrf/rng.hpp"

using namespace slcrf;

TEST_CASE("classify: uniform at zero weights, shift invariance, logistic values") {
    CrfWeights<double> w = make_crf_weights<double>(4, 3);
    Matrix<double> latent(3, 5);
    Rng rng(2, "latents");
    for (auto& v : latent.values) v = rng.normal();
    LabelAssignment<double> a = classify(latent, w);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t t = 0; t < 4; ++t) CHECK(a.probs.at(t, i) == Catch::Approx(0.25));

    // argmax invariant to adding a constant to all logits (shift b uniformly)
    for (auto& v : w.W.values) v = rng.normal();
    LabelAssignment<double> base = classify(latent, w);
    CrfWeights<double> shifted = w;
    for (auto& b : shifted.b) b += 3.7;
    LabelAssignment<double> moved = classify(latent, shifted);
    CHECK(moved.hard == base.hard);

    // 2-class hand-set logistic check
    CrfWeights<double> two = make_crf_weights<double>(2, 1);
    two.W.at(0, 0) = 1.0;
    two.W.at(1, 0) = -1.0;
    Matrix<double> x(1, 1);
    x.at(0, 0) = 0.3;
    LabelAssignment<double> p = classify(x, two);
    const double expect = 1.0 / (1.0 + std::exp(-0.6));
    CHECK(p.probs.at(0, 0) == Catch::Approx(expect).epsilon(1e-12));

    // probability columns sum to one
    for (std::size_t i = 0; i < 5; ++i) {
        double s = 0;
        for (std::size_t t = 0; t < 4; ++t) s += base.probs.at(t, i);
        CHECK(s == Catch::Approx(1.0).margin(1e-6));
    }

    Matrix<double> wrong(2, 5);
    CHECK_THROWS(classify(wrong, w));
}

TEST_CASE("unary energy") {
    LabelAssignment<double> a;
    a.probs = Matrix<double>(4, 3);
    // pixel 0: certain on class 2; pixel 1: uniform; pixel 2: unlabeled
    a.probs.at(2, 0) = 1.0;
    for (std::size_t t = 0; t < 4; ++t) a.probs.at(t, 1) = 0.25;
    a.probs.at(0, 2) = 1.0;
    std::vector<int> labels = {2, 1, -1};
    const double e = unary_energy(a, labels);
    CHECK(e == Catch::Approx(std::log(4.0)).epsilon(1e-12));

    // three labeled pixels with known probabilities, hand-summed
    LabelAssignment<double> b;
    b.probs = Matrix<double>(2, 3);
    b.probs.at(0, 0) = 0.9;
    b.probs.at(1, 0) = 0.1;
    b.probs.at(0, 1) = 0.4;
    b.probs.at(1, 1) = 0.6;
    b.probs.at(0, 2) = 0.25;
    b.probs.at(1, 2) = 0.75;
    std::vector<int> lb = {0, 1, 0};
    CHECK(unary_energy(b, lb) ==
          Catch::Approx(-std::log(0.9) - std::log(0.6) - std::log(0.25)).epsilon(1e-12));

    // log floor keeps zero probabilities finite
    LabelAssignment<double> c;
    c.probs = Matrix<double>(2, 1);
    c.probs.at(0, 0) = 0.0;
    c.probs.at(1, 0) = 1.0;
    std::vector<int> lc = {0};
    CHECK(unary_energy(c, lc) == Catch::Approx(-std::log(1e-12)));
}

TEST_CASE("pairwise energy in both modes") {
    // 2-node graph, S12 = 1
    std::vector<PixelPos> pts = {{0, 0}, {0, 1}};
    SpatialGraph g = knn_spatial(pts, 1, 1e3);
    Matrix<double> S(2, 2);
    S.at(0, 1) = S.at(1, 0) = 1.0;

    LabelAssignment<double> a;
    a.probs = Matrix<double>(2, 2);
    a.probs.at(0, 0) = 1.0;
    a.probs.at(1, 1) = 1.0;
    // ||y1 - y2||^2 = 2, normalized by degree 1, both orientations -> 4
    CHECK(pairwise_energy(a, S, g, PairwiseMode::Smoothness, 0.0) == Catch::Approx(4.0));

    // identical probability columns give zero smoothness energy
    LabelAssignment<double> same;
    same.probs = Matrix<double>(2, 2);
    same.probs.at(0, 0) = same.probs.at(0, 1) = 0.5;
    same.probs.at(1, 0) = same.probs.at(1, 1) = 0.5;
    CHECK(pairwise_energy(same, S, g, PairwiseMode::Smoothness, 0.0) == 0.0);

    // S = 0: zero in both modes
    Matrix<double> zero(2, 2);
    CHECK(pairwise_energy(a, zero, g, PairwiseMode::Smoothness, 0.0) == 0.0);
    CHECK(pairwise_energy(a, zero, g, PairwiseMode::PaperLiteral, 2.0) == 0.0);

    // paper-literal value: sum of -h2 * S over both orientations
    CHECK(pairwise_energy(a, S, g, PairwiseMode::PaperLiteral, 2.0) == Catch::Approx(-4.0));
}

TEST_CASE("energy composition") {
    TrainContext<double> ctx = make_gradcheck_context<double>(3, PairwiseMode::Smoothness);
    LabelAssignment<double> a = classify(ctx.ws.latent, ctx.head);
    const double unary = unary_energy(a, ctx.ws.label);
    const double pair =
        pairwise_energy(a, ctx.rel.S, ctx.graph, PairwiseMode::Smoothness, ctx.head.h2);
    const double eta = 0.37;
    CHECK(crf_energy(ctx.ws.latent, ctx.head, ctx.rel.S, ctx.graph, ctx.ws.label, eta,
                     PairwiseMode::Smoothness) == Catch::Approx(unary + eta * pair).epsilon(1e-12));
    // eta = 0 leaves the unary term
    CHECK(crf_energy(ctx.ws.latent, ctx.head, ctx.rel.S, ctx.graph, ctx.ws.label, 0.0,
                     PairwiseMode::Smoothness) == Catch::Approx(unary).epsilon(1e-12));

    // no labeled pixels + identical probabilities -> zero energy
    std::vector<int> none(ctx.ws.label.size(), -1);
    CrfWeights<double> wzero = make_crf_weights<double>(3, ctx.net.latent_dim);
    CHECK(crf_energy(ctx.ws.latent, wzero, ctx.rel.S, ctx.graph, none, eta,
                     PairwiseMode::Smoothness) == 0.0);
}

TEST_CASE("h gradients: forcing cases and finite differences") {
    TrainContext<double> ctx = make_gradcheck_context<double>(5, PairwiseMode::Smoothness);

    // probability-1 on the true class at every labeled pixel zeroes the
    // unary gradient (checked in paper-literal mode where pairwise is h2-only)
    {
        TrainContext<double> lit = make_gradcheck_context<double>(5, PairwiseMode::PaperLiteral);
        LabelAssignment<double> a;
        a.probs = Matrix<double>(3, lit.n());
        for (std::size_t i = 0; i < lit.n(); ++i)
            a.probs.at(lit.ws.label[i] >= 0 ? lit.ws.label[i] : 0, i) = 1.0;
        CrfGradients<double> g = h_gradients(lit.ws.latent, a, lit.ws.label, lit.rel.S, lit.graph,
                                             1.0, 0.5, PairwiseMode::PaperLiteral);
        for (double v : g.dW.values) CHECK(v == 0.0);
        for (double v : g.db) CHECK(v == 0.0);
    }

    // S = 0 zeroes the h2 gradient
    {
        Matrix<double> zero(ctx.n(), ctx.n());
        LabelAssignment<double> a = classify(ctx.ws.latent, ctx.head);
        CrfGradients<double> g = h_gradients(ctx.ws.latent, a, ctx.ws.label, zero, ctx.graph, 1.0,
                                             0.5, PairwiseMode::PaperLiteral);
        CHECK(g.dh2 == 0.0);
    }

    // finite differences of L4 in both modes
    for (auto mode : {PairwiseMode::Smoothness, PairwiseMode::PaperLiteral}) {
        TrainContext<double> c2 = make_gradcheck_context<double>(7, mode);
        FdReport rep = fd_check_h(c2);
        INFO("mode " << (mode == PairwiseMode::Smoothness ? "smoothness" : "literal") << " max rel "
                     << rep.max_rel);
        CHECK(rep.pass(1e-4));
    }
}

TEST_CASE("h update: no-ops and descent") {
    TrainContext<double> ctx = make_gradcheck_context<double>(9, PairwiseMode::Smoothness);
    CrfWeights<double> before = ctx.head;

    CrfGradients<double> zero;
    zero.dW = Matrix<double>(3, 4);
    zero.db.assign(3, 0.0);
    h_update(ctx.head, zero, 0.0002);
    CHECK(ctx.head.W.values == before.W.values);

    LabelAssignment<double> a = classify(ctx.ws.latent, ctx.head);
    CrfGradients<double> g = h_gradients(ctx.ws.latent, a, ctx.ws.label, ctx.rel.S, ctx.graph,
                                         ctx.hp.lambda2, ctx.hp.eta, PairwiseMode::Smoothness);
    h_update(ctx.head, g, 0.0);
    CHECK(ctx.head.W.values == before.W.values);

    const double l0 = h_objective(ctx);
    for (int i = 0; i < 25; ++i) {
        LabelAssignment<double> ai = classify(ctx.ws.latent, ctx.head);
        CrfGradients<double> gi = h_gradients(ctx.ws.latent, ai, ctx.ws.label, ctx.rel.S, ctx.graph,
                                              ctx.hp.lambda2, ctx.hp.eta, PairwiseMode::Smoothness);
        h_update(ctx.head, gi, 0.01);
    }
    CHECK(h_objective(ctx) < l0);
}

TEST_CASE("h2 stays clamped in paper-literal mode") {
    TrainContext<double> ctx = make_gradcheck_context<double>(13, PairwiseMode::PaperLiteral);
    ctx.head.h2_max = 1.0;
    // the literal h2 gradient is a negative constant, pushing h2 upward
    for (int i = 0; i < 10000; ++i) {
        LabelAssignment<double> a = classify(ctx.ws.latent, ctx.head);
        CrfGradients<double> g = h_gradients(ctx.ws.latent, a, ctx.ws.label, ctx.rel.S, ctx.graph,
                                             1.0, 1.0, PairwiseMode::PaperLiteral);
        h_update(ctx.head, g, 0.01);
    }
    CHECK(ctx.head.h2 <= 1.0);
    CHECK(ctx.head.h2 >= 0.0);
}

TEST_CASE("softmax head trainer separates a linear toy") {
    Rng rng(21, "head");
    Matrix<double> feats(2, 40);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < 40; ++i) {
        const int cls = int(i % 2);
        feats.at(0, i) = rng.normal() + (cls ? 3.0 : -3.0);
        feats.at(1, i) = rng.normal();
        labels[i] = cls;
    }
    CrfWeights<double> head = train_softmax_head(feats, labels, 2, 500, 0.1);
    LabelAssignment<double> a = classify(feats, head);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < 40; ++i)
        if (a.hard[i] == std::size_t(labels[i])) ++correct;
    CHECK(correct == 40);
}
