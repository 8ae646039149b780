#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "slcrf/relations.hpp"
#include "slcrf/rng.hpp"

using namespace slcrf;

TEST_CASE("knn_spatial geometry and closure") {
    // three collinear pixels: middle linked to both ends after closure
    std::vector<PixelPos> line = {{0, 0}, {0, 1}, {0, 2}};
    SpatialGraph g = knn_spatial(line, 1, 1e3);
    CHECK(g.neighbors[0] == std::vector<std::size_t>{1});
    CHECK(g.neighbors[2] == std::vector<std::size_t>{1});
    CHECK(g.adj[1] == std::vector<std::size_t>{0, 2});

    // k >= n-1 gives the complete graph
    SpatialGraph full = knn_spatial(line, 5, 1e3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(full.neighbors[i].size() == 2);
    CHECK(full.adj[0] == std::vector<std::size_t>{1, 2});

    CHECK_THROWS(knn_spatial({{0, 0}}, 1, 1e3));
    CHECK_THROWS(knn_spatial(line, 0, 1e3));
    CHECK_THROWS(knn_spatial(line, 1, 0.0));
}

TEST_CASE("knn_spatial matches a brute-force sort oracle") {
    Rng rng(31, "knn");
    std::vector<PixelPos> pts;
    for (int i = 0; i < 20; ++i) pts.push_back({rng.index(15), rng.index(15)});
    const std::size_t k = 4;
    SpatialGraph g = knn_spatial(pts, k, 1e3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t j = 0; j < pts.size(); ++j)
            if (j != i) all.emplace_back(spatial_dist2(pts[i], pts[j]), j);
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect;
        for (std::size_t t = 0; t < k; ++t) expect.push_back(all[t].second);
        CHECK(g.neighbors[i] == expect);
    }
}

TEST_CASE("knn tie-break is the lower pixel index") {
    // pixel 0 at origin; 1 and 2 equidistant
    std::vector<PixelPos> pts = {{1, 1}, {1, 2}, {1, 0}, {5, 5}};
    SpatialGraph g = knn_spatial(pts, 1, 1e3);
    CHECK(g.neighbors[0] == std::vector<std::size_t>{1});
}

TEST_CASE("knn output independent of pixel ordering up to the tie-break") {
    Rng rng(5, "perm");
    std::vector<PixelPos> pts;
    for (int i = 0; i < 12; ++i) pts.push_back({rng.index(40), rng.index(40)});
    SpatialGraph g = knn_spatial(pts, 3, 1e3);
    // reverse the ordering and map back
    std::vector<PixelPos> rev(pts.rbegin(), pts.rend());
    SpatialGraph gr = knn_spatial(rev, 3, 1e3);
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> mapped;
        for (std::size_t j : gr.neighbors[n - 1 - i]) mapped.push_back(n - 1 - j);
        std::sort(mapped.begin(), mapped.end());
        std::vector<std::size_t>
            orig = g.neighbors[i];
        std::sort(orig.begin(), orig.end());
        // distances here are unique with high probability; sets must agree
        bool distinct = true;
        std::vector<double> ds;
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) ds.push_back(spatial_dist2(pts[i], pts[j]));
        std::sort(ds.begin(), ds.end());
        for (std::size_t t = 3; t-- > 1;)
            if (ds[t] == ds[t - 1] || ds[3] == ds[2]) distinct = false;
        if (distinct) CHECK(mapped == orig);
    }
}

TEST_CASE("sparse_code_init behaviors") {
    Rng rng(7, "lasso");
    // beta -> infinity collapses Z to zero
    Matrix<double> feats(4, 5);
    for (auto& v : feats.values) v = rng.normal();
    auto res = sparse_code_init(feats, 1e9, 50);
    for (double v : res.Z.values) CHECK(v == 0.0);

    // two identical columns represent each other with positive weight
    Matrix<double> twin(3, 2);
    twin.at(0, 0) = 1;
    twin.at(1, 0) = 2;
    twin.at(2, 0) = 0.5;
    for (std::size_t r = 0; r < 3; ++r) twin.at(r, 1) = twin.at(r, 0);
    auto tw = sparse_code_init(twin, 0.05, 2000, 1e-13);
    CHECK(tw.Z.at(1, 0) > 0.5);
    CHECK(tw.Z.at(0, 1) > 0.5);
    CHECK(tw.Z.at(0, 0) == 0.0);
    CHECK(tw.Z.at(1, 1) == 0.0);

    // objective is monotonically non-increasing across iterations
    Matrix<double> A(6, 8);
    for (auto& v : A.values) v = rng.normal();
    Matrix<double> gram = matmul(A.transposed(), A);
    const double beta = 0.3;
    double prev = lasso_objective(gram, Matrix<double>(8, 8), beta);
    for (std::size_t iters = 1; iters <= 40; ++iters) {
        auto r = sparse_code_init(A, beta, iters, 0.0);
        const double obj = lasso_objective(gram, r.Z, beta);
        CHECK(obj <= prev + 1e-10);
        prev = obj;
    }
}

TEST_CASE("sparse_code_init agrees with a coordinate-descent oracle") {
    // 4-atom toy dictionary
    Rng rng(13, "cd");
    Matrix<double> D(5, 4);
    for (auto& v : D.values) v = rng.normal();
    const double beta = 0.25;
    auto res = sparse_code_init(D, beta, 20000, 1e-15);

    Matrix<double> oracle(4, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        std::vector<double> col(5);
        for (std::size_t i = 0; i < 5; ++i) col[i] = D.at(i, j);
        auto z = oracles::lasso_cd(D, col, beta, j, 4000);
        for (std::size_t i = 0; i < 4; ++i) oracle.at(i, j) = z[i];
    }
    Matrix<double> gram = matmul(D.transposed(), D);
    const double obj_ista = lasso_objective(gram, res.Z, beta);
    const double obj_cd = lasso_objective(gram, oracle, beta);
    CHECK(obj_ista == Catch::Approx(obj_cd).margin(1e-6));
}

TEST_CASE("relationship matrices: symmetry, ranges, hand values") {
    Rng rng(17, "rel");
    const std::size_t n = 6;
    std::vector<PixelPos> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back({i / 3, i % 3});
    SpatialGraph g = knn_spatial(pts, 2, 1e3);

    Matrix<double> Z(n, n);
    for (auto& v : Z.values) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) Z.at(i, i) = 0;

    auto rel = relationship_matrix(Z, g, pts, 0.7, 1e3);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            CHECK(rel.S1.at(i, j) == rel.S1.at(j, i));
            CHECK(rel.S2.at(i, j) == rel.S2.at(j, i));
            CHECK(rel.S.at(i, j) == rel.S.at(j, i));
            CHECK(rel.S1.at(i, j) >= 0.0);
            CHECK(rel.S2.at(i, j) >= 0.0);
            CHECK(rel.S2.at(i, j) <= 1.0);
        }

    // Z = 0, gamma = 0 -> S = 0
    auto zero = relationship_matrix(Matrix<double>(n, n), g, pts, 0.0, 1e3);
    for (double v : zero.S.values) CHECK(v == 0.0);

    // antisymmetric Z cancels in S1
    Matrix<double> anti(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = rng.normal();
            anti.at(i, j) = v;
            anti.at(j, i) = -v;
        }
    auto cancel = relationship_matrix(anti, g, pts, 0.0, 1e3);
    for (double v : cancel.S1.values) CHECK(v == 0.0);

    // adjacent pixels at unit distance with omega 1e3
    bool adjacent_checked = false;
    for (std::size_t i = 0; i < n && !adjacent_checked; ++i)
        for (std::size_t j : g.adj[i])
            if (spatial_dist2(pts[i], pts[j]) == 1.0) {
                CHECK(rel.S2.at(i, j) == Catch::Approx(std::exp(-0.001)).epsilon(1e-12));
                adjacent_checked = true;
                break;
            }
    CHECK(adjacent_checked);
}

TEST_CASE("working set selection caps and keeps all labeled pixels") {
    HsiScene scene = synthesize(3, 12, 12, 6, 0.05, 3);
    LabelSplit split = split_labels(scene, {0.1, 9, true});
    WorkingSet<double> ws = select_working_set<double>(scene, split, 40, 9);
    CHECK(ws.size() == 40);
    // every labeled pixel is present, flagged with its class
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < ws.size(); ++i)
        if (ws.label[i] >= 0) ++labeled;
    CHECK(labeled == split.labeled.size());
    // ids sorted and unique
    CHECK(std::is_sorted(ws.pixel_ids.begin(), ws.pixel_ids.end()));
    CHECK(std::adjacent_find(ws.pixel_ids.begin(), ws.pixel_ids.end()) == ws.pixel_ids.end());

    WorkingSet<double> all = select_working_set<double>(scene, split, 10000, 9);
    CHECK(all.size() == 144);
    CHECK_THROWS(select_working_set<double>(scene, split, 2, 9));
}

TEST_CASE("matrix debug dump layout") {
    Matrix<double> m(2, 3);
    for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = double(i) + 0.5;
    auto path = (std::filesystem::temp_directory_path() / "slcrf_dump.bin").string();
    dump_matrix_f32(m, path);
    auto bytes = detail::read_file(path);
    REQUIRE(bytes.size() == 8 + 6 * 4);
    std::uint32_t rows, cols;
    std::memcpy(&rows, bytes.data(), 4);
    std::memcpy(&cols, bytes.data() + 4, 4);
    CHECK(rows == 2);
    CHECK(cols == 3);
    float v0;
    std::memcpy(&v0, bytes.data() + 8, 4);
    CHECK(v0 == 0.5f);
    std::remove(path.c_str());
}
