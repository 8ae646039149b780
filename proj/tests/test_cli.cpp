#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "slcrf/data.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("SLCRF_CLI_BIN");
    REQUIRE(p != nullptr);
    return p;
}

int run_cmd(const std::string& args) {
    const std::string full = cli() + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(full.c_str());
    return WEXITSTATUS(rc);
}

fs::path workdir() {
    auto p = fs::temp_directory_path() / "slcrf_cli_test";
    fs::create_directories(p);
    return p;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
    return slcrf::detail::read_file(a.string()) == slcrf::detail::read_file(b.string());
}

} // namespace

TEST_CASE("cli: synth -> train -> classify -> eval end to end") {
    auto dir = workdir();
    const std::string scene = (dir / "scene").string();
    REQUIRE(run_cmd("synth --classes 3 --size 16 --bands 8 --noise 0.05 --seed 5 --out " + scene) ==
            0);
    REQUIRE(fs::exists(scene + ".json"));
    REQUIRE(fs::exists(scene + ".raw"));
    REQUIRE(fs::exists(scene + ".labels"));

    const std::string base = "train --scene " + scene + ".json --labels " + scene +
                             ".labels --warmup 8 --iters 5 --h-steps 40 --sparse-iters 40 "
                             "--timing off --seed 5";
    const fs::path r1 = dir / "r1";
    REQUIRE(run_cmd(base + " --run-dir " + r1.string()) == 0);
    for (const char* f : {"model.slcrf", "trace.csv", "metrics.csv", "map.ppm", "palette.csv",
                          "pred.u16", "metadata.json"})
        CHECK(fs::exists(r1 / f));

    const fs::path cls = dir / "cls";
    REQUIRE(run_cmd("classify --scene " + scene + ".json --labels " + scene + ".labels --model " +
                    (r1 / "model.slcrf").string() + " --run-dir " + cls.string()) == 0);
    CHECK(same_bytes(r1 / "pred.u16", cls / "pred.u16"));

    const fs::path ev = dir / "ev";
    REQUIRE(run_cmd("eval --scene " + scene + ".json --labels " + scene + ".labels --pred " +
                    (cls / "pred.u16").string() + " --labeled-frac 0.05 --seed 5 --run-dir " +
                    ev.string()) == 0);
    CHECK(fs::exists(ev / "metrics.csv"));
}

TEST_CASE("cli: identical config and seed give bit-identical artifacts") {
    auto dir = workdir();
    const std::string scene = (dir / "scene_det").string();
    REQUIRE(run_cmd("synth --classes 3 --size 14 --bands 8 --noise 0.05 --seed 9 --out " + scene) ==
            0);
    const std::string base = "train --scene " + scene + ".json --labels " + scene +
                             ".labels --warmup 6 --iters 4 --h-steps 30 --sparse-iters 30 "
                             "--timing off --seed 9";
    const fs::path a = dir / "det_a", b = dir / "det_b";
    REQUIRE(run_cmd(base + " --run-dir " + a.string()) == 0);
    REQUIRE(run_cmd(base + " --run-dir " + b.string()) == 0);
    CHECK(same_bytes(a / "model.slcrf", b / "model.slcrf"));
    CHECK(same_bytes(a / "trace.csv", b / "trace.csv"));
    CHECK(same_bytes(a / "metrics.csv", b / "metrics.csv"));
    CHECK(same_bytes(a / "pred.u16", b / "pred.u16"));
    CHECK(same_bytes(a / "map.ppm", b / "map.ppm"));
}

TEST_CASE("cli: gradcheck exit code reflects the verdict") {
    CHECK(run_cmd("gradcheck --seeds 2") == 0);
}

TEST_CASE("cli: usage and missing-file errors are distinct nonzero exits") {
    CHECK(run_cmd("no-such-command") != 0);
    CHECK(run_cmd("train --scene does_not_exist.json --labels nope.labels --iters 1") == 2);
    CHECK(run_cmd("train") != 0); // missing required flags
    auto dir = workdir();
    CHECK(run_cmd("eval --scene nope.json --labels nope.labels --pred nope.u16") == 2);
}

TEST_CASE("cli: inputs are never mutated by commands") {
    auto dir = workdir();
    const std::string scene = (dir / "scene_ro").string();
    REQUIRE(run_cmd("synth --classes 2 --size 10 --bands 6 --noise 0.1 --seed 2 --out " + scene) ==
            0);
    auto before_raw = slcrf::detail::read_file(scene + ".raw");
    auto before_lab = slcrf::detail::read_file(scene + ".labels");
    REQUIRE(run_cmd("train --scene " + scene + ".json --labels " + scene +
                    ".labels --warmup 2 --iters 2 --h-steps 5 --sparse-iters 10 --timing off "
                    "--run-dir " +
                    (dir / "ro_run").string()) == 0);
    CHECK(slcrf::detail::read_file(scene + ".raw") == before_raw);
    CHECK(slcrf::detail::read_file(scene + ".labels") == before_lab);
}
