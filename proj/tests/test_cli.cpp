#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "mitunet/image.hpp"
#include "mitunet/synthgen.hpp"

using namespace mitunet;
namespace fs = std::filesystem;

namespace {

#ifndef MITUNET_CLI_PATH
#define MITUNET_CLI_PATH "./mitunet"
#endif

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    fs::path log = fs::temp_directory_path() / "mitunet_cli_test.log";
    std::string cmd = std::string(MITUNET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    int rc = std::system(cmd.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream is(log);
    r.output.assign(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
    return r;
}

fs::path fresh_dir(const std::string& leaf) {
    fs::path p = fs::temp_directory_path() / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("").exit_code == 1);
    CHECK(run_cli("train --bogus-flag").exit_code == 1);
    CHECK(run_cli("nonsense-subcommand").exit_code == 1);
}

TEST_CASE("synth writes image/mask pairs plus a manifest and is seed-reproducible") {
    fs::path dir = fresh_dir("mitunet_cli_synth");
    CmdResult r = run_cli("synth --out " + (dir / "a").string() + " --n 6 --seed 11");
    CHECK(r.exit_code == 0);
    for (int i = 0; i < 6; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "plan_%04d", i);
        CHECK(fs::exists(dir / "a" / (std::string(name) + ".png")));
        CHECK(fs::exists(dir / "a" / (std::string(name) + "_mask.png")));
    }
    CHECK(fs::exists(dir / "a" / "manifest.txt"));

    CHECK(run_cli("synth --out " + (dir / "b").string() + " --n 6 --seed 11").exit_code == 0);
    Image a = read_image((dir / "a" / "plan_0003.png").string());
    Image b = read_image((dir / "b" / "plan_0003.png").string());
    CHECK(a == b);
    fs::remove_all(dir);
}

TEST_CASE("prep produces refined masks for every sample") {
    fs::path dir = fresh_dir("mitunet_cli_prep");
    REQUIRE(run_cli("synth --out " + (dir / "ds").string() + " --n 4 --seed 3").exit_code == 0);
    CmdResult r = run_cli("prep --data " + (dir / "ds").string() + " --out " +
                          (dir / "out").string());
    CHECK(r.exit_code == 0);
    for (int i = 0; i < 4; ++i) {
        char name[48];
        std::snprintf(name, sizeof name, "plan_%04d_refined.png", i);
        CHECK(fs::exists(dir / "out" / name));
        Mask m = read_mask((dir / "out" / name).string());
        CHECK_NOTHROW(m.validate());
    }
    fs::remove_all(dir);
}

TEST_CASE("strict config rejects unknown keys with exit code 2") {
    fs::path dir = fresh_dir("mitunet_cli_cfg");
    REQUIRE(run_cli("synth --out " + (dir / "ds").string() + " --n 4 --seed 3").exit_code == 0);
    std::ofstream((dir / "bad.ini").string()) << "[train]\nepochz = 3\n";
    CmdResult r = run_cli("train --data " + (dir / "ds").string() + " --config " +
                          (dir / "bad.ini").string() + " --epochs 1 --repeats 1");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("epochz") != std::string::npos);
    std::ofstream((dir / "badval.ini").string()) << "[train]\nepochs = soon\n";
    CHECK(run_cli("train --data " + (dir / "ds").string() + " --config " +
                  (dir / "badval.ini").string() + " --repeats 1")
              .exit_code == 2);
    fs::remove_all(dir);
}

TEST_CASE("train, eval, and infer round trip through a checkpoint") {
    fs::path dir = fresh_dir("mitunet_cli_train");
    REQUIRE(run_cli("synth --out " + (dir / "ds").string() + " --n 8 --seed 4").exit_code == 0);
    CmdResult tr = run_cli("train --data " + (dir / "ds").string() + " --out " +
                           (dir / "run").string() + " --epochs 1 --repeats 1");
    CHECK(tr.exit_code == 0);
    CHECK(fs::exists(dir / "run" / "best.ckpt"));
    CHECK(fs::exists(dir / "run" / "history.txt"));
    CHECK(tr.output.find("mIoU") != std::string::npos);

    CmdResult ev = run_cli("eval --data " + (dir / "ds").string() + " --checkpoint " +
                           (dir / "run" / "best.ckpt").string());
    CHECK(ev.exit_code == 0);
    CHECK(ev.output.find("mIoU") != std::string::npos);

    CmdResult inf = run_cli("infer --image " + (dir / "ds" / "plan_0000.png").string() +
                            " --checkpoint " + (dir / "run" / "best.ckpt").string() + " --out " +
                            (dir / "seg").string());
    CHECK(inf.exit_code == 0);
    Mask m = read_mask((dir / "seg" / "mask.png").string());
    CHECK_NOTHROW(m.validate());
    CHECK(fs::exists(dir / "seg" / "overlay.png"));

    // resuming a nano checkpoint under a different preset is a data error
    CmdResult bad = run_cli("finetune --data " + (dir / "ds").string() + " --base " +
                            (dir / "run" / "best.ckpt").string() +
                            " --preset b0 --epochs 1 --repeats 1");
    CHECK(bad.exit_code == 2);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck prints a per-op table and exits 0") {
    CmdResult r = run_cli("gradcheck --bits 64 --tol 1e-5");
    CHECK(r.exit_code == 0);
    for (const char* op : {"matmul", "softmax", "conv2d", "layer_norm", "gelu"})
        CHECK(r.output.find(op) != std::string::npos);
    CHECK(r.output.find("pass") != std::string::npos);
    // an absurd tolerance must fail with the numeric exit code
    CHECK(run_cli("gradcheck --bits 32 --tol 1e-12").exit_code == 3);
    // invalid precision is a data error
    CHECK(run_cli("gradcheck --bits 48").exit_code == 2);
}

TEST_CASE("missing dataset directory is a data error") {
    CHECK(run_cli("train --data /tmp/definitely_missing_mitunet_ds --epochs 1 --repeats 1")
              .exit_code == 2);
    CHECK(run_cli("eval --data /tmp/definitely_missing_mitunet_ds --checkpoint /tmp/nope.ckpt")
              .exit_code == 2);
}
