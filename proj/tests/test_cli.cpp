// Subprocess coverage of the command-line surface: exit codes, file
// contracts, error messages.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef POLLEN_CLI_PATH
#define POLLEN_CLI_PATH "pollen"
#endif

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(POLLEN_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult r;
    char buf[4096];
    size_t n;
    while ((n = fread(buf, 1, sizeof(buf), pipe)) > 0) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

struct Workspace {
    fs::path dir;
    explicit Workspace(const std::string& name) : dir(fs::temp_directory_path() / name) {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string p(const std::string& rel) const { return (dir / rel).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 1, runtime errors exit 2") {
    CHECK(run("--definitely-not-a-flag").exit_code == 1);
    CHECK(run("").exit_code == 1);
    const auto r = run("detect --weights /nonexistent.plnw --images /tmp --out /tmp/x.txt");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("nonexistent") != std::string::npos);
}

TEST_CASE("gen-data reports unusable output paths with the path in the message") {
    Workspace ws("pollen_cli_badout");
    std::ofstream(ws.p("blocker")) << "a file, not a directory";
    const auto r = run("gen-data --out " + ws.p("blocker/ds") + " --n 1 --extent 256");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("blocker") != std::string::npos);
}

TEST_CASE("full pipeline: gen, train, detect, evaluate, auth") {
    Workspace ws("pollen_cli_pipeline");

    auto r = run("gen-data --out " + ws.p("ds") + " --n 4 --extent 416 --seed 9 --threads 1");
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(ws.p("ds/manifest.json")));
    CHECK(fs::exists(ws.p("ds/annotations.jsonl")));
    CHECK(fs::exists(ws.p("ds/images/slide_00000.png")));

    r = run("train-detector --data " + ws.p("ds") + " --out " + ws.p("w.plnw") +
            " --epochs 3 --batch 2 --extent 96 --width-mult 0.05 --anchors 4 --seed 9 "
            "--threads 1 --log " + ws.p("train.csv"));
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(ws.p("w.plnw")));
    CHECK(fs::exists(ws.p("w.plnw.best")));
    {
        std::ifstream log(ws.p("train.csv"));
        std::string header;
        std::getline(log, header);
        CHECK(header == "epoch,total,coord,obj,noobj,class,seconds");
        int lines = 0;
        std::string line;
        while (std::getline(log, line)) ++lines;
        CHECK(lines == 3);
    }

    r = run("detect --weights " + ws.p("w.plnw") + " --images " + ws.p("ds") + " --out " +
            ws.p("dets.txt") + " --conf 0.3 --threads 1");
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(ws.p("dets.txt")));

    // the record file round-trips through the evaluate loader
    r = run("evaluate --detections " + ws.p("dets.txt") + " --annotations " +
            ws.p("ds/annotations.jsonl") + " --data " + ws.p("ds") + " --out " +
            ws.p("report.json"));
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("precision") != std::string::npos);
    CHECK(fs::exists(ws.p("report.json")));

    // blank image -> empty record (trained objectness stays suppressed)
    r = run("gen-data --out " + ws.p("blank") + " --n 1 --extent 416 --seed 5 --threads 1");
    {
        // regenerate with zero counts via config file
        std::ofstream cfg(ws.p("blank.conf"));
        cfg << "[synth]\ncount_min = 0\ncount_max = 0\nbubble_min = 0\nbubble_max = 0\n";
    }
    r = run("gen-data --config " + ws.p("blank.conf") + " --out " + ws.p("blank2") +
            " --n 1 --extent 416 --seed 5 --threads 1");
    REQUIRE(r.exit_code == 0);
    r = run("detect --weights " + ws.p("w.plnw") + " --images " + ws.p("blank2") + " --out " +
            ws.p("blank_dets.txt") + " --conf 0.5 --threads 1");
    REQUIRE(r.exit_code == 0);
    {
        std::ifstream dets(ws.p("blank_dets.txt"));
        std::string contents((std::istreambuf_iterator<char>(dets)),
                             std::istreambuf_iterator<char>());
        CHECK(contents.empty());
    }

    // auth path: profile samples -> train-auth -> authenticate verdict JSON
    r = run("gen-data --out " + ws.p("auth") +
            " --profile eucalyptus --samples 2 --frames 3 --extent 256 --seed 3 --threads 1");
    REQUIRE(r.exit_code == 0);
    r = run("gen-data --out " + ws.p("auth") +
            " --profile manuka --samples 2 --frames 3 --extent 256 --seed 4 --threads 1");
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(ws.p("auth/features.json")));

    r = run("train-auth --features " + ws.p("auth/features.json") + " --out " + ws.p("a.plna") +
            " --positive-label eucalyptus --seed 2");
    REQUIRE(r.exit_code == 0);

    {
        std::ofstream one(ws.p("one.json"));
        one << R"({"counts": [30, 6, 2], "frames": 3})";
    }
    r = run("authenticate --model " + ws.p("a.plna") + " --features " + ws.p("one.json") +
            " --reference-density 12 --tolerance 0.3 --out " + ws.p("verdict.json"));
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("\"decision\"") != std::string::npos);
    CHECK(r.output.find("\"score\"") != std::string::npos);
    CHECK(r.output.find("\"features\"") != std::string::npos);
    CHECK(r.output.find("\"dilution\"") != std::string::npos);
    CHECK(fs::exists(ws.p("verdict.json")));
}

TEST_CASE("authenticate without a trained model is an explicit error") {
    Workspace ws("pollen_cli_nomodel");
    std::ofstream(ws.p("one.json")) << R"({"counts": [3, 1, 1], "frames": 1})";
    const auto r = run("authenticate --model " + ws.p("missing.plna") + " --features " +
                       ws.p("one.json"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("missing.plna") != std::string::npos);
}

TEST_CASE("print-config emits the resolved settings") {
    Workspace ws("pollen_cli_printcfg");
    std::ofstream(ws.p("c.conf")) << "[run]\nseed = 123\n";
    const auto r = run("gen-data --config " + ws.p("c.conf") + " --out " + ws.p("ds") +
                       " --n 0 --extent 128 --print-config");
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("seed = 123") != std::string::npos);
    CHECK(r.output.find("extent = 128") != std::string::npos);
}

TEST_CASE("config file errors exit 1") {
    Workspace ws("pollen_cli_badcfg");
    std::ofstream(ws.p("bad.conf")) << "not a key value line\n";
    const auto r = run("gen-data --config " + ws.p("bad.conf") + " --out " + ws.p("ds") + " --n 0");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("key = value") != std::string::npos);
}

TEST_CASE("POLLEN_THREADS env mirrors --threads") {
    Workspace ws("pollen_cli_env");
    const std::string cmd = "POLLEN_THREADS=2 " + std::string(POLLEN_CLI_PATH) + " gen-data --out " +
                            ws.p("ds") + " --n 1 --extent 128 --seed 1 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) {
    }
    CHECK(WEXITSTATUS(pclose(pipe)) == 0);
    CHECK(fs::exists(ws.p("ds/manifest.json")));
}

TEST_CASE("grad-check subcommand passes and exits zero") {
    const auto r = run("grad-check --trials 2 --seed 5");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("max rel err") != std::string::npos);
    CHECK(r.output.find("all gradients verified") != std::string::npos);
}
