#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "metaadd/metafeat.hpp"
#include "metaadd/protonet.hpp"
#include "metaadd/streamgen.hpp"

namespace fs = std::filesystem;
using namespace metaadd;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("metaadd_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(METAADD_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

/// Small trained detector shared by the detect tests: n = 25, L = 20.
fs::path trained_checkpoint() {
    static const fs::path path = [] {
        const auto dir = scratch("shared");
        const auto d = dir.string();
        REQUIRE(run("gen --kind meta-corpus --per-class 200 --l 20 --n 25 --seed 3 --out-dir " + d) == 0);
        REQUIRE(run("train --corpus " + d + "/corpus.csv --restarts 1 --seed 3 --out-dir " + d) == 0);
        return dir / "checkpoint.json";
    }();
    return path;
}

}  // namespace

TEST_CASE("gen meta-corpus writes per-class times four samples", "[cli]") {
    const auto dir = scratch("gen_corpus");
    REQUIRE(run("gen --kind meta-corpus --per-class 50 --l 100 --n 1 --out-dir " + dir.string()) == 0);
    const auto corpus = metafeat::read_corpus_file((dir / "corpus.csv").string());
    REQUIRE(corpus.size() == 200);
    CHECK(corpus.front().gaps.size() == 100);
    const auto manifest = json::parse(slurp(dir / "gen_manifest.json"));
    CHECK(manifest["command"] == "gen");
    CHECK(manifest["seed"] == 1);
    CHECK(manifest["config"]["per_class"] == 50);
    CHECK(manifest.contains("started_at"));
    CHECK(manifest.contains("version"));
}

TEST_CASE("usage errors exit with 2", "[cli]") {
    const auto d = scratch("usage").string();
    CHECK(run("gen --kind meta-corpus --per-class 50 --n 1 --out-dir " + d) == 2);
    CHECK(run("gen --kind meta-corpus --per-class 50 --l 100 --out-dir " + d) == 2);
    CHECK(run("gen --kind bogus --out-dir " + d) == 2);
    CHECK(run("") == 2);
    CHECK(run("bench exp9") == 2);
    CHECK(run("--help") == 0);
}

TEST_CASE("gen toy writes a stream with its drift schedule", "[cli]") {
    const auto dir = scratch("gen_toy");
    REQUIRE(run("gen --kind toy --generator sea --length 10000 --drifts 3 --out-dir " + dir.string()) == 0);
    const auto file = streamgen::read_stream_file((dir / "stream.csv").string());
    CHECK(file.samples.size() == 10000);
    CHECK(file.samples.front().features.size() == 3);
    const auto drifts = streamgen::drifts_from_json(file.meta.at("drifts"));
    REQUIRE(drifts.size() == 3);
    CHECK(drifts[0].kind == DriftKind::sudden);
    CHECK(drifts[1].kind == DriftKind::gradual);
    CHECK(drifts[2].kind == DriftKind::incremental);
}

TEST_CASE("train writes a checkpoint and a loss curve", "[cli]") {
    const auto dir = scratch("train");
    const auto d = dir.string();
    REQUIRE(run("gen --kind meta-corpus --per-class 30 --l 10 --n 5 --out-dir " + d) == 0);

    REQUIRE(run("train --arch fcn --ns 5 --nq 15 --episodes 20 --restarts 1 --corpus " + d +
                "/corpus.csv --out-dir " + d) == 0);
    const auto det = protonet::MetaDetector::load((dir / "checkpoint.json").string());
    for (auto c : det.prototypes.counts) CHECK(c > 0);
    CHECK(det.prototypes.centers.size() == 4);
    CHECK(det.spec.n == 5);
    CHECK(det.spec.L == 10);
    CHECK(line_count(dir / "checkpoint_loss.csv") == 21);

    REQUIRE(run("train --episodes 0 --output zero.json --corpus " + d + "/corpus.csv --out-dir " + d) == 0);
    CHECK(protonet::MetaDetector::load((dir / "zero.json").string()).metadata["episodes_run"] == 0);

    REQUIRE(run("train --arch rnn --episodes 5 --restarts 1 --output rnn.json --corpus " + d + "/corpus.csv --out-dir " +
                d) == 0);
    CHECK(protonet::MetaDetector::load((dir / "rnn.json").string()).net.arch() == protonet::Architecture::rnn);

    CHECK(run("train --ns 20 --nq 15 --output big.json --corpus " + d + "/corpus.csv --out-dir " + d) == 1);
    CHECK_FALSE(fs::exists(dir / "big.json"));
}

TEST_CASE("train is reproducible from the same seed", "[cli]") {
    const auto dir = scratch("repro");
    const auto d = dir.string();
    REQUIRE(run("gen --kind meta-corpus --per-class 30 --l 10 --n 5 --seed 4 --out-dir " + d) == 0);
    for (const char* out : {"a.json", "b.json"}) {
        REQUIRE(run(std::string("train --episodes 30 --restarts 2 --seed 4 --output ") + out + " --corpus " + d +
                    "/corpus.csv --out-dir " + d) == 0);
    }
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    CHECK(slurp(dir / "a_loss.csv") == slurp(dir / "b_loss.csv"));
}

TEST_CASE("detect without an oracle stays quiet on a stationary trace", "[cli]") {
    const auto ckpt = trained_checkpoint().string();
    const auto dir = scratch("detect_none");
    const auto d = dir.string();
    REQUIRE(run("gen --kind trace --trace-kind normal --length 10000 --base-error 0.2 --seed 8 --out-dir " + d) == 0);
    REQUIRE(run("detect --oracle none --checkpoint " + ckpt + " --input " + d + "/trace.txt --out-dir " + d) == 0);
    CHECK(slurp(dir / "alarms.csv") == "timestamp,type,entropy\n");
    CHECK(line_count(dir / "queries.jsonl") == 0);
}

TEST_CASE("detect with ground truth respects the budget", "[cli]") {
    const auto ckpt = trained_checkpoint().string();
    const auto dir = scratch("detect_truth");
    const auto d = dir.string();
    REQUIRE(run("gen --kind toy --generator sea --length 5000 --drifts 2 --out-dir " + d) == 0);
    REQUIRE(run("detect --oracle ground-truth --budget 10 --checkpoint " + ckpt + " --input " + d +
                "/stream.csv --out-dir " + d) == 0);
    const auto queries = line_count(dir / "queries.jsonl");
    CHECK(queries <= 10);
    CHECK(queries > 0);
    const auto manifest = json::parse(slurp(dir / "detect_manifest.json"));
    CHECK(manifest["summary"]["queries"] == queries);
    CHECK(manifest["summary"]["labels_applied"] == queries);
    CHECK(manifest["config"]["input_kind"] == "stream");

    REQUIRE(run("gen --kind trace --trace-kind sudden --length 4000 --output sudden.txt --out-dir " + d) == 0);
    CHECK(run("detect --oracle ground-truth --budget 3 --checkpoint " + ckpt + " --input " + d +
              "/sudden.txt --out-dir " + d) == 0);
    CHECK(line_count(dir / "queries.jsonl") <= 3);
}

TEST_CASE("detect with the label service does not wait for answers", "[cli]") {
    const auto ckpt = trained_checkpoint().string();
    const auto dir = scratch("detect_service");
    const auto d = dir.string();
    REQUIRE(run("gen --kind trace --trace-kind gradual --length 6000 --out-dir " + d) == 0);
    REQUIRE(run("detect --oracle service --port 0 --budget 4 --checkpoint " + ckpt + " --input " + d +
                "/trace.txt --out-dir " + d) == 0);
    std::ifstream in(dir / "queries.jsonl");
    std::size_t n = 0;
    for (std::string line; std::getline(in, line); ++n) CHECK(json::parse(line)["status"] != "answered");
    CHECK(n == 4);
}

TEST_CASE("detect failures exit with 1", "[cli]") {
    const auto dir = scratch("detect_fail");
    const auto d = dir.string();
    REQUIRE(run("gen --kind trace --trace-kind normal --length 1000 --out-dir " + d) == 0);
    CHECK(run("detect --checkpoint " + d + "/missing.json --input " + d + "/trace.txt --out-dir " + d) == 1);
    std::ofstream(dir / "plain.txt") << "0\n1\n0\n";
    CHECK(run("detect --oracle ground-truth --checkpoint " + trained_checkpoint().string() + " --input " + d +
              "/plain.txt --out-dir " + d) == 1);
}

TEST_CASE("config file values apply and flags override them", "[cli]") {
    const auto dir = scratch("config");
    const auto d = dir.string();
    std::ofstream(dir / "run.toml") << "seed=9\n[gen]\nkind=\"toy\"\ngenerator=\"hyp\"\nlength=500\ndrifts=1\n";
    REQUIRE(run("--config " + d + "/run.toml gen --output from_file.csv --out-dir " + d) == 0);
    REQUIRE(run("gen --kind toy --generator hyp --length 500 --drifts 1 --seed 9 --output from_flags.csv --out-dir " +
                d) == 0);
    CHECK(slurp(dir / "from_file.csv") == slurp(dir / "from_flags.csv"));
    REQUIRE(run("--config " + d + "/run.toml gen --length 300 --output override.csv --out-dir " + d) == 0);
    CHECK(streamgen::read_stream_file((dir / "override.csv").string()).samples.size() == 300);
}

TEST_CASE("bench exp3 restricted to two generators", "[cli][slow]") {
    const auto ckpt = trained_checkpoint().string();
    const auto dir = scratch("bench");
    const auto d = dir.string();
    REQUIRE(run("bench exp3 --generators sea,hyp --seeds 1 --length 3000 --checkpoint " + ckpt + " --out-dir " + d) ==
            0);
    const auto report = json::parse(slurp(dir / "exp3_report.json"));
    CHECK(report["config"]["generators"] == json::array({"sea", "hyp"}));
    CHECK(report["results"]["cells"].size() == 2);
    const auto table = slurp(dir / "exp3_table.txt");
    CHECK(table.find("sea Acc") != std::string::npos);
    CHECK(table.find("agr") == std::string::npos);
    CHECK(fs::exists(dir / "exp3_signals" / "sea_seed1.csv"));
    CHECK(fs::exists(dir / "bench_manifest.json"));
}
