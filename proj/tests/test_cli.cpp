/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * This file is part of convleak.
 */

#include <gtest/gtest.h>

#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path data_dir = CONVLEAK_DATA_DIR;

fs::path scratch() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / ("convleak_cli_" + std::to_string(::getpid()));
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

struct Result {
    int code;
    std::string output;
};

Result run(const std::string &args) {
    const fs::path log = scratch() / "last.log";
    const std::string cmd = std::string("\"") + CONVLEAK_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string data_args(std::size_t count, std::size_t kernels) {
    return "--set data.images=" + (data_dir / "mnist-eval-images-idx3-ubyte").string() +
           " data.labels=" + (data_dir / "mnist-eval-labels-idx1-ubyte").string() +
           " data.ref_images=" + (data_dir / "mnist-ref-images-idx3-ubyte").string() +
           " data.ref_labels=" + (data_dir / "mnist-ref-labels-idx1-ubyte").string() +
           " data.count=" + std::to_string(count) + " kernels.count=" + std::to_string(kernels);
}

std::string read(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_files(const fs::path &dir, const std::string &ext) {
    std::size_t n = 0;
    for (const auto &e : fs::directory_iterator(dir))
        n += e.path().extension() == ext;
    return n;
}

// Full pipeline on two images with three kernels, shared by several tests.
const fs::path &workspace() {
    static const fs::path ws = [] {
        const fs::path p = scratch() / "main";
        const std::string common = data_args(2, 3) + " out=" + p.string();
        for (const std::string sub : {"simulate", "extract", "attack-bg"})
            EXPECT_EQ(run(sub + " " + common).code, 0) << sub;
        const std::string tmpl = common + " template.profile_first=0 template.profile_count=2"
                                          " template.attack_first=0 template.attack_count=2"
                                          " template.delta=0.0001";
        EXPECT_EQ(run("build-template " + tmpl).code, 0);
        EXPECT_EQ(run("attack-template " + tmpl).code, 0);
        EXPECT_EQ(run("eval " + common).code, 0);
        return p;
    }();
    return ws;
}

} // namespace

TEST(Cli, SimulateWritesOneFilePerTraceAndAShareSchedule) {
    const fs::path &ws = workspace();
    EXPECT_EQ(count_files(ws / "traces", ".ptrc"), 6u);
    EXPECT_EQ(count_files(ws / "truth", ".pcyc"), 6u);
    EXPECT_EQ(count_files(ws / "schedules", ".jsonl"), 2u);
    const auto manifest = nlohmann::json::parse(read(ws / "manifest.json"));
    EXPECT_EQ(manifest["total_valid_cycles"].get<std::size_t>(), 2u * 676u);
    EXPECT_EQ(manifest["images"].size(), 2u);
    EXPECT_EQ(manifest["images"][0]["traces"].size(), 3u);
}

TEST(Cli, OneImageNineKernels) {
    const fs::path ws = scratch() / "nine";
    ASSERT_EQ(run("simulate " + data_args(1, 9) + " out=" + ws.string()).code, 0);
    EXPECT_EQ(count_files(ws / "traces", ".ptrc"), 9u);
    EXPECT_EQ(count_files(ws / "truth", ".pcyc"), 9u);
    EXPECT_EQ(count_files(ws / "schedules", ".jsonl"), 1u);
}

TEST(Cli, ManifestCountsValidCyclesForManyImages) {
    const fs::path ws = scratch() / "many";
    ASSERT_EQ(run("simulate " + data_args(500, 1) + " out=" + ws.string()).code, 0);
    const auto manifest = nlohmann::json::parse(read(ws / "manifest.json"));
    EXPECT_EQ(manifest["total_valid_cycles"].get<std::size_t>(), 500u * 676u);
    fs::remove_all(ws);
}

TEST(Cli, SimulationIsByteIdentical) {
    const fs::path a = scratch() / "det_a", b = scratch() / "det_b";
    const std::string extra = " chain.snr_db=25 accel.masking=on";
    ASSERT_EQ(run("simulate " + data_args(2, 2) + extra + " out=" + a.string()).code, 0);
    ASSERT_EQ(run("simulate " + data_args(2, 2) + extra + " out=" + b.string()).code, 0);
    std::size_t compared = 0;
    for (const auto &e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file())
            continue;
        const fs::path rel = fs::relative(e.path(), a);
        EXPECT_EQ(read(e.path()), read(b / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 8u);

    const fs::path c = scratch() / "det_c";
    ::setenv("CONVLEAK_SEED", "12345", 1);
    ASSERT_EQ(run("simulate " + data_args(2, 2) + extra + " out=" + c.string()).code, 0);
    ::unsetenv("CONVLEAK_SEED");
    EXPECT_NE(read(a / "traces" / "i0_k0.ptrc"), read(c / "traces" / "i0_k0.ptrc"));
}

TEST(Cli, ExtractionTracksGroundTruth) {
    std::ifstream stats(workspace() / "extracted" / "fit_stats.csv");
    std::string line;
    std::getline(stats, line);
    EXPECT_EQ(line, "trace,cycles,low_confidence,fit_error,truth_correlation");
    std::size_t rows = 0;
    while (std::getline(stats, line)) {
        const double corr = std::stod(line.substr(line.rfind(',') + 1));
        EXPECT_GT(corr, 0.999) << line;
        ++rows;
    }
    EXPECT_EQ(rows, 6u);
}

TEST(Cli, ExtractionIsOrderIndependent) {
    const fs::path &ws = workspace();
    const fs::path other = scratch() / "reverse";
    const std::string traces = (ws / "traces" / "i1_k2.ptrc").string() + " " +
                               (ws / "traces" / "i0_k1.ptrc").string();
    ASSERT_EQ(run("extract " + traces + " --set out=" + other.string()).code, 0);
    EXPECT_EQ(read(other / "extracted" / "i1_k2.pcyc"), read(ws / "extracted" / "i1_k2.pcyc"));
    EXPECT_EQ(read(other / "extracted" / "i0_k1.pcyc"), read(ws / "extracted" / "i0_k1.pcyc"));
}

TEST(Cli, CorruptTraceIsADataError) {
    const fs::path bad = scratch() / "corrupt.ptrc";
    std::string bytes = read(workspace() / "traces" / "i0_k0.ptrc");
    bytes[0] = 'X';
    std::ofstream(bad, std::ios::binary) << bytes;
    const Result r = run("extract " + bad.string() + " --set out=" + (scratch() / "corrupt").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("corrupt.ptrc"), std::string::npos) << r.output;
}

TEST(Cli, AttackOutputsAndPanel) {
    const fs::path &ws = workspace();
    EXPECT_TRUE(fs::exists(ws / "bg" / "i0.pgm"));
    EXPECT_TRUE(fs::exists(ws / "bg" / "sweep.csv"));
    EXPECT_TRUE(fs::exists(ws / "template.ptpl"));
    EXPECT_TRUE(fs::exists(ws / "template" / "i1_alg2.pgm"));
    EXPECT_TRUE(fs::exists(ws / "template" / "i1_avg.pgm"));
    EXPECT_TRUE(fs::exists(ws / "template" / "candidates_i0.csv"));
    EXPECT_TRUE(fs::exists(ws / "eval" / "summary.csv"));
    EXPECT_TRUE(fs::exists(ws / "eval" / "alg2_map.csv"));
    // Profiled images reconstruct exactly at a tiny delta.
    EXPECT_EQ(read(ws / "template" / "i0_alg2.pgm"), read(ws / "golden" / "i0.pgm"));
    const std::string panel = read(ws / "eval" / "panel.pgm");
    EXPECT_EQ(panel.rfind("P5\n57 86\n255\n", 0), 0u) << panel.substr(0, 16);
}

TEST(Cli, RandomSchedulingStopsTheTemplateAttack) {
    const fs::path ws = scratch() / "random";
    const std::string common = data_args(1, 2) + " accel.scheduling=random out=" + ws.string();
    ASSERT_EQ(run("simulate " + common).code, 0);
    EXPECT_EQ(count_files(ws / "schedules", ".jsonl"), 2u);
    ASSERT_EQ(run("extract " + common).code, 0);
    const Result r = run("build-template " + common + " template.profile_count=1");
    EXPECT_EQ(r.code, 4) << r.output;
    EXPECT_NE(r.output.find("random scheduling"), std::string::npos);
}

TEST(Cli, UnknownKeyIsAConfigError) {
    EXPECT_EQ(run("simulate --set chain.sigma=2").code, 2);
    const fs::path cfg = scratch() / "bad.cfg";
    std::ofstream(cfg) << "seed = 1\nnot.a.key = 3\n";
    const Result r = run("simulate -c " + cfg.string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("bad.cfg:2"), std::string::npos) << r.output;
    EXPECT_EQ(run("no-such-command").code, 2);
}

TEST(Cli, MissingLabelsDegradeGracefully) {
    const fs::path ws = scratch() / "nolabels";
    const std::string common = data_args(2, 1) + " data.labels=" + (scratch() / "absent").string() +
                               " out=" + ws.string();
    ASSERT_EQ(run("simulate " + common).code, 0);
    ASSERT_EQ(run("extract " + common).code, 0);
    ASSERT_EQ(run("attack-bg " + common).code, 0);
    const Result r = run("eval " + common);
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.output.find("warning"), std::string::npos);
    EXPECT_TRUE(fs::exists(ws / "eval" / "bg_report.csv"));
    EXPECT_FALSE(fs::exists(ws / "eval" / "bg_map.csv"));
}

TEST(Cli, MissingWorkspaceIsADataError) {
    EXPECT_EQ(run("attack-bg --set out=" + (scratch() / "nothing").string()).code, 3);
}
