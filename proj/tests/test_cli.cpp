#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trusttune/checkpoint.hpp"
#include "trusttune/manifest.hpp"

namespace {

namespace fs = std::filesystem;

const std::string kCli = TRUSTTUNE_CLI_PATH;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("trusttune_cli_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& cmdline) {
    const int rc = std::system((cmdline + " > /dev/null 2>&1").c_str());
    return WEXITSTATUS(rc);
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << content;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> csv_lines(const std::string& path) {
    std::istringstream ss(slurp(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

// shared tiny configs
const char* kPretrainCfg = R"({"pretrain.steps": 80, "pretrain.corpus_size": 96})";

std::string finetune_cfg(const std::string& pre_dir, const std::string& method,
                         const std::string& extra = "") {
    return std::string(R"({"task.train_size": 128, "task.dev_size": 64, "task.name": "kw_src",)") +
           R"("method.name": ")" + method + R"(", "method.sigma": 0.1, "method.lambda": 1.0,)" +
           R"("optim.total_updates": 60, "optim.peak_lr": 3e-3, "optim.warmup_updates": 4,)" +
           R"("run.pretrained": ")" + pre_dir + R"(/encoder.ckpt")" + extra + "}";
}

}  // namespace

TEST_CASE("pretrain: determinism, created output dir, manifest validates") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    CHECK(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("a/b/pre1") +
              " --seeds 5") == 0);
    CHECK(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre2") +
              " --seeds 5") == 0);
    CHECK(trusttune::file_content_hash(tmp.file("a/b/pre1/encoder.ckpt")) ==
          trusttune::file_content_hash(tmp.file("pre2/encoder.ckpt")));

    trusttune::RunManifest m = trusttune::RunManifest::load(tmp.file("pre2/manifest.json"));
    CHECK_NOTHROW(m.validate(tmp.file("pre2")));
}

TEST_CASE("unknown config keys exit with code 2") {
    TempDir tmp;
    write_file(tmp.file("bad.json"), R"({"pretrain.stepz": 10})");
    CHECK(run(kCli + " pretrain --config " + tmp.file("bad.json") + " --out " + tmp.file("out")) == 2);
}

TEST_CASE("finetune: manifests per seed, pinned schema, xfp factors, byte-identical reruns") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);

    write_file(tmp.file("ft.json"), finetune_cfg(tmp.file("pre"), "r3f"));
    REQUIRE(run(kCli + " finetune --config " + tmp.file("ft.json") + " --out " + tmp.file("run1") +
                " --seeds 1,2,3") == 0);

    for (int seed : {1, 2, 3}) {
        const std::string mpath = tmp.file("run1/seed" + std::to_string(seed) + "/manifest.json");
        trusttune::RunManifest m = trusttune::RunManifest::load(mpath);
        CHECK(m.status == "ok");
        CHECK(m.fp_total == 120);  // R3F: 2 FP per step
        CHECK(m.bp_total == 60);
        CHECK(m.xfp_total == 240);
        CHECK_NOTHROW(m.validate(tmp.file("run1/seed" + std::to_string(seed))));
    }

    auto lines = csv_lines(tmp.file("run1/finetune.csv"));
    CHECK(lines[0] ==
          "config_hash,method,task,seed,epoch,dev_accuracy,best_dev_accuracy,fp_total,bp_total,"
          "xfp_total,wall_seconds");
    bool saw_max = false, saw_median = false;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto cells = split_csv(lines[i]);
        REQUIRE(cells.size() == 11);
        CHECK(cells[1] == "r3f");
        CHECK(cells[9] == "240");
        if (cells[3] == "max") saw_max = true;
        if (cells[3] == "median") saw_median = true;
    }
    CHECK(saw_max);
    CHECK(saw_median);

    // rerun sequentially and with concurrent seeds: byte-identical CSV
    REQUIRE(run(kCli + " finetune --config " + tmp.file("ft.json") + " --out " + tmp.file("run2") +
                " --seeds 1,2,3") == 0);
    CHECK(slurp(tmp.file("run1/finetune.csv")) == slurp(tmp.file("run2/finetune.csv")));
    REQUIRE(run(kCli + " finetune --config " + tmp.file("ft.json") + " --out " + tmp.file("run3") +
                " --seeds 1,2,3 --jobs 2") == 0);
    CHECK(slurp(tmp.file("run1/finetune.csv")) == slurp(tmp.file("run3/finetune.csv")));
    REQUIRE(run("TRUSTTUNE_DETERMINISTIC=1 " + kCli + " finetune --config " + tmp.file("ft.json") +
                " --out " + tmp.file("run4") + " --seeds 1,2,3 --jobs 8") == 0);
    CHECK(slurp(tmp.file("run1/finetune.csv")) == slurp(tmp.file("run4/finetune.csv")));
}

TEST_CASE("stability: order statistics, zero stdev for repeated seeds, svg legend") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);

    const std::string cfg =
        std::string(R"({"task.train_size": 128, "task.dev_size": 64, "task.name": "kw_src",)") +
        R"("method.names": "standard,r3f", "method.sigma": 0.1, "method.lambda": 1.0,)" +
        R"("optim.total_updates": 40, "optim.peak_lr": 3e-3, "optim.warmup_updates": 4,)" +
        R"("run.pretrained": ")" + tmp.file("pre") + R"(/encoder.ckpt"})";
    write_file(tmp.file("st.json"), cfg);
    REQUIRE(run(kCli + " stability --config " + tmp.file("st.json") + " --out " + tmp.file("st") +
                " --seeds 1,2,3") == 0);

    auto lines = csv_lines(tmp.file("st/stability.csv"));
    REQUIRE(lines.size() == 3);  // header + 2 methods
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto cells = split_csv(lines[i]);
        const double lo = std::stod(cells[4]), med = std::stod(cells[5]), hi = std::stod(cells[6]);
        CHECK(lo <= med);
        CHECK(med <= hi);
    }

    const std::string svg = slurp(tmp.file("st/stability_kw_src.svg"));
    CHECK(svg.find(">standard<") != std::string::npos);
    CHECK(svg.find(">r3f<") != std::string::npos);

    // an identical seed run twice has zero spread
    REQUIRE(run(kCli + " stability --config " + tmp.file("st.json") + " --out " + tmp.file("st2") +
                " --seeds 4,4") == 0);
    auto lines2 = csv_lines(tmp.file("st2/stability.csv"));
    for (std::size_t i = 1; i < lines2.size(); ++i) {
        auto cells = split_csv(lines2[i]);
        CHECK(cells[7] == "0.000000");
    }
    CHECK(run(kCli + " stability --config " + tmp.file("st.json") + " --out " + tmp.file("st3") +
              " --seeds 1") == 2);  // needs >= 2 seeds
}

TEST_CASE("chain and cycle emit the pinned schema with per-stage rows") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);

    const std::string base =
        std::string(R"("task.train_size": 128, "task.dev_size": 64, "method.sigma": 0.1,)") +
        R"("method.lambda": 1.0, "optim.total_updates": 40, "optim.peak_lr": 3e-3,)" +
        R"("optim.warmup_updates": 4, "probe.epochs": 5,)" + R"("run.pretrained": ")" + tmp.file("pre") +
        R"(/encoder.ckpt")";

    SUBCASE("chain") {
        write_file(tmp.file("chain.json"),
                   "{" + base + R"(, "chain.source": "kw_src", "chain.tasks": "maj2,order_a",)" +
                       R"("method.names": "standard,r3f"})");
        REQUIRE(run(kCli + " chain --config " + tmp.file("chain.json") + " --out " + tmp.file("chain") +
                    " --seeds 1,2") == 0);
        auto lines = csv_lines(tmp.file("chain/chain.csv"));
        CHECK(lines[0] == "config_hash,method,stage_index,stage_task,probe_task,cycle,seed,accuracy");
        // 2 methods x 2 seeds x (1 + 2 stages)
        CHECK(lines.size() == 1 + 2 * 2 * 3);
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto cells = split_csv(lines[i]);
            CHECK(cells[4] == "kw_src");  // always probes the source
        }
    }
    SUBCASE("cycle") {
        write_file(tmp.file("cycle.json"),
                   "{" + base + R"(, "cycle.tasks": "kw_src,maj2", "cycle.cycles": 2,)" +
                       R"("method.names": "standard"})");
        REQUIRE(run(kCli + " cycle --config " + tmp.file("cycle.json") + " --out " + tmp.file("cycle") +
                    " --seeds 1") == 0);
        auto lines = csv_lines(tmp.file("cycle/cycle.csv"));
        CHECK(lines.size() == 1 + 2 * 2);  // 2 tasks x 2 cycles
        std::size_t cycle1 = 0, cycle2 = 0;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            auto cells = split_csv(lines[i]);
            if (cells[5] == "1") ++cycle1;
            if (cells[5] == "2") ++cycle2;
        }
        CHECK(cycle1 == 2);
        CHECK(cycle2 == 2);
    }
}

TEST_CASE("probe-matrix covers every method, seed, and probe task plus baseline") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);
    write_file(tmp.file("pm.json"),
               std::string(R"({"task.train_size": 128, "task.dev_size": 64, "method.sigma": 0.1,)") +
                   R"("method.lambda": 1.0, "optim.total_updates": 40, "optim.peak_lr": 3e-3,)" +
                   R"("optim.warmup_updates": 4, "probe.epochs": 5, "matrix.source": "kw_src",)" +
                   R"("method.names": "standard", "run.pretrained": ")" + tmp.file("pre") +
                   R"(/encoder.ckpt"})");
    REQUIRE(run(kCli + " probe-matrix --config " + tmp.file("pm.json") + " --out " + tmp.file("pm") +
                " --seeds 1,2 --jobs 2") == 0);
    auto lines = csv_lines(tmp.file("pm/probe_matrix.csv"));
    // (1 method + baseline) x 6 probe tasks x 2 seeds
    CHECK(lines.size() == 1 + 2 * 6 * 2);
    std::size_t baseline = 0;
    for (std::size_t i = 1; i < lines.size(); ++i)
        if (split_csv(lines[i])[1] == "none") ++baseline;
    CHECK(baseline == 12);
}

TEST_CASE("lambda grid enumeration: one run directory per grid point") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);
    write_file(tmp.file("grid.json"),
               finetune_cfg(tmp.file("pre"), "r3f", R"(, "method.lambda_grid": "0.1,1.0")"));
    REQUIRE(run(kCli + " finetune --config " + tmp.file("grid.json") + " --out " + tmp.file("grid") +
                " --seeds 1") == 0);
    CHECK(fs::exists(tmp.file("grid/lambda_0.1/finetune.csv")));
    CHECK(fs::exists(tmp.file("grid/lambda_1.0/finetune.csv")));
    // grid points hash as distinct configs
    auto h1 = split_csv(csv_lines(tmp.file("grid/lambda_0.1/finetune.csv"))[1])[0];
    auto h2 = split_csv(csv_lines(tmp.file("grid/lambda_1.0/finetune.csv"))[1])[0];
    CHECK(h1 != h2);
}

TEST_CASE("theory: exit codes and one row per trial") {
    TempDir tmp;
    CHECK(run(kCli + " theory --out " + tmp.file("th")) == 0);
    auto lines = csv_lines(tmp.file("th/theory.csv"));
    CHECK(lines.size() == 1 + 2 * 200);  // 200 invertible + 200 rank-reducing

    write_file(tmp.file("bad.json"), R"({"theory.trials": 0})");
    CHECK(run(kCli + " theory --config " + tmp.file("bad.json") + " --out " + tmp.file("th2")) == 2);
}

TEST_CASE("report joins runs by config hash, permutation-invariant") {
    TempDir tmp;
    write_file(tmp.file("pre.json"), kPretrainCfg);
    REQUIRE(run(kCli + " pretrain --config " + tmp.file("pre.json") + " --out " + tmp.file("pre") +
                " --seeds 5") == 0);
    write_file(tmp.file("ft_std.json"), finetune_cfg(tmp.file("pre"), "standard"));
    write_file(tmp.file("ft_r3f.json"), finetune_cfg(tmp.file("pre"), "r3f"));
    REQUIRE(run(kCli + " finetune --config " + tmp.file("ft_std.json") + " --out " + tmp.file("rs") +
                " --seeds 1,2") == 0);
    REQUIRE(run(kCli + " finetune --config " + tmp.file("ft_r3f.json") + " --out " + tmp.file("rr") +
                " --seeds 1,2") == 0);

    REQUIRE(run(kCli + " report --out " + tmp.file("rep1") + " " + tmp.file("rs") + " " + tmp.file("rr")) ==
            0);
    REQUIRE(run(kCli + " report --out " + tmp.file("rep2") + " " + tmp.file("rr") + " " + tmp.file("rs")) ==
            0);
    CHECK(slurp(tmp.file("rep1/report.csv")) == slurp(tmp.file("rep2/report.csv")));

    auto lines = csv_lines(tmp.file("rep1/report.csv"));
    REQUIRE(lines.size() == 3);  // header + standard + r3f rows for kw_src
    for (std::size_t i = 1; i < lines.size(); ++i) {
        auto cells = split_csv(lines[i]);
        CHECK(std::stod(cells[2]) >= std::stod(cells[3]));  // max >= median
    }

    // one run dir gives a one-cell table
    REQUIRE(run(kCli + " report --out " + tmp.file("rep3") + " " + tmp.file("rs")) == 0);
    CHECK(csv_lines(tmp.file("rep3/report.csv")).size() == 2);
}
