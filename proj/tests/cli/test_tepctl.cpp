#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tep/fusion.hpp"
#include "unit/test_util.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kConfig = TEPCTL_SMALL_CONFIG;

int run(const std::string& args) {
    const std::string cmd = std::string(TEPCTL_PATH) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string capture_stderr(const std::string& args) {
    const std::string cmd = std::string(TEPCTL_PATH) + " " + args + " 2>&1 >/dev/null";
    std::string out;
    if (FILE* p = popen(cmd.c_str(), "r")) {
        char buf[512];
        while (std::fgets(buf, sizeof buf, p)) out += buf;
        pclose(p);
    }
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

nlohmann::json snapshot_without_output(const fs::path& p) {
    auto j = nlohmann::json::parse(slurp(p));
    j.erase("output_dir");
    return j;
}

std::string cfg() { return "-c " + kConfig.string(); }

}  // namespace

TEST_CASE("gen is deterministic") {
    const auto dir = test_util::temp_dir("cli_gen");
    REQUIRE(run("gen " + cfg() + " --seed 7 -o " + (dir / "a").string()) == 0);
    REQUIRE(run("gen " + cfg() + " --seed 7 -o " + (dir / "b").string()) == 0);
    for (const char* f : {"fundamental.csv", "market.csv", "pricing.csv", "labels.csv"}) {
        const std::string a = slurp(dir / "a" / "data" / f);
        CHECK(!a.empty());
        CHECK(a == slurp(dir / "b" / "data" / f));
    }
    CHECK(snapshot_without_output(dir / "a" / "config.gen.json") ==
          snapshot_without_output(dir / "b" / "config.gen.json"));
}

TEST_CASE("train r3 writes a reproducible checkpoint with a stable freeze audit") {
    const auto dir = test_util::temp_dir("cli_train");
    REQUIRE(run("train " + cfg() + " --regime r3 -o " + (dir / "a").string()) == 0);
    REQUIRE(run("train " + cfg() + " --regime r3 -o " + (dir / "b").string()) == 0);
    for (const char* f : {"checkpoint.tepc", "training_log.json", "test_report.csv", "test_report.json"})
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    CHECK(snapshot_without_output(dir / "a" / "config.train.json") ==
          snapshot_without_output(dir / "b" / "config.train.json"));

    const auto cp = tep::load_checkpoint(dir / "a" / "checkpoint.tepc");
    REQUIRE(cp.log.stages.size() == 3);
    CHECK(cp.log.stages[0].name == "pricing-solo");
    for (const auto& s : cp.log.stages) CHECK(s.frozen_intact());
    // Earlier channels stay frozen once a later one joins.
    std::size_t pricing = 0;
    for (const auto& [name, hash] : cp.log.stages[2].frozen_before) {
        CHECK((name.rfind("pricing.", 0) == 0 || name.rfind("market.", 0) == 0));
        pricing += name.rfind("pricing.", 0) == 0;
    }
    CHECK(pricing > 0);

    // The snapshot alone reproduces the run.
    REQUIRE(run("train -c " + (dir / "a" / "config.train.json").string() + " -o " + (dir / "c").string()) == 0);
    CHECK(slurp(dir / "a" / "checkpoint.tepc") == slurp(dir / "c" / "checkpoint.tepc"));

    REQUIRE(run("eval " + cfg() + " -o " + (dir / "a").string()) == 0);
    CHECK(slurp(dir / "a" / "eval_report.csv").rfind("Average,d_3m", 0) == 0);
    REQUIRE(run("attention " + cfg() + " -o " + (dir / "a").string()) == 0);
    CHECK(fs::exists(dir / "a" / "attention" / "attention_non_defaulted_l2_h4.csv"));
}

TEST_CASE("cv reports mean (std) per horizon") {
    const auto dir = test_util::temp_dir("cli_cv");
    REQUIRE(run("cv " + cfg() + " --k 3 --max-epochs 1 -o " + dir.string()) == 0);
    const std::string csv = slurp(dir / "cv_report.csv");
    CHECK(csv.rfind("Statistic,Average,d_3m,d_6m,d_9m,d_1y,d_2y,d_3y\nmean (std),", 0) == 0);
    const auto j = nlohmann::json::parse(slurp(dir / "cv_report.json"));
    CHECK(j.contains("folds"));
}

TEST_CASE("config errors exit 2 with the key path") {
    const auto dir = test_util::temp_dir("cli_bad");
    {
        std::ofstream(dir / "bad.json") << R"({"data": {"generator": {"firmz": 3}}})";
    }
    const std::string args = "train -c " + (dir / "bad.json").string() + " -o " + (dir / "o").string();
    CHECK(run(args) == 2);
    CHECK(capture_stderr(args).find("data.generator.firmz") != std::string::npos);

    {
        std::ofstream(dir / "bad2.json") << R"({"fusion": {"representation_size": "wide"}})";
    }
    CHECK(capture_stderr("train -c " + (dir / "bad2.json").string() + " -o " + (dir / "o").string())
              .find("fusion.representation_size") != std::string::npos);
    CHECK(run("train --regime r9 -o " + (dir / "o").string()) == 2);
    CHECK(run("frobnicate") == 2);
}

TEST_CASE("runtime failures exit 1 with the stage") {
    const auto dir = test_util::temp_dir("cli_fail");
    const std::string args = "eval " + cfg() + " -o " + dir.string() + " --checkpoint " + (dir / "missing.tepc").string();
    CHECK(run(args) == 1);
    CHECK(capture_stderr(args).find("stage 'load-checkpoint'") != std::string::npos);
}

TEST_CASE("help lists every consumed config key") {
    const std::string cmd = std::string(TEPCTL_PATH) + " train --help";
    std::string out;
    if (FILE* p = popen(cmd.c_str(), "r")) {
        char buf[512];
        while (std::fgets(buf, sizeof buf, p)) out += buf;
        pclose(p);
    }
    for (const char* key : {"seed =", "data.generator.firms =", "data.panel.pricing_window =",
                            "channels.pricing.model.tep.heads =", "fusion.representation_size =", "regime =",
                            "schedule =", "max_epochs =", "train.batch_size ="})
        CHECK(out.find(key) != std::string::npos);
    CHECK(out.find("TEP_OUTPUT_ROOT") != std::string::npos);
}

TEST_CASE("output root override") {
    const auto dir = test_util::temp_dir("cli_root");
    const std::string cmd = "TEP_OUTPUT_ROOT=" + dir.string() + " " + TEPCTL_PATH + " gen " + cfg() + " -o rel 2>/dev/null";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(fs::exists(dir / "rel" / "data" / "labels.csv"));
    CHECK(fs::exists(dir / "rel" / "log.jsonl"));
}
