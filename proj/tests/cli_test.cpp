#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cadapt/cli.hpp"
#include "cadapt/config.hpp"

using namespace cadapt;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / "cadapt_cli_test" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path p = dir / "run.cfg";
    std::ofstream(p) << text;
    return p;
}

const char* kSmallWorld =
    "source_cameras = 2\ntarget_cameras = 2\nidentities = 8\ntest_identities = 6\nfeature_dim = 8\n";
const char* kSmallTrain =
    "epochs = 1\niterations_per_epoch = 2\ncal_source_batch = 8\ncal_target_batch = 8\np = 3\nq = 4\nk = 3\n"
    "backbone_hidden = 8\nembed_dim = 4\ndisc_hidden = 6\n";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("gen-data writes four splits and a manifest, byte-stable on rerun") {
    const auto a = fresh("gen_a"), b = fresh("gen_b");
    REQUIRE(run({"gen-data", "--out", a.string(), "--seed", "4"}).code == 0);
    REQUIRE(run({"gen-data", "--out", b.string(), "--seed", "4"}).code == 0);
    for (const char* f : {"source_train.emb", "target_train.emb", "target_query.emb", "target_gallery.emb",
                          "warnings.json"}) {
        CHECK(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
    auto ma = nlohmann::json::parse(slurp(a / "manifest.json"));
    auto mb = nlohmann::json::parse(slurp(b / "manifest.json"));
    CHECK(ma["artifacts"].size() == 5);
    CHECK(ma["command"] == "gen-data");
    ma.erase("wall_clock_seconds");
    mb.erase("wall_clock_seconds");
    CHECK(ma == mb);
    CHECK(slurp(a / "target_train.emb").rfind("#dim=16 labels=hidden", 0) == 0);
}

TEST_CASE("unknown config keys get a suggestion and exit code 2") {
    const auto d = fresh("typo");
    const auto cfg = write_config(d, "sigmaa = 0.1\n");
    const auto r = run({"gen-data", "--config", cfg.string(), "--out", d.string()});
    CHECK(r.code == 2);
    const auto j = nlohmann::json::parse(r.err);
    CHECK(j["error"]["kind"] == "config");
    CHECK(j["error"]["message"].get<std::string>().find("did you mean 'sigma'") != std::string::npos);
}

TEST_CASE("bad arguments are usage errors") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"gen-data", "--threads", "0", "--out", fresh("t0").string()}).code == 2);
    const auto r = run({"train", "--out", fresh("nodata").string()});
    CHECK(r.code == 2);
    CHECK(nlohmann::json::parse(r.err)["error"]["command"] == "train");
}

TEST_CASE("version flag") {
    const auto r = run({"--version"});
    CHECK(r.code == 0);
    CHECK(r.out.find(kVersion) != std::string::npos);
}

TEST_CASE("train, eval, mine round trip") {
    const auto root = fresh("pipeline");
    const auto data = root / "data", model = root / "model", ev = root / "eval", mine = root / "mine";
    const auto wcfg = root / "world.cfg";
    std::ofstream(wcfg) << kSmallWorld;
    REQUIRE(run({"gen-data", "--config", wcfg.string(), "--out", data.string(), "--seed", "1"}).code == 0);
    const auto tcfg = root / "train.cfg";
    std::ofstream(tcfg) << kSmallTrain;
    const auto tr = run({"train", "--config", tcfg.string(), "--data", data.string(), "--out", model.string()});
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
    CHECK(fs::exists(model / "checkpoint.json"));
    const auto hist = nlohmann::json::parse(slurp(model / "history.json"));
    CHECK(hist["target_label_reads"] == 0);

    const auto e = run({"eval", "--checkpoint", (model / "checkpoint.json").string(), "--data", data.string(), "--out",
                        ev.string(), "--export"});
    REQUIRE_MESSAGE(e.code == 0, e.err);
    const auto metrics = nlohmann::json::parse(slurp(ev / "metrics.json"));
    CHECK(metrics.contains("mAP"));
    CHECK(fs::exists(ev / "query_embeddings.emb"));

    const auto m = run({"mine", "--config", tcfg.string(), "--checkpoint", (model / "checkpoint.json").string(),
                        "--data", data.string(), "--out", mine.string(), "--camera", "0"});
    REQUIRE_MESSAGE(m.code == 0, m.err);
    std::istringstream lines(slurp(mine / "triplets.jsonl"));
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j["camera_id"] == 0);
        CHECK(j.contains("positives"));
        ++count;
    }
    CHECK(count == 12);
}

TEST_CASE("eval of an untrained checkpoint prints a report") {
    const auto root = fresh("untrained");
    const auto wcfg = root / "world.cfg";
    std::ofstream(wcfg) << kSmallWorld;
    REQUIRE(run({"gen-data", "--config", wcfg.string(), "--out", (root / "data").string()}).code == 0);
    const auto tcfg = root / "train.cfg";
    std::ofstream(tcfg) << kSmallTrain << "epochs = 0\n";
    // duplicate key is itself a config error
    CHECK(run({"train", "--config", tcfg.string(), "--data", (root / "data").string(), "--out",
               (root / "m").string()})
              .code == 2);
    std::ofstream(tcfg) << "epochs = 0\nembed_dim = 4\np = 3\nq = 4\n";
    REQUIRE(run({"train", "--config", tcfg.string(), "--data", (root / "data").string(), "--out",
                 (root / "m").string()})
                .code == 0);
    const auto r = run({"eval", "--checkpoint", (root / "m" / "checkpoint.json").string(), "--data",
                        (root / "data").string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["valid_queries"].get<int>() > 0);
}

TEST_CASE("mine with an oversized fragment batch fails with an error object") {
    const auto root = fresh("bigmine");
    const auto wcfg = root / "world.cfg";
    std::ofstream(wcfg) << kSmallWorld;
    REQUIRE(run({"gen-data", "--config", wcfg.string(), "--out", (root / "data").string()}).code == 0);
    const auto tcfg = root / "train.cfg";
    std::ofstream(tcfg) << "epochs = 0\np = 3\nq = 4\n";
    REQUIRE(run({"train", "--config", tcfg.string(), "--data", (root / "data").string(), "--out",
                 (root / "m").string()})
                .code == 0);
    std::ofstream(tcfg) << "p = 40\nq = 40\n";
    const auto r = run({"mine", "--config", tcfg.string(), "--checkpoint", (root / "m" / "checkpoint.json").string(),
                        "--data", (root / "data").string(), "--out", (root / "mine").string(), "--camera", "0"});
    CHECK(r.code != 0);
    CHECK(nlohmann::json::parse(r.err)["error"]["kind"] == "insufficient-samples");
}

TEST_CASE("rerank with lambda one returns the input") {
    const auto root = fresh("rerank");
    const auto csv = root / "d.csv";
    std::ofstream(csv) << "0,1,2.5\n1,0,3\n2.5,3,0\n";
    const auto r = run({"rerank", "--distances", csv.string(), "--k1", "1", "--k2", "1", "--lambda", "1",
                        "--out", (root / "o").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(root / "o" / "distances.csv") == "0,1,2.5\n1,0,3\n2.5,3,0\n");
}

TEST_CASE("rerank rejects malformed matrices") {
    const auto root = fresh("rerank_bad");
    const auto csv = root / "d.csv";
    std::ofstream(csv) << "0,1\n1,0,3\n";
    CHECK(run({"rerank", "--distances", csv.string(), "--out", (root / "o").string()}).code != 0);
    CHECK(run({"rerank", "--out", (root / "o").string()}).code == 2);
}

TEST_CASE("key value parsing") {
    const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two # trailing\n");
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two");
    CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("just words\n"), ConfigError);
    CHECK(edit_distance("sigmaa", "sigma") == 1);
    CHECK(closest_key("sigmaa", {"seed", "sigma", "epochs"}) == "sigma");
    CHECK_THROWS(parse_size("-1"));
    CHECK_THROWS(parse_double("nan"));
    CHECK(parse_bool("yes"));
    CHECK_FALSE(parse_bool("0"));
}

}
