#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mapu/experiment.hpp"

using namespace mapu;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / ("mapu_test_exp_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(MAPU_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json tiny_config() {
    return {{"data", {{"n", 40}}},
            {"model", {{"length", 64}}},
            {"pretrain", {{"epochs", 1}, {"batch_size", 8}}},
            {"adapt", {{"epochs", 1}, {"batch_size", 8}}},
            {"seeds", {1, 2}}};
}

void write_config(const fs::path& p, const json& doc) { std::ofstream(p) << doc.dump(2); }

}  // namespace

// ---- config ---------------------------------------------------------------------------

TEST(Config, DefaultsRoundTrip) {
    const auto doc = default_config_json();
    const auto cfg = parse_config(doc);
    EXPECT_EQ(cfg.to_json(), doc);
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
    EXPECT_EQ(cfg.data.shift_knob, 0.6);
    EXPECT_EQ(cfg.pretrain.mask.n_blocks, 8u);
    EXPECT_EQ(parse_config(json::object()).to_json(), doc);
}

TEST(Config, PartialDocumentsMergeOntoDefaults) {
    const auto cfg = parse_config({{"adapt", {{"lr", 0.01}}}, {"seeds", {4}}});
    EXPECT_EQ(cfg.adapt.lr, 0.01);
    EXPECT_EQ(cfg.adapt.batch_size, 32u);
    EXPECT_EQ(cfg.pretrain.lr, 1e-3);
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{4}));
}

TEST(Config, StrictSchema) {
    EXPECT_THROW(parse_config({{"adapt", {{"learning_rate", 0.01}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"extra", 1}}), ConfigError);
    EXPECT_THROW(parse_config({{"adapt", {{"lr", "fast"}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"adapt", {{"epochs", -1}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"adapt", {{"batch_size", 1}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"eval", {{"bins", 1}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"seeds", {1, 1}}}), ConfigError);
    EXPECT_THROW(parse_config({{"seeds", json::array()}}), ConfigError);
    EXPECT_THROW(parse_config({{"data", {{"shift_knob", 1.5}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"pretrain", {{"variant", "shot"}}}}), ConfigError);
    EXPECT_THROW(parse_config({{"model", {{"classes", 9}}}}), ConfigError);
    EXPECT_THROW(parse_config(json::array()), ConfigError);
}

TEST(Config, Overrides) {
    json doc = json::object();
    apply_override(doc, "adapt.lr=0.002");
    apply_override(doc, "adapt.literal_eq16_17=true");
    apply_override(doc, "seeds=[7,8]");
    apply_override(doc, "adapt.mask.n_blocks=4");
    EXPECT_EQ(doc["adapt"]["lr"], 0.002);
    EXPECT_EQ(doc["adapt"]["literal_eq16_17"], true);
    json loose = json::object();
    apply_override(loose, "name=emapu");  // not JSON, kept as a string
    EXPECT_EQ(loose["name"], "emapu");
    const auto cfg = parse_config(doc);
    EXPECT_EQ(cfg.seeds, (std::vector<std::uint64_t>{7, 8}));
    EXPECT_TRUE(cfg.adapt.literal_eq16_17);
    EXPECT_EQ(cfg.adapt.mask.n_blocks, 4u);
    EXPECT_THROW(parse_config(loose), ConfigError);
    EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
    EXPECT_THROW(apply_override(doc, "=3"), ConfigError);
}

TEST(Config, LoadFromFile) {
    const auto dir = fresh_dir("load");
    write_config(dir / "c.json", tiny_config());
    EXPECT_EQ(load_config(dir / "c.json").data.n, 40u);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
    EXPECT_THROW(load_config(dir / "missing.json"), IoError);
    fs::remove_all(dir);
}

TEST(Config, ShippedDefaultsMatch) {
    const auto doc = json::parse(slurp(fs::path(MAPU_SOURCE_DIR) / "configs" / "default.json"));
    EXPECT_EQ(doc, default_config_json());
}

TEST(Datasets, SplitsAndRoundTrip) {
    const auto cfg = parse_config(tiny_config());
    const auto d = make_datasets(cfg);
    EXPECT_EQ(d.source_train.n + d.source_test.n, 40u);
    EXPECT_EQ(d.target_train.n, 30u);  // 8 per class, round(5.6) = 6 to train
    const auto dir = fresh_dir("datasets");
    save_datasets(d, dir);
    const auto back = load_datasets(dir);
    EXPECT_EQ(encode_dataset(back.target_test), encode_dataset(d.target_test));
    fs::remove_all(dir);
}

// ---- scenario ------------------------------------------------------------------------

TEST(Scenario, AggregateAndReproducibility) {
    const auto cfg = parse_config(tiny_config());
    const auto a = fresh_dir("scen_a"), b = fresh_dir("scen_b");
    const auto ra = run_scenario(cfg, a, 1);
    run_scenario(cfg, b, 2);  // worker count must not matter
    ASSERT_EQ(ra.seeds.size(), 2u);
    for (const auto& row : ra.aggregate.at("macro_f1")) EXPECT_EQ(row.at("runs"), 2);
    EXPECT_EQ(ra.aggregate.at("macro_f1").size(), 3u);
    std::size_t compared = 0;
    for (const auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file() || entry.path().filename() == "timing.json") continue;
        const auto rel = fs::relative(entry.path(), a);
        EXPECT_EQ(slurp(entry.path()), slurp(b / rel)) << rel;
        ++compared;
    }
    EXPECT_GE(compared, 2u + 2u * 9u);
    const auto report = json::parse(slurp(a / "seed_1" / "report.json"));
    EXPECT_EQ(report.at("version"), version_string());
    EXPECT_EQ(report.at("config"), cfg.to_json());
    fs::remove_all(a);
    fs::remove_all(b);
}

// ---- command line ----------------------------------------------------------------------

TEST(Cli, ExitCodes) {
    const auto dir = fresh_dir("cli");
    EXPECT_EQ(run_cli("--version"), 0);
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("generate --set data.bogus=1 --out " + dir.string()), 2);
    EXPECT_EQ(run_cli("generate --set eval.bins=1 --out " + dir.string()), 2);
    EXPECT_EQ(run_cli("generate --config " + (dir / "missing.json").string()), 3);
    std::ofstream(dir / "junk.mdl") << "not a checkpoint";
    EXPECT_EQ(run_cli("evaluate --checkpoint " + (dir / "junk.mdl").string() + " --data x.tsd --out " +
                      dir.string()),
              3);
    fs::remove_all(dir);
}

TEST(Cli, StagewisePipeline) {
    const auto dir = fresh_dir("stages");
    write_config(dir / "c.json", tiny_config());
    const std::string common = " --config " + (dir / "c.json").string();
    ASSERT_EQ(run_cli("generate" + common + " --out " + (dir / "data").string()), 0);
    EXPECT_TRUE(fs::exists(dir / "data" / "target_test.tsd"));
    EXPECT_EQ(run_cli("pretrain" + common + " --set pretrain.lr=1e300 --data " + (dir / "data").string() +
                      " --out " + (dir / "diverged").string()),
              4);
    ASSERT_EQ(run_cli("pretrain" + common + " --variant emapu --data " + (dir / "data").string() + " --out " +
                      (dir / "run").string()),
              0);
    ASSERT_EQ(run_cli("adapt" + common + " --checkpoint " + (dir / "run" / "pretrain_emapu.mdl").string() +
                      " --data " + (dir / "data").string() + " --out " + (dir / "run").string()),
              0);
    ASSERT_EQ(run_cli("evaluate --checkpoint " + (dir / "run" / "adapt_emapu.mdl").string() + " --data " +
                      (dir / "data" / "source_train.tsd").string() + " --out " + (dir / "eval").string()),
              0);
    const auto ev = json::parse(slurp(dir / "eval" / "evaluation.json"));
    EXPECT_EQ(ev.at("head"), "evidential");
    const double acc = ev.at("metrics").at("accuracy"), mf1 = ev.at("metrics").at("macro_f1");
    EXPECT_GE(acc, 0.0);
    EXPECT_GE(mf1, 0.0);
    const auto adapt_report = json::parse(slurp(dir / "run" / "adapt_emapu.json"));
    EXPECT_EQ(adapt_report.at("run").at("variant"), "emapu");
    EXPECT_FALSE(adapt_report.at("run").contains("wall_seconds"));
    fs::remove_all(dir);
}
