// mapu: generate data, pretrain, adapt, evaluate and run full scenarios.
//
// Exit codes: 0 ok, 2 invalid config or arguments, 3 I/O or file format,
// 4 numerical failure, 1 anything else.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mapu/binary_io.hpp"
#include "mapu/experiment.hpp"
#include "mapu/random.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

mapu::ExperimentConfig resolve(const Common& c) {
    json doc = json::object();
    if (!c.config_path.empty()) {
        const auto bytes = mapu::io::read_file(c.config_path);
        doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
        if (doc.is_discarded()) throw mapu::ConfigError(c.config_path + ": not valid JSON");
    }
    for (const auto& o : c.overrides) mapu::apply_override(doc, o);
    auto cfg = mapu::parse_config(doc);
    if (c.seed) cfg.seeds = {*c.seed};
    return cfg;
}

void add_common(CLI::App* sub, Common& c, bool with_config = true) {
    if (with_config) {
        sub->add_option("--config", c.config_path, "JSON experiment config");
        sub->add_option("--set", c.overrides, "Override a config key, e.g. adapt.lr=0.001")->take_all();
    }
    sub->add_option("--seed", c.seed, "Run seed (replaces config seeds)");
    sub->add_option("--out", c.out, "Output directory");
}

json envelope(const mapu::ExperimentConfig& cfg) { return {{"version", mapu::version_string()}, {"config", cfg.to_json()}}; }

int cmd_generate(const Common& c) {
    const auto cfg = resolve(c);
    const auto data = mapu::make_datasets(cfg);
    mapu::save_datasets(data, c.out);
    json doc = envelope(cfg);
    doc["datasets"] = {{"source_train", data.source_train.n}, {"source_test", data.source_test.n},
                       {"target_train", data.target_train.n}, {"target_test", data.target_test.n}};
    mapu::write_json(fs::path(c.out) / "generate.json", doc);
    std::printf("wrote 4 datasets to %s\n", c.out.c_str());
    return 0;
}

int cmd_pretrain(const Common& c, const std::string& data_dir, const std::string& variant) {
    const auto cfg = resolve(c);
    const auto source = mapu::load_dataset(fs::path(data_dir) / "source_train.tsd");
    mapu::TrainConfig tc = cfg.pretrain;
    tc.seed = cfg.seeds.front();
    tc.variant = mapu::variant_from_name(variant);
    auto init = mapu::init_bundle(cfg.model.in_channels, cfg.model.classes, mapu::mix_seed(tc.seed, 0x1417ull));
    auto [bundle, report] = mapu::pretrain(std::move(init), source, tc);
    fs::create_directories(c.out);
    const fs::path stem = fs::path(c.out) / ("pretrain_" + variant);
    mapu::save_checkpoint(bundle, stem.string() + ".mdl");
    json doc = envelope(cfg);
    doc["run"] = report.to_json();
    mapu::write_json(stem.string() + ".json", doc);
    mapu::write_json(stem.string() + ".timing.json", report.timing_json());
    std::printf("pretrained %s: %s.mdl\n", variant.c_str(), stem.c_str());
    return 0;
}

int cmd_adapt(const Common& c, const std::string& checkpoint, const std::string& data_dir, std::string variant) {
    const auto cfg = resolve(c);
    auto bundle = mapu::load_checkpoint(checkpoint);
    if (variant.empty()) variant = bundle.pretrain_variant.empty() ? "mapu" : bundle.pretrain_variant;
    const auto target = mapu::load_dataset(fs::path(data_dir) / "target_train.tsd");
    mapu::TrainConfig tc = cfg.adapt;
    tc.seed = cfg.seeds.front();
    tc.variant = mapu::variant_from_name(variant);
    auto [adapted, report] = mapu::adapt(std::move(bundle), target, tc);
    fs::create_directories(c.out);
    const fs::path stem = fs::path(c.out) / ("adapt_" + variant);
    mapu::save_checkpoint(adapted, stem.string() + ".mdl");
    json doc = envelope(cfg);
    doc["run"] = report.to_json();
    mapu::write_json(stem.string() + ".json", doc);
    mapu::write_json(stem.string() + ".timing.json", report.timing_json());
    std::printf("adapted %s: %s.mdl\n", variant.c_str(), stem.c_str());
    return 0;
}

int cmd_evaluate(const Common& c, const std::string& checkpoint, const std::string& data_file, std::string head,
                 std::size_t bins) {
    auto bundle = mapu::load_checkpoint(checkpoint);
    const auto ds = mapu::load_dataset(data_file);
    if (head.empty()) head = bundle.pretrain_variant == "emapu" ? "evidential" : "softmax";
    if (head != "softmax" && head != "evidential") throw mapu::ConfigError("--head must be softmax or evidential");
    if (bins < 2) throw mapu::ConfigError("--bins must be at least 2");
    const auto preds = mapu::predict(bundle, ds);
    const auto eval = mapu::evaluate(preds, head == "softmax" ? mapu::Head::softmax : mapu::Head::evidential,
                                     bundle.classes(), bins);
    fs::create_directories(c.out);
    json doc = {{"version", mapu::version_string()},
                {"checkpoint", checkpoint},
                {"data", data_file},
                {"head", head},
                {"bins", bins},
                {"metrics", mapu::to_json(eval)}};
    mapu::write_json(fs::path(c.out) / "evaluation.json", doc);
    mapu::io::write_text_atomic(fs::path(c.out) / "calibration.csv", mapu::calibration_csv(eval.calibration));
    mapu::io::write_text_atomic(
        fs::path(c.out) / "entropy.csv",
        mapu::entropy_histogram_csv(mapu::entropy_summary(preds.softmax_probs, preds.evd_probs), bundle.classes()));
    std::printf("accuracy %.4f  macro-F1 %.4f  ECE %.4f\n", eval.accuracy, eval.macro_f1, eval.calibration.ece);
    return 0;
}

int cmd_scenario(const Common& c, std::size_t workers) {
    const auto cfg = resolve(c);
    const auto result = mapu::run_scenario(cfg, c.out, workers);
    std::printf("%-12s %s\n", "variant", "MF1 (mean +- std over seeds)");
    for (const auto& row : result.aggregate.at("macro_f1")) {
        std::printf("%-12s %6.2f +- %.2f\n", row.at("variant").get<std::string>().c_str(),
                    100.0 * row.at("mf1_mean").get<double>(), 100.0 * row.at("mf1_std").get<double>());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Masking-and-imputation source-free domain adaptation for time series"};
    app.set_version_flag("--version", mapu::version_string());
    app.require_subcommand(1);

    Common common;
    std::string data, checkpoint, variant = "mapu", adapt_variant, head;
    std::size_t workers = 1, bins = 10;

    auto* gen = app.add_subcommand("generate", "Generate source/target train/test datasets");
    add_common(gen, common);

    auto* pre = app.add_subcommand("pretrain", "Pretrain on the labelled source split");
    add_common(pre, common);
    pre->add_option("--data", data, "Directory with source_train.tsd")->required();
    pre->add_option("--variant", variant, "mapu or emapu")->check(CLI::IsMember({"mapu", "emapu"}));

    auto* ad = app.add_subcommand("adapt", "Adapt a pretrained checkpoint to the unlabelled target split");
    add_common(ad, common);
    ad->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
    ad->add_option("--data", data, "Directory with target_train.tsd")->required();
    ad->add_option("--variant", adapt_variant, "mapu or emapu (default: checkpoint's variant)")
        ->check(CLI::IsMember({"mapu", "emapu"}));

    auto* ev = app.add_subcommand("evaluate", "Score a checkpoint on a dataset file");
    add_common(ev, common, false);
    ev->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    ev->add_option("--data", data, "Dataset file (.tsd)")->required();
    ev->add_option("--head", head, "softmax or evidential (default: checkpoint's variant)");
    ev->add_option("--bins", bins, "Calibration bins");

    auto* sc = app.add_subcommand("scenario", "Full pipeline over all seeds with an aggregate table");
    add_common(sc, common);
    sc->add_option("--workers", workers, "Seeds run in parallel")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_generate(common);
        if (*pre) return cmd_pretrain(common, data, variant);
        if (*ad) return cmd_adapt(common, checkpoint, data, adapt_variant);
        if (*ev) return cmd_evaluate(common, checkpoint, data, head, bins);
        if (*sc) return cmd_scenario(common, workers);
    } catch (const mapu::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const mapu::DomainError& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 2;
    } catch (const mapu::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return 3;
    } catch (const mapu::FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 3;
    } catch (const mapu::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
