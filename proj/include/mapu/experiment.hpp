#pragma once

// Experiment configuration and the end-to-end scenario runner behind the CLI.
//
// The config is a JSON document with sections data, model, pretrain, adapt,
// eval and seeds. User documents are merged onto the built-in defaults; any
// key the defaults do not have is rejected.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mapu/data.hpp"
#include "mapu/pipeline.hpp"

namespace mapu {

std::string version_string();

struct DataConfig {
    std::size_t n = 600;  // per domain, before the train/test split
    double train_fraction = 0.7;
    std::uint64_t split_seed = 7;
    double shift_knob = 0.6;
    std::vector<ClassArchetype> archetypes = default_archetypes();
    ShiftParams source_shift;
    // The knob = 1 endpoint. Louder signals push a frozen model's logits up, so
    // the softmax head stays confident where the evidential one does not.
    ShiftParams target_shift{0.45, 2.0, 3.141592653589793, 1.0, 1.0};
    std::uint64_t source_seed = 101;
    std::uint64_t target_seed = 202;

    DomainSpec source_spec() const;
    /// Target spec with every shift parameter interpolated at shift_knob.
    DomainSpec target_spec() const;
};

struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t classes = 5;
    std::size_t length = 128;
};

struct EvalConfig {
    std::size_t bins = 10;
    bool write_csv = true;
};

// Desk-scale epoch budgets: both variants, both stages, one seed in under ten
// minutes on one core.
inline TrainConfig desk_train_config(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    return c;
}

struct ExperimentConfig {
    DataConfig data;
    ModelConfig model;
    TrainConfig pretrain = desk_train_config(30);
    TrainConfig adapt = desk_train_config(15);
    EvalConfig eval;
    std::vector<std::uint64_t> seeds{1, 2, 3};

    nlohmann::json to_json() const;
};

/// The fully resolved default document.
nlohmann::json default_config_json();

/// Merges `user` onto the defaults and validates the result. ConfigError on
/// unknown keys, wrong types or out-of-range values.
ExperimentConfig parse_config(const nlohmann::json& user);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies `a.b.c=value` to a JSON document. The value is parsed as JSON and
/// falls back to a plain string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct DomainSplits {
    Dataset source_train, source_test, target_train, target_test;
};
DomainSplits make_datasets(const ExperimentConfig& cfg);
void save_datasets(const DomainSplits& d, const std::filesystem::path& dir);
DomainSplits load_datasets(const std::filesystem::path& dir);

/// Per-seed outcome of the full pipeline.
struct SeedResult {
    std::uint64_t seed = 0;
    double source_only_mf1 = 0.0;
    double mapu_mf1 = 0.0;
    double emapu_mf1 = 0.0;
    double softmax_ece = 0.0, evidential_ece = 0.0;
    double softmax_brier = 0.0, evidential_brier = 0.0;
    double softmax_entropy_gap = 0.0, evidential_entropy_gap = 0.0;
    double wall_seconds = 0.0;
    nlohmann::json report;  // deterministic per-seed document
};

/// Pretrains both variants, evaluates the source-only model, adapts both and
/// writes every artifact for this seed under `dir` (if non-empty).
SeedResult run_seed(const ExperimentConfig& cfg, const DomainSplits& data, std::uint64_t seed,
                    const std::filesystem::path& dir);

struct ScenarioResult {
    std::vector<SeedResult> seeds;  // in config order
    nlohmann::json aggregate;
};

/// All seeds, `workers` at a time, plus aggregate.json/.csv and timing.json.
ScenarioResult run_scenario(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                            std::size_t workers = 1);

/// Writes `doc` as pretty JSON with a trailing newline, atomically.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace mapu
