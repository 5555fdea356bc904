#pragma once

// Source pretraining and source-free target adaptation.
//
//   pretrain(mapu)   smoothed CE on g(f(x))          + imputation MSE for j
//   pretrain(emapu)  evd_ce + λ_t KL on u(f(x))      + imputation MSE for j
//   adapt_mapu       infomax(softmax g(f(x)))        + β · MSE(f(x), j(f(x')))
//   adapt_emapu      γ-weighted evidential losses    + β · MSE(f(x), j(f(x')))
//
// During pretraining the imputer sees detached features, so its loss never
// reaches the encoder. During adaptation only the encoder is trained.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mapu/data.hpp"
#include "mapu/evidential.hpp"
#include "mapu/masking.hpp"
#include "mapu/metrics.hpp"
#include "mapu/nets.hpp"

namespace mapu {

enum class Variant { mapu, emapu };
const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update of `params` in place. NumericError on a
/// non-finite gradient.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts = {});

/// Adam over the trainable groups of a bundle; frozen groups are skipped.
class BundleOptimizer {
public:
    BundleOptimizer(double lr, AdamOptions opts) : lr_(lr), opts_(opts) {}
    void zero_grad(ModelBundle& bundle);
    void step(ModelBundle& bundle);

private:
    double lr_;
    AdamOptions opts_;
    std::map<std::string, AdamState> states_;
};

struct TrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    AdamOptions adam;
    std::uint64_t seed = 0;
    Variant variant = Variant::mapu;
    EvdWeights gammas;               // γ1, γ2, γ3
    double beta_imp = 0.5;           // β, target imputation weight
    double src_imp_weight = 1.0;     // weight of the imputer loss in pretraining
    double label_smoothing = 0.1;    // η
    MaskSpec mask;
    bool bn_update_during_adapt = true;
    bool literal_eq16_17 = false;
    bool lambda_adapt_schedule = true;

    void validate() const;
    nlohmann::json to_json() const;
};

struct RunReport {
    std::string stage;    // "pretrain" or "adapt"
    std::string variant;
    std::uint64_t seed = 0;
    std::map<std::string, std::vector<double>> losses;  // per-epoch batch means
    std::vector<std::string> flags;
    nlohmann::json config;
    nlohmann::json metrics = nlohmann::json::object();
    double wall_seconds = 0.0;

    /// Deterministic part only; timing lives in timing_json().
    nlohmann::json to_json() const;
    nlohmann::json timing_json() const;
};

std::pair<ModelBundle, RunReport> pretrain(ModelBundle bundle, const Dataset& source, const TrainConfig& cfg);
std::pair<ModelBundle, RunReport> adapt_mapu(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg);
std::pair<ModelBundle, RunReport> adapt_emapu(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg);
/// Dispatches on cfg.variant.
std::pair<ModelBundle, RunReport> adapt(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg);

/// Mini-batch order for one epoch: a seeded shuffle, cut into batch_size
/// chunks, with a trailing chunk dropped if it holds fewer than 2 samples.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch);

struct Predictions {
    Tensor softmax_probs;  // classifier head
    Tensor evd_probs;      // evidential head, α / S
    std::vector<int> labels;
};

/// Eval-mode forward pass over the whole dataset without recording.
Predictions predict(ModelBundle& bundle, const Dataset& ds, std::size_t batch_size = 64);

enum class Head { softmax, evidential };
Head head_for(Variant v);

struct Evaluation {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    CalibrationReport calibration;
    EntropyStats entropy;
};

Evaluation evaluate(const Predictions& preds, Head head, std::size_t classes, std::size_t bins = 10);
nlohmann::json to_json(const Evaluation& e);

}  // namespace mapu
