#include "mapu/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "mapu/losses.hpp"
#include "mapu/ops.hpp"

namespace mapu {

const char* variant_name(Variant v) { return v == Variant::mapu ? "mapu" : "emapu"; }

Variant variant_from_name(const std::string& name) {
    if (name == "mapu") return Variant::mapu;
    if (name == "emapu") return Variant::emapu;
    throw DomainError("unknown variant '" + name + "'");
}

// ---- Adam -------------------------------------------------------------------

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               const AdamOptions& opts) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient size mismatch");
    detail::check_finite("adam_step gradient", grads);
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opts.beta1, t);
    const double c2 = 1.0 - std::pow(opts.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = opts.beta1 * state.m[i] + (1.0 - opts.beta1) * g;
        state.v[i] = opts.beta2 * state.v[i] + (1.0 - opts.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + opts.eps);
    }
}

void BundleOptimizer::zero_grad(ModelBundle& bundle) {
    for (auto& e : bundle.entries()) {
        if (e.is_parameter) e.tensor.zero_grad();
    }
}

void BundleOptimizer::step(ModelBundle& bundle) {
    for (auto& e : bundle.entries()) {
        if (!e.is_parameter || !bundle.trainable(e.group)) continue;
        const auto g = e.tensor.grad();
        adam_step(e.values, g, states_[e.name], lr_, opts_);
    }
}

// ---- config / report ----------------------------------------------------------

void TrainConfig::validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (gammas.entropy < 0.0 || gammas.diversity < 0.0 || gammas.selfsup < 0.0 || beta_imp < 0.0 ||
        src_imp_weight < 0.0) {
        throw ConfigError("loss weights must be non-negative");
    }
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.eps > 0.0)) {
        throw ConfigError("invalid Adam coefficients");
    }
    try {
        (void)mask.masked_blocks();
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
}

nlohmann::json TrainConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"lr", lr},
            {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
            {"seed", seed},
            {"variant", variant_name(variant)},
            {"gamma1", gammas.entropy},
            {"gamma2", gammas.diversity},
            {"gamma3", gammas.selfsup},
            {"beta_imp", beta_imp},
            {"src_imp_weight", src_imp_weight},
            {"label_smoothing", label_smoothing},
            {"mask", {{"ratio", mask.ratio}, {"n_blocks", mask.n_blocks}, {"rng_seed", mask.rng_seed}}},
            {"bn_update_during_adapt", bn_update_during_adapt},
            {"literal_eq16_17", literal_eq16_17},
            {"lambda_adapt_schedule", lambda_adapt_schedule}};
}

nlohmann::json RunReport::to_json() const {
    return {{"stage", stage}, {"variant", variant}, {"seed", seed},     {"losses", losses},
            {"flags", flags}, {"config", config},   {"metrics", metrics}};
}

nlohmann::json RunReport::timing_json() const {
    return {{"stage", stage}, {"variant", variant}, {"seed", seed}, {"wall_seconds", wall_seconds}};
}

// ---- training loops -------------------------------------------------------------

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, epoch, 0x5EEDBA7Cull));
    rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start < 2) break;
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

namespace {

using Clock = std::chrono::steady_clock;

// Running per-epoch means of named loss terms.
class EpochLog {
public:
    void add(const std::string& name, const Tensor& value) { sums_[name] += value.item(); }
    void end_batch() { ++batches_; }
    void flush(RunReport& report) {
        for (auto& [name, s] : sums_) {
            report.losses[name].push_back(batches_ ? s / static_cast<double>(batches_) : 0.0);
        }
        sums_.clear();
        batches_ = 0;
    }
    void declare(RunReport& report, std::initializer_list<const char*> names) {
        for (const char* n : names) report.losses[n];
    }

private:
    std::map<std::string, double> sums_;
    std::size_t batches_ = 0;
};

void set_groups(ModelBundle& bundle, std::initializer_list<Group> trainable) {
    for (Group g : kAllGroups) bundle.set_trainable(g, false);
    for (Group g : trainable) bundle.set_trainable(g, true);
}

void check_dataset(const ModelBundle& bundle, const Dataset& ds) {
    ds.validate();
    if (ds.classes != bundle.classes()) {
        throw DomainError("dataset has " + std::to_string(ds.classes) + " classes, model has " +
                          std::to_string(bundle.classes()));
    }
    if (ds.channels != bundle.in_channels()) throw DomainError("dataset channel count does not match the model");
}

template <class StepFn>
void run_epochs(const char* stage, const Dataset& ds, const TrainConfig& cfg, RunReport& report, StepFn&& step) {
    EpochLog log;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto batches = epoch_batches(ds.n, cfg.batch_size, cfg.seed, epoch);
        for (std::size_t b = 0; b < batches.size(); ++b) {
            try {
                step(epoch, batches[b], log);
            } catch (const NumericError& e) {
                Tape::current().clear();
                throw NumericError(std::string(stage) + " aborted at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(b) + ": " + e.what());
            }
            log.end_batch();
        }
        log.flush(report);
    }
    Tape::current().clear();
}

RunReport start_report(const char* stage, const TrainConfig& cfg) {
    RunReport r;
    r.stage = stage;
    r.variant = variant_name(cfg.variant);
    r.seed = cfg.seed;
    r.config = cfg.to_json();
    return r;
}

}  // namespace

std::pair<ModelBundle, RunReport> pretrain(ModelBundle bundle, const Dataset& source, const TrainConfig& cfg) {
    cfg.validate();
    check_dataset(bundle, source);
    const auto t0 = Clock::now();
    RunReport report = start_report("pretrain", cfg);
    const bool evidential = cfg.variant == Variant::emapu;
    if (evidential) {
        set_groups(bundle, {Group::encoder, Group::evidential, Group::imputer});
    } else {
        set_groups(bundle, {Group::encoder, Group::classifier, Group::imputer});
    }
    EpochLog{}.declare(report, evidential ? std::initializer_list<const char*>{"evd_ce", "kl", "cls", "imputation", "total"}
                                          : std::initializer_list<const char*>{"cls", "imputation", "total"});
    BundleOptimizer opt(cfg.lr, cfg.adam);
    const EncodeOptions train_mode{Mode::train, true};

    run_epochs("pretrain", source, cfg, report, [&](std::size_t epoch, const std::vector<std::size_t>& idx, EpochLog& log) {
        Tape::current().clear();
        opt.zero_grad(bundle);
        const Tensor x = source.batch(idx);
        const auto y = source.batch_labels(idx);
        const auto masked = temporal_mask(x, cfg.mask, cfg.seed, epoch, idx);

        const FeatureMap h = encode(bundle, x, train_mode);
        FeatureMap h_masked;
        {
            NoGradGuard no_grad;
            h_masked = encode(bundle, masked.masked, train_mode);
        }
        const Tensor pooled = pool(h);
        Tensor cls;
        if (evidential) {
            const auto out = dirichlet_stats(evidential_logits(bundle, pooled));
            const Tensor target = one_hot(y, bundle.classes());
            const Tensor ce = evd_ce(out.alpha, target);
            const Tensor kl = kl_to_uniform(adjust_alpha(out.alpha, target));
            cls = add(ce, scale(kl, lambda_schedule(epoch)));
            log.add("evd_ce", ce);
            log.add("kl", kl);
        } else {
            cls = smoothed_ce(classify(bundle, pooled), y, cfg.label_smoothing);
        }
        // imputer trained on detached features only
        const Tensor imp = imputation_mse(FeatureMap{h.value.detach()}, impute(bundle, h_masked));
        const Tensor total = add(cls, scale(imp, cfg.src_imp_weight));
        backward(total);
        opt.step(bundle);
        log.add("cls", cls);
        log.add("imputation", imp);
        log.add("total", total);
    });

    bundle.pretrained = true;
    bundle.pretrain_variant = variant_name(cfg.variant);
    for (Group g : kAllGroups) bundle.set_trainable(g, true);
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(bundle), std::move(report)};
}

namespace {

template <class ObjectiveFn>
std::pair<ModelBundle, RunReport> adapt_impl(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg,
                                             Variant variant, ObjectiveFn&& objective) {
    cfg.validate();
    check_dataset(bundle, target);
    const auto t0 = Clock::now();
    TrainConfig echo = cfg;
    echo.variant = variant;
    RunReport report = start_report("adapt", echo);
    if (!bundle.pretrained) report.flags.push_back("unpretrained_bundle");
    set_groups(bundle, {Group::encoder});
    BundleOptimizer opt(cfg.lr, cfg.adam);
    const EncodeOptions enc{Mode::train, cfg.bn_update_during_adapt};
    const bool with_imputation = cfg.beta_imp > 0.0;

    run_epochs("adapt", target, cfg, report, [&](std::size_t epoch, const std::vector<std::size_t>& idx, EpochLog& log) {
        Tape::current().clear();
        opt.zero_grad(bundle);
        const Tensor x = target.batch(idx);
        const FeatureMap h = encode(bundle, x, enc);
        Tensor total = objective(bundle, h, epoch, log);
        if (with_imputation) {
            const auto masked = temporal_mask(x, cfg.mask, cfg.seed, epoch, idx);
            const FeatureMap h_masked = encode(bundle, masked.masked, enc);
            const Tensor imp = imputation_mse(h, impute(bundle, h_masked));
            total = add(total, scale(imp, cfg.beta_imp));
            log.add("imputation", imp);
        }
        log.add("total", total);
        backward(total);
        opt.step(bundle);
    });

    for (Group g : kAllGroups) bundle.set_trainable(g, true);
    report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return {std::move(bundle), std::move(report)};
}

}  // namespace

std::pair<ModelBundle, RunReport> adapt_mapu(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg) {
    return adapt_impl(std::move(bundle), target, cfg, Variant::mapu,
                      [](ModelBundle& b, const FeatureMap& h, std::size_t, EpochLog& log) {
                          const Tensor im = infomax_loss(softmax(classify(b, pool(h))));
                          log.add("infomax", im);
                          return im;
                      });
}

std::pair<ModelBundle, RunReport> adapt_emapu(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg) {
    return adapt_impl(std::move(bundle), target, cfg, Variant::emapu,
                      [&cfg](ModelBundle& b, const FeatureMap& h, std::size_t epoch, EpochLog& log) {
                          const auto out = dirichlet_stats(evidential_logits(b, pool(h)));
                          const double lambda = cfg.lambda_adapt_schedule ? lambda_schedule(epoch) : 1.0;
                          const auto terms = evd_adaptation_loss(out, cfg.gammas, lambda, cfg.literal_eq16_17);
                          log.add("entropy", terms.entropy);
                          log.add("diversity", terms.diversity);
                          log.add("selfsup", terms.selfsup);
                          log.add("evd_entropy", evd_entropy(out.probs));
                          return terms.total;
                      });
}

std::pair<ModelBundle, RunReport> adapt(ModelBundle bundle, const Dataset& target, const TrainConfig& cfg) {
    return cfg.variant == Variant::mapu ? adapt_mapu(std::move(bundle), target, cfg)
                                        : adapt_emapu(std::move(bundle), target, cfg);
}

// ---- evaluation -------------------------------------------------------------------

Predictions predict(ModelBundle& bundle, const Dataset& ds, std::size_t batch_size) {
    check_dataset(bundle, ds);
    NoGradGuard no_grad;
    const EncodeOptions eval{Mode::eval, false};
    const std::size_t k = bundle.classes();
    std::vector<double> sm, ev;
    sm.reserve(ds.n * k);
    ev.reserve(ds.n * k);
    for (std::size_t start = 0; start < ds.n; start += batch_size) {
        std::vector<std::size_t> idx(std::min(batch_size, ds.n - start));
        std::iota(idx.begin(), idx.end(), start);
        const Tensor pooled = pool(encode(bundle, ds.batch(idx), eval));
        const Tensor p = softmax(classify(bundle, pooled));
        const Tensor q = dirichlet_stats(evidential_logits(bundle, pooled)).probs;
        sm.insert(sm.end(), p.data().begin(), p.data().end());
        ev.insert(ev.end(), q.data().begin(), q.data().end());
    }
    return {Tensor::from({ds.n, k}, std::move(sm)), Tensor::from({ds.n, k}, std::move(ev)), ds.labels};
}

Head head_for(Variant v) { return v == Variant::mapu ? Head::softmax : Head::evidential; }

Evaluation evaluate(const Predictions& preds, Head head, std::size_t classes, std::size_t bins) {
    const Tensor& probs = head == Head::softmax ? preds.softmax_probs : preds.evd_probs;
    const auto pred = argmax_rows(probs);
    Evaluation e;
    e.accuracy = accuracy(pred, preds.labels);
    e.macro_f1 = macro_f1(pred, preds.labels, classes);
    e.calibration = calibration(probs, preds.labels, bins);
    e.entropy = entropy_stats(probs);
    return e;
}

nlohmann::json to_json(const Evaluation& e) {
    return {{"accuracy", e.accuracy},
            {"macro_f1", e.macro_f1},
            {"calibration", to_json(e.calibration)},
            {"entropy", to_json(e.entropy)}};
}

}  // namespace mapu
