#include "mapu/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mapu/binary_io.hpp"
#include "mapu/random.hpp"

#ifndef MAPU_VERSION
#define MAPU_VERSION "0.0.0"
#endif

namespace mapu {

std::string version_string() { return std::string("mapu ") + MAPU_VERSION; }

DomainSpec DataConfig::source_spec() const { return {archetypes, source_shift, source_seed}; }

DomainSpec DataConfig::target_spec() const {
    return {archetypes, interpolate_shift(source_shift, target_shift, shift_knob), target_seed};
}

// ---- JSON <-> structs -----------------------------------------------------------

namespace {

using nlohmann::json;

json shift_json(const ShiftParams& s) {
    return {{"noise_sigma", s.noise_sigma},
            {"amplitude_scale", s.amplitude_scale},
            {"phase_jitter", s.phase_jitter},
            {"time_warp", s.time_warp},
            {"mix_angle", s.mix_angle}};
}

ShiftParams shift_from(const json& j) {
    return {j.at("noise_sigma").get<double>(), j.at("amplitude_scale").get<double>(),
            j.at("phase_jitter").get<double>(), j.at("time_warp").get<double>(), j.at("mix_angle").get<double>()};
}

// Seed and variant are per-run, so they are not part of the config sections.
json train_section_json(const TrainConfig& c) {
    json j = c.to_json();
    j.erase("seed");
    j.erase("variant");
    return j;
}

TrainConfig train_from(const json& j) {
    TrainConfig c;
    c.epochs = j.at("epochs").get<std::size_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.lr = j.at("lr").get<double>();
    c.adam.beta1 = j.at("adam").at("beta1").get<double>();
    c.adam.beta2 = j.at("adam").at("beta2").get<double>();
    c.adam.eps = j.at("adam").at("eps").get<double>();
    c.gammas.entropy = j.at("gamma1").get<double>();
    c.gammas.diversity = j.at("gamma2").get<double>();
    c.gammas.selfsup = j.at("gamma3").get<double>();
    c.beta_imp = j.at("beta_imp").get<double>();
    c.src_imp_weight = j.at("src_imp_weight").get<double>();
    c.label_smoothing = j.at("label_smoothing").get<double>();
    c.mask.ratio = j.at("mask").at("ratio").get<double>();
    c.mask.n_blocks = j.at("mask").at("n_blocks").get<std::size_t>();
    c.mask.rng_seed = j.at("mask").at("rng_seed").get<std::uint64_t>();
    c.bn_update_during_adapt = j.at("bn_update_during_adapt").get<bool>();
    c.literal_eq16_17 = j.at("literal_eq16_17").get<bool>();
    c.lambda_adapt_schedule = j.at("lambda_adapt_schedule").get<bool>();
    return c;
}

void require_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : obj.items()) {
        bool known = false;
        for (const char* allowed : keys) known = known || k == allowed;
        if (!known) throw ConfigError(where + ": unknown key '" + k + "'");
    }
    for (const char* k : keys) {
        if (!obj.contains(k)) throw ConfigError(where + ": missing key '" + std::string(k) + "'");
    }
}

// JSON literals built in code are signed even when positive.
bool non_negative_integer(const json& val) {
    return val.is_number_unsigned() || (val.is_number_integer() && val.get<std::int64_t>() >= 0);
}

bool same_kind(const json& def, const json& val) {
    if (def.is_number_float()) return val.is_number();
    if (def.is_number_unsigned()) return non_negative_integer(val);
    if (def.is_number_integer()) return val.is_number_integer();
    if (def.is_boolean()) return val.is_boolean();
    if (def.is_string()) return val.is_string();
    if (def.is_array()) return val.is_array();
    if (def.is_object()) return val.is_object();
    return false;
}

const char* kind_name(const json& def) {
    if (def.is_number_float()) return "a number";
    if (def.is_number_unsigned()) return "a non-negative integer";
    if (def.is_number_integer()) return "an integer";
    if (def.is_boolean()) return "a boolean";
    if (def.is_string()) return "a string";
    if (def.is_array()) return "an array";
    return "an object";
}

void merge_strict(json& base, const json& user, const std::string& path) {
    if (!user.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
    for (const auto& [k, v] : user.items()) {
        const std::string where = path.empty() ? k : path + "." + k;
        if (!base.contains(k)) throw ConfigError("unknown config key '" + where + "'");
        json& slot = base[k];
        if (!same_kind(slot, v)) throw ConfigError("config key '" + where + "' must be " + kind_name(slot));
        if (slot.is_object()) {
            merge_strict(slot, v, where);
        } else if (slot.is_number_unsigned()) {
            slot = v.get<std::uint64_t>();
        } else {
            slot = v;
        }
    }
}

ClassArchetype archetype_from(const json& j, std::size_t i) {
    const std::string where = "data.archetypes[" + std::to_string(i) + "]";
    require_keys(j, {"frequency", "waveform", "amplitude"}, where);
    if (!j.at("frequency").is_number() || !j.at("amplitude").is_number() || !j.at("waveform").is_string()) {
        throw ConfigError(where + ": frequency/amplitude must be numbers and waveform a string");
    }
    try {
        return {j.at("frequency").get<double>(), waveform_from_name(j.at("waveform").get<std::string>()),
                j.at("amplitude").get<double>()};
    } catch (const DomainError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

void validate(const ExperimentConfig& c) {
    const auto& d = c.data;
    if (d.n < 2) throw ConfigError("data.n must be at least 2");
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1)");
    if (!(d.shift_knob >= 0.0 && d.shift_knob <= 1.0)) throw ConfigError("data.shift_knob must lie in [0, 1]");
    if (d.archetypes.size() < c.model.classes) throw ConfigError("model.classes exceeds the number of archetypes");
    if (c.model.in_channels < 1 || c.model.length < 2) throw ConfigError("model dimensions out of range");
    if (c.model.classes < 2) throw ConfigError("model.classes must be at least 2");
    if (c.eval.bins < 2) throw ConfigError("eval.bins must be at least 2");
    if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
    for (std::size_t i = 0; i < c.seeds.size(); ++i)
        for (std::size_t j = i + 1; j < c.seeds.size(); ++j)
            if (c.seeds[i] == c.seeds[j]) throw ConfigError("seeds must be distinct");
    try {
        c.pretrain.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("pretrain: ") + e.what());
    }
    try {
        c.adapt.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("adapt: ") + e.what());
    }
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
    json arch = json::array();
    for (const auto& a : data.archetypes) {
        arch.push_back({{"frequency", a.frequency}, {"waveform", waveform_name(a.waveform)}, {"amplitude", a.amplitude}});
    }
    return {{"data",
             {{"n", data.n},
              {"train_fraction", data.train_fraction},
              {"split_seed", data.split_seed},
              {"shift_knob", data.shift_knob},
              {"archetypes", arch},
              {"source", {{"shift", shift_json(data.source_shift)}, {"seed", data.source_seed}}},
              {"target", {{"shift", shift_json(data.target_shift)}, {"seed", data.target_seed}}}}},
            {"model", {{"in_channels", model.in_channels}, {"classes", model.classes}, {"length", model.length}}},
            {"pretrain", train_section_json(pretrain)},
            {"adapt", train_section_json(adapt)},
            {"eval", {{"bins", eval.bins}, {"write_csv", eval.write_csv}}},
            {"seeds", seeds}};
}

nlohmann::json default_config_json() {
    return ExperimentConfig{}.to_json();
}

ExperimentConfig parse_config(const nlohmann::json& user) {
    json doc = default_config_json();
    merge_strict(doc, user, "");
    ExperimentConfig c;
    try {
        const auto& d = doc.at("data");
        c.data.n = d.at("n").get<std::size_t>();
        c.data.train_fraction = d.at("train_fraction").get<double>();
        c.data.split_seed = d.at("split_seed").get<std::uint64_t>();
        c.data.shift_knob = d.at("shift_knob").get<double>();
        c.data.archetypes.clear();
        for (std::size_t i = 0; i < d.at("archetypes").size(); ++i) {
            c.data.archetypes.push_back(archetype_from(d.at("archetypes")[i], i));
        }
        c.data.source_shift = shift_from(d.at("source").at("shift"));
        c.data.source_seed = d.at("source").at("seed").get<std::uint64_t>();
        c.data.target_shift = shift_from(d.at("target").at("shift"));
        c.data.target_seed = d.at("target").at("seed").get<std::uint64_t>();
        const auto& m = doc.at("model");
        c.model = {m.at("in_channels").get<std::size_t>(), m.at("classes").get<std::size_t>(),
                   m.at("length").get<std::size_t>()};
        c.pretrain = train_from(doc.at("pretrain"));
        c.adapt = train_from(doc.at("adapt"));
        c.eval.bins = doc.at("eval").at("bins").get<std::size_t>();
        c.eval.write_csv = doc.at("eval").at("write_csv").get<bool>();
        c.seeds.clear();
        for (const auto& s : doc.at("seeds")) {
            if (!non_negative_integer(s)) throw ConfigError("seeds must be non-negative integers");
            c.seeds.push_back(s.get<std::uint64_t>());
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    validate(c);
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    json doc;
    try {
        doc = json::parse(bytes.begin(), bytes.end());
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not KEY=VALUE");
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_null() && !node->is_object()) throw ConfigError("override key '" + key + "' crosses a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

// ---- datasets -------------------------------------------------------------------

DomainSplits make_datasets(const ExperimentConfig& cfg) {
    const auto& m = cfg.model;
    const Dataset src = generate_domain(cfg.data.source_spec(), cfg.data.n, m.in_channels, m.length, m.classes);
    const Dataset tgt = generate_domain(cfg.data.target_spec(), cfg.data.n, m.in_channels, m.length, m.classes);
    auto [s_train, s_test] = split_dataset(src, cfg.data.train_fraction, cfg.data.split_seed);
    auto [t_train, t_test] = split_dataset(tgt, cfg.data.train_fraction, cfg.data.split_seed);
    return {std::move(s_train), std::move(s_test), std::move(t_train), std::move(t_test)};
}

void save_datasets(const DomainSplits& d, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_dataset(d.source_train, dir / "source_train.tsd");
    save_dataset(d.source_test, dir / "source_test.tsd");
    save_dataset(d.target_train, dir / "target_train.tsd");
    save_dataset(d.target_test, dir / "target_test.tsd");
}

DomainSplits load_datasets(const std::filesystem::path& dir) {
    return {load_dataset(dir / "source_train.tsd"), load_dataset(dir / "source_test.tsd"),
            load_dataset(dir / "target_train.tsd"), load_dataset(dir / "target_test.tsd")};
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    io::write_text_atomic(path, doc.dump(2) + "\n");
}

// ---- scenario ---------------------------------------------------------------------

SeedResult run_seed(const ExperimentConfig& cfg, const DomainSplits& data, std::uint64_t seed,
                    const std::filesystem::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t k = cfg.model.classes;
    const ModelBundle init = init_bundle(cfg.model.in_channels, k, mix_seed(seed, 0x1417ull));

    TrainConfig pc = cfg.pretrain;
    pc.seed = seed;
    pc.variant = Variant::mapu;
    auto [soft, soft_pre] = pretrain(init, data.source_train, pc);
    pc.variant = Variant::emapu;
    auto [evd, evd_pre] = pretrain(init, data.source_train, pc);

    const Predictions soft_src = predict(soft, data.source_test);
    const Predictions soft_tgt = predict(soft, data.target_test);
    const Predictions evd_src = predict(evd, data.source_test);
    const Predictions evd_tgt = predict(evd, data.target_test);
    const Evaluation src_only_soft = evaluate(soft_tgt, Head::softmax, k, cfg.eval.bins);
    const Evaluation src_only_evd = evaluate(evd_tgt, Head::evidential, k, cfg.eval.bins);
    const Evaluation soft_on_source = evaluate(soft_src, Head::softmax, k, cfg.eval.bins);
    const Evaluation evd_on_source = evaluate(evd_src, Head::evidential, k, cfg.eval.bins);
    soft_pre.metrics = {{"source_test", to_json(soft_on_source)}, {"target_test", to_json(src_only_soft)}};
    evd_pre.metrics = {{"source_test", to_json(evd_on_source)}, {"target_test", to_json(src_only_evd)}};

    TrainConfig ac = cfg.adapt;
    ac.seed = seed;
    auto [soft_ad, soft_ad_rep] = adapt_mapu(soft, data.target_train, ac);
    auto [evd_ad, evd_ad_rep] = adapt_emapu(evd, data.target_train, ac);
    const Evaluation mapu_eval = evaluate(predict(soft_ad, data.target_test), Head::softmax, k, cfg.eval.bins);
    const Evaluation emapu_eval = evaluate(predict(evd_ad, data.target_test), Head::evidential, k, cfg.eval.bins);
    soft_ad_rep.metrics = {{"target_test", to_json(mapu_eval)}};
    evd_ad_rep.metrics = {{"target_test", to_json(emapu_eval)}};

    SeedResult r;
    r.seed = seed;
    r.source_only_mf1 = src_only_soft.macro_f1;
    r.mapu_mf1 = mapu_eval.macro_f1;
    r.emapu_mf1 = emapu_eval.macro_f1;
    r.softmax_ece = src_only_soft.calibration.ece;
    r.evidential_ece = src_only_evd.calibration.ece;
    r.softmax_brier = src_only_soft.calibration.brier;
    r.evidential_brier = src_only_evd.calibration.brier;
    r.softmax_entropy_gap = src_only_soft.entropy.mean - soft_on_source.entropy.mean;
    r.evidential_entropy_gap = src_only_evd.entropy.mean - evd_on_source.entropy.mean;

    r.report = {{"version", version_string()},
                {"seed", seed},
                {"config", cfg.to_json()},
                {"runs",
                 {{"pretrain_mapu", soft_pre.to_json()},
                  {"pretrain_emapu", evd_pre.to_json()},
                  {"adapt_mapu", soft_ad_rep.to_json()},
                  {"adapt_emapu", evd_ad_rep.to_json()}}},
                {"summary",
                 {{"macro_f1", {{"source_only", r.source_only_mf1}, {"mapu", r.mapu_mf1}, {"emapu", r.emapu_mf1}}},
                  {"calibration",
                   {{"softmax", {{"ece", r.softmax_ece}, {"brier", r.softmax_brier}}},
                    {"evidential", {{"ece", r.evidential_ece}, {"brier", r.evidential_brier}}}}},
                  {"entropy_gap",
                   {{"softmax", r.softmax_entropy_gap}, {"evidential", r.evidential_entropy_gap}}}}}};
    r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!dir.empty()) {
        std::filesystem::create_directories(dir);
        write_json(dir / "report.json", r.report);
        save_checkpoint(soft, dir / "pretrain_mapu.mdl");
        save_checkpoint(evd, dir / "pretrain_emapu.mdl");
        save_checkpoint(soft_ad, dir / "adapt_mapu.mdl");
        save_checkpoint(evd_ad, dir / "adapt_emapu.mdl");
        if (cfg.eval.write_csv) {
            io::write_text_atomic(dir / "calibration_softmax.csv", calibration_csv(src_only_soft.calibration));
            io::write_text_atomic(dir / "calibration_evidential.csv", calibration_csv(src_only_evd.calibration));
            io::write_text_atomic(dir / "entropy_source.csv",
                                  entropy_histogram_csv({soft_on_source.entropy, evd_on_source.entropy}, k));
            io::write_text_atomic(dir / "entropy_target.csv",
                                  entropy_histogram_csv({src_only_soft.entropy, src_only_evd.entropy}, k));
        }
        write_json(dir / "timing.json",
                   {{"seed", seed},
                    {"wall_seconds", r.wall_seconds},
                    {"runs",
                     {{"pretrain_mapu", soft_pre.wall_seconds},
                      {"pretrain_emapu", evd_pre.wall_seconds},
                      {"adapt_mapu", soft_ad_rep.wall_seconds},
                      {"adapt_emapu", evd_ad_rep.wall_seconds}}}});
    }
    return r;
}

namespace {

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

// Sample standard deviation (n - 1); zero for a single run.
MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

ScenarioResult run_scenario(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::size_t workers) {
    std::filesystem::create_directories(out_dir);
    const DomainSplits data = make_datasets(cfg);
    save_datasets(data, out_dir / "data");

    ScenarioResult result;
    result.seeds.resize(cfg.seeds.size());
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            try {
                const auto seed = cfg.seeds[i];
                result.seeds[i] = run_seed(cfg, data, seed, out_dir / ("seed_" + std::to_string(seed)));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(workers, cfg.seeds.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    auto collect = [&](double SeedResult::*field) {
        std::vector<double> v;
        for (const auto& s : result.seeds) v.push_back(s.*field);
        return mean_std(v);
    };
    const std::pair<const char*, double SeedResult::*> rows[] = {
        {"source-only", &SeedResult::source_only_mf1}, {"mapu", &SeedResult::mapu_mf1}, {"emapu", &SeedResult::emapu_mf1}};

    json table = json::array();
    std::ostringstream csv;
    csv << "variant,mf1_mean,mf1_std,runs\n";
    for (const auto& [name, field] : rows) {
        const MeanStd ms = collect(field);
        table.push_back({{"variant", name}, {"mf1_mean", ms.mean}, {"mf1_std", ms.std}, {"runs", cfg.seeds.size()}});
        csv << name << ',' << fixed2(100.0 * ms.mean) << ',' << fixed2(100.0 * ms.std) << ',' << cfg.seeds.size()
            << '\n';
    }
    json per_seed = json::array();
    for (const auto& s : result.seeds) {
        json row = s.report.at("summary");
        row["seed"] = s.seed;
        per_seed.push_back(row);
    }
    auto mean_of = [&](double SeedResult::*f) { return collect(f).mean; };
    result.aggregate = {{"version", version_string()},
                        {"config", cfg.to_json()},
                        {"macro_f1", table},
                        {"calibration",
                         {{"softmax", {{"ece", mean_of(&SeedResult::softmax_ece)}, {"brier", mean_of(&SeedResult::softmax_brier)}}},
                          {"evidential",
                           {{"ece", mean_of(&SeedResult::evidential_ece)}, {"brier", mean_of(&SeedResult::evidential_brier)}}}}},
                        {"entropy_gap",
                         {{"softmax", mean_of(&SeedResult::softmax_entropy_gap)},
                          {"evidential", mean_of(&SeedResult::evidential_entropy_gap)}}},
                        {"seeds", per_seed}};
    write_json(out_dir / "aggregate.json", result.aggregate);
    io::write_text_atomic(out_dir / "aggregate.csv", csv.str());

    json timing = {{"workers", n_threads}, {"seeds", json::array()}};
    for (const auto& s : result.seeds) timing["seeds"].push_back({{"seed", s.seed}, {"wall_seconds", s.wall_seconds}});
    write_json(out_dir / "timing.json", timing);
    return result;
}

}  // namespace mapu
