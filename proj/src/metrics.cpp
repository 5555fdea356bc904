#include "mapu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mapu/losses.hpp"

namespace mapu {

std::vector<int> argmax_rows(const Tensor& probs) {
    if (probs.rank() != 2) throw ShapeError("argmax_rows: expected [n, K]");
    const std::size_t rows = probs.dim(0), k = probs.dim(1);
    auto p = probs.data();
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = p.data() + r * k;
        out[r] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

double accuracy(std::span<const int> pred, std::span<const int> truth) {
    if (pred.empty() || pred.size() != truth.size()) throw ShapeError("accuracy: empty or mismatched inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
    if (pred.empty() || pred.size() != truth.size()) throw ShapeError("macro_f1: empty or mismatched inputs");
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred[i], t = truth[i];
        if (p < 0 || t < 0 || static_cast<std::size_t>(p) >= classes || static_cast<std::size_t>(t) >= classes) {
            throw DomainError("macro_f1: label outside [0, K)");
        }
        if (p == t) {
            ++tp[static_cast<std::size_t>(p)];
        } else {
            ++fp[static_cast<std::size_t>(p)];
            ++fn[static_cast<std::size_t>(t)];
        }
    }
    double total = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        if (tp[c] + fn[c] == 0) continue;  // class absent from truth
        total += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        ++present;
    }
    return total / static_cast<double>(present);
}

CalibrationReport calibration(const Tensor& probs, std::span<const int> truth, std::size_t bins) {
    if (bins < 2) throw DomainError("calibration: need at least two bins");
    check_probability_rows("calibration", probs);
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    if (truth.size() != n) throw ShapeError("calibration: label count mismatch");
    auto p = probs.data();

    CalibrationReport rep;
    rep.bins.resize(bins);
    std::vector<double> conf_sum(bins, 0.0), hit_sum(bins, 0.0);
    double brier = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = p.data() + i * k;
        const auto best = static_cast<std::size_t>(std::max_element(row, row + k) - row);
        const double conf = row[best];
        const auto y = static_cast<std::size_t>(truth[i]);
        if (y >= k) throw DomainError("calibration: label outside [0, K)");
        const auto b = std::min(static_cast<std::size_t>(conf * static_cast<double>(bins)), bins - 1);
        ++rep.bins[b].count;
        conf_sum[b] += conf;
        hit_sum[b] += best == y ? 1.0 : 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double d = row[j] - (j == y ? 1.0 : 0.0);
            brier += d * d;
        }
    }
    rep.brier = brier / static_cast<double>(n);
    for (std::size_t b = 0; b < bins; ++b) {
        auto& bin = rep.bins[b];
        bin.lower = static_cast<double>(b) / static_cast<double>(bins);
        bin.upper = static_cast<double>(b + 1) / static_cast<double>(bins);
        if (bin.count == 0) continue;
        const double c = static_cast<double>(bin.count);
        bin.mean_confidence = conf_sum[b] / c;
        bin.accuracy = hit_sum[b] / c;
        const double gap = std::abs(bin.accuracy - bin.mean_confidence);
        rep.ece += c / static_cast<double>(n) * gap;
        rep.mce = std::max(rep.mce, gap);
    }
    return rep;
}

std::vector<double> row_entropies(const Tensor& probs) {
    check_probability_rows("row_entropies", probs);
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    auto p = probs.data();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const double v = p[i * k + j];
            if (v > 0.0) out[i] -= v * std::log(v);
        }
    return out;
}

EntropyStats entropy_stats(const Tensor& probs) {
    auto h = row_entropies(probs);
    const double top = std::log(static_cast<double>(probs.dim(1)));
    EntropyStats s;
    s.histogram.assign(kEntropyHistogramBins, 0);
    double total = 0.0;
    for (double v : h) {
        total += v;
        auto b = static_cast<std::size_t>(v / top * static_cast<double>(kEntropyHistogramBins));
        ++s.histogram[std::min(b, kEntropyHistogramBins - 1)];
    }
    s.mean = total / static_cast<double>(h.size());
    std::sort(h.begin(), h.end());
    const std::size_t m = h.size() / 2;
    s.median = h.size() % 2 ? h[m] : 0.5 * (h[m - 1] + h[m]);
    return s;
}

EntropySummary entropy_summary(const Tensor& softmax_probs, const Tensor& evd_probs) {
    return {entropy_stats(softmax_probs), entropy_stats(evd_probs)};
}

nlohmann::json to_json(const CalibrationReport& r) {
    auto bins = nlohmann::json::array();
    for (const auto& b : r.bins) {
        bins.push_back({{"lower", b.lower},
                        {"upper", b.upper},
                        {"count", b.count},
                        {"mean_confidence", b.mean_confidence},
                        {"accuracy", b.accuracy}});
    }
    return {{"ece", r.ece}, {"mce", r.mce}, {"brier", r.brier}, {"brier_convention", "sum over classes, range [0, 2]"},
            {"bins", bins}};
}

nlohmann::json to_json(const EntropyStats& s) {
    return {{"mean", s.mean}, {"median", s.median}, {"histogram", s.histogram}};
}

std::string calibration_csv(const CalibrationReport& r) {
    std::ostringstream os;
    os.precision(17);
    os << "lower,upper,count,mean_confidence,accuracy\n";
    for (const auto& b : r.bins) {
        os << b.lower << ',' << b.upper << ',' << b.count << ',' << b.mean_confidence << ',' << b.accuracy << '\n';
    }
    return os.str();
}

std::string entropy_histogram_csv(const EntropySummary& s, std::size_t classes) {
    std::ostringstream os;
    os.precision(17);
    const double top = std::log(static_cast<double>(classes));
    os << "lower,upper,softmax_count,evidential_count\n";
    for (std::size_t b = 0; b < kEntropyHistogramBins; ++b) {
        os << top * static_cast<double>(b) / kEntropyHistogramBins << ','
           << top * static_cast<double>(b + 1) / kEntropyHistogramBins << ',' << s.softmax.histogram[b] << ','
           << s.evidential.histogram[b] << '\n';
    }
    return os.str();
}

}  // namespace mapu
