#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mapu/tensor.hpp"

namespace mapu {

/// Row-wise argmax of [n, K] probabilities; ties go to the lowest index.
std::vector<int> argmax_rows(const Tensor& probs);

double accuracy(std::span<const int> pred, std::span<const int> truth);

/// Unweighted mean of per-class F1 over the classes that occur in `truth`.
/// Classes seen only in `pred` are skipped.
double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t classes);

struct CalibrationBin {
    double lower = 0.0;
    double upper = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

/// Equal-width bins on the max probability. Brier sums over classes, so it
/// lies in [0, 2].
struct CalibrationReport {
    std::vector<CalibrationBin> bins;
    double ece = 0.0;
    double mce = 0.0;
    double brier = 0.0;
};

CalibrationReport calibration(const Tensor& probs, std::span<const int> truth, std::size_t bins = 10);

struct EntropyStats {
    double mean = 0.0;
    double median = 0.0;
    std::vector<std::size_t> histogram;  // 20 equal bins on [0, ln K]
};

struct EntropySummary {
    EntropyStats softmax;
    EntropyStats evidential;
};

inline constexpr std::size_t kEntropyHistogramBins = 20;

std::vector<double> row_entropies(const Tensor& probs);
EntropyStats entropy_stats(const Tensor& probs);
EntropySummary entropy_summary(const Tensor& softmax_probs, const Tensor& evd_probs);

nlohmann::json to_json(const CalibrationReport& r);
nlohmann::json to_json(const EntropyStats& s);
std::string calibration_csv(const CalibrationReport& r);
/// One row per histogram bin with softmax and evidential counts.
std::string entropy_histogram_csv(const EntropySummary& s, std::size_t classes);

}  // namespace mapu
