#pragma once

// Synthetic domain-shifted sensor signals and the TSD1 dataset container.
//
// TSD1 layout, little-endian:
//   "TSD1" | u32 version = 1 | u64 n | u32 C | u32 L | u32 K    (28 bytes)
//   n x u32 labels
//   n*C*L x binary32 samples, ordered [sample][channel][time]

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mapu/tensor.hpp"

namespace mapu {

inline constexpr std::size_t kDatasetHeaderBytes = 28;

struct Dataset {
    std::size_t n = 0;
    std::size_t channels = 0;
    std::size_t length = 0;
    std::size_t classes = 0;
    std::vector<float> samples;  // [n, C, L]
    std::vector<int> labels;     // [n]

    /// Throws DomainError/ShapeError when the invariants are broken.
    void validate() const;

    /// Samples at `indices`, widened to float64, as [B, C, L].
    Tensor batch(std::span<const std::size_t> indices) const;
    std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
    Dataset subset(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> class_counts() const;
};

enum class Waveform { sine, square, chirp };
const char* waveform_name(Waveform w);
Waveform waveform_from_name(const std::string& name);

/// One class's clean signal: cycles per window, waveform family, peak amplitude.
struct ClassArchetype {
    double frequency = 4.0;
    Waveform waveform = Waveform::sine;
    double amplitude = 1.0;
};

struct ShiftParams {
    double noise_sigma = 0.1;
    double amplitude_scale = 1.0;
    double phase_jitter = 3.141592653589793;  // phase ~ U[-jitter, jitter]
    double time_warp = 1.0;                   // frequency multiplier, in [0.5, 2]
    double mix_angle = 0.0;                   // channel 0/1 mixing, radians
};

/// Linear interpolation of every shift parameter; knob in [0, 1].
ShiftParams interpolate_shift(const ShiftParams& from, const ShiftParams& to, double knob);

struct DomainSpec {
    std::vector<ClassArchetype> archetypes;
    ShiftParams shift;
    std::uint64_t seed = 0;
};

/// Five archetypes spanning the three waveform families.
std::vector<ClassArchetype> default_archetypes();

/// Balanced labels (sample i has class i mod K); each sample is its class's
/// archetype under the shift transforms plus noise truncated at 6 sigma.
/// Deterministic in spec.seed.
Dataset generate_domain(const DomainSpec& spec, std::size_t n, std::size_t channels, std::size_t length,
                        std::size_t classes);

std::vector<char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(const std::vector<char>& bytes);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Stratified split: round(fraction * count) samples of each class go to the
/// first part. Deterministic in seed; parts keep the original sample order.
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double train_fraction, std::uint64_t seed);

}  // namespace mapu
